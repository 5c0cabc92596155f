//! End-to-end smoke drive: config -> model -> generated data -> training
//! step -> dataset file round trip. Prints one line per stage.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use setonet::branch::{BranchVariant, SensorBatch};
use setonet::config::{model_for, BenchmarkId};
use setonet::data::{generate_dataset, read_dataset, write_dataset, DatasetSplit, Queries};
use setonet::model::QueryLocs;
use setonet::nn::Params;

fn main() -> setonet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = model_for(BenchmarkId::Darcy, BranchVariant::Key, &mut rng)?;
    println!("model: darcy/key, {} parameters", model.param_count());

    let ds = generate_dataset(
        &setonet::data::BenchmarkCard::for_benchmark(BenchmarkId::Derivative),
        DatasetSplit::Train,
        4,
        7,
    )?;
    println!(
        "data: derivative train, {} samples, {} sensors, {} queries",
        ds.targets.dim().0,
        ds.values.dim().1,
        ds.targets.dim().1
    );

    let mut deriv = model_for(BenchmarkId::Derivative, BranchVariant::Key, &mut rng)?;
    let sets: Vec<_> = (0..4).map(|i| ds.sensor_set(i)).collect::<setonet::Result<_>>()?;
    let batch = SensorBatch::from_sets(&sets)?;
    let queries = match &ds.queries {
        Queries::Shared(q) => QueryLocs::Shared(q.clone()),
        Queries::PerSample(q) => QueryLocs::PerSample(q.clone()),
    };
    let fwd = deriv.forward_batch(&batch, &queries)?;
    let resid = &fwd.pred - &ds.targets;
    let n = resid.len() as f64;
    let mse = resid.iter().map(|r| r * r).sum::<f64>() / n;
    let d_pred: Array3<f64> = resid.mapv(|r| 2.0 * r / n);
    deriv.zero_grads();
    deriv.backward(&fwd, &d_pred)?;
    println!("step: mse {mse:.6}, grad norm {:.6}", deriv.grad_norm());

    let path = std::env::temp_dir().join("setonet-smoke.bin");
    write_dataset(&ds, &path)?;
    let back = read_dataset(&path)?;
    assert_eq!(back.targets, ds.targets);
    assert_eq!(back.values, ds.values);
    println!("io: round trip ok ({})", path.display());
    std::fs::remove_file(&path).ok();
    let _ = std::fs::remove_file(path.with_extension("bin.meta.json"));
    Ok(())
}
