//! Set-based neural operators with permutation-invariant branch encoders.
//!
//! The crate is organized around one pipeline: sample sensor sets from a
//! function family (`data`), encode them into branch coefficients
//! (`branch`), evaluate a trunk basis at query points and synthesize the
//! output field (`model`), and fit the whole thing with Adam (`train`).
//! `uat` holds a constructive verifier for the universal-approximation
//! argument behind the key-value encoder.

pub mod branch;
pub mod config;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod pe;
pub mod sensors;
pub mod trunk;

pub use error::{Result, SetONetError};
