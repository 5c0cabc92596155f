fn main() {
    println!("setonet");
}
