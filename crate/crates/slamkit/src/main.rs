fn main() {
    println!("slamkit");
}
