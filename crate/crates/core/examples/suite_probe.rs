fn main() {
    let start = std::time::Instant::now();
    let outcomes = awpsp::theory::run_suite(42, &[]).unwrap();
    for o in &outcomes {
        println!("{} {} | {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.summary);
    }
    println!("elapsed: {:?}", start.elapsed());
}
