use mpmice::benchmarks::*;
fn main() {
    let t0 = std::time::Instant::now();
    match run_benchmark("thermal_cavity", &BenchConfig::default()) {
        Ok(r) => println!("{}", format_report(&r)),
        Err(e) => println!("ERR: {e}"),
    }
    println!("elapsed {:?}", t0.elapsed());
}
