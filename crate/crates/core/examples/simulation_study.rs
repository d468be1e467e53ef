// Bias, RMSE and coverage of the naive and adjusted estimators by
// simulating complete trials.
//
// ```text
// cargo run --release --example simulation_study -- 10000
// ```

use swgs::config::load_design;
use swgs::sim::{replicate_study, ReplicationMetrics, StudyConfig};

pub fn run_example(replicates: usize) -> swgs::Result<Vec<ReplicationMetrics>> {
    let design = load_design(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/designs/tds1-equal.toml"))?;
    let taus = [-0.1, 0.0, 0.1, 0.2, 0.3];
    replicate_study(&design, &taus, &StudyConfig::new(replicates, 2024, 0.05))
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    let replicates = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("replicates must be an integer"))
        .unwrap_or(2000);
    println!("{:>6} {:>10} {:>10} {:>9} {:>9} {:>8} {:>8}", "tau", "bias N", "bias SO", "rmse N", "rmse SO", "cov N", "cov SO");
    for m in run_example(replicates)? {
        println!(
            "{:>6.2} {:>10.5} {:>10.5} {:>9.5} {:>9.5} {:>8.4} {:>8.4}",
            m.tau, m.bias_naive, m.bias_so, m.rmse_naive, m.rmse_so, m.coverage_naive, m.coverage_so
        );
    }
    Ok(())
}
