// Adjusted inference after a trial stops.
//
// The same observed statistic is analysed naively and under the stage-wise
// ordering, for an early efficacy stop and for a result at the final
// analysis.

use swgs::analysis::{Analyzer, InferenceReport};
use swgs::config::load_design;

pub fn run_example() -> swgs::Result<Vec<(usize, f64, InferenceReport)>> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/designs/tds1-equal.toml");
    let design = load_design(path)?;
    let analyzer = Analyzer::new(&design)?;
    let mut out = Vec::new();
    for (gamma, z) in [(1, 2.6), (2, 2.1), (2, 1.2)] {
        let result = analyzer.result(gamma, z)?;
        out.push((gamma, z, analyzer.report(&result, 0.05)?));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    for (gamma, z, r) in run_example()? {
        println!("stopped at analysis {gamma} with z = {z}");
        println!("  naive:     estimate {:+.4}  p {:.4}  lower bound {:+.4}", r.estimate_naive, r.p_naive, r.ci_lower_naive);
        println!("  stagewise: estimate {:+.4}  p {:.4}  lower bound {:+.4}", r.estimate_so, r.p_so, r.ci_lower_so);
    }
    Ok(())
}
