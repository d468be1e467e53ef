// Cross-entropy search for an optimal design.
//
// Runs the small three-cluster scenario by default. Pass a scenario file
// and a per-iteration sample size to search something larger:
//
// ```text
// cargo run --release --example optimize_design -- configs/tds1.toml 80000
// ```

use std::path::PathBuf;

use swgs::config::load_scenario;
use swgs::optimize::{ce_optimize, CeConfig, CeOutcome};

pub fn run_example(scenario: Option<PathBuf>, n_samples: Option<usize>) -> swgs::Result<CeOutcome> {
    let path = scenario
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs/tiny.toml"));
    let scenario = load_scenario(path)?;
    let mut config = CeConfig::for_scenario(&scenario.spec);
    if let Some(n) = n_samples {
        config.n_samples = n;
    }
    ce_optimize(&scenario.spec, &config)
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    let mut args = std::env::args().skip(1);
    let scenario = args.next().map(PathBuf::from);
    let n = args.next().map(|s| s.parse().expect("sample size must be an integer"));
    let out = run_example(scenario, n)?;
    for row in &out.trace {
        println!(
            "iteration {:>3}  elite quantile {:>10.3}  best {:>10.3}",
            row.iteration, row.elite_quantile, row.best_objective
        );
    }
    let d = &out.design;
    println!("m = {}", d.m);
    println!("S = {:?}", d.allocation.switch_times());
    println!("f = {:?}", d.boundaries.futility_bounds());
    println!("e = {:?}", d.boundaries.efficacy_bounds());
    println!(
        "P(0) = {:.5}, P(δ) = {:.5}, ENM(0) = {:.2}, ENM(δ) = {:.2}, objective = {:.3}",
        out.oc.type_i, out.oc.power, out.oc.enm_null, out.oc.enm_alt, out.objective
    );
    println!("{} designs evaluated", out.evaluations);
    Ok(())
}
