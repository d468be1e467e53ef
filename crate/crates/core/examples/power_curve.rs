// Rejection probability, expected sample size and stopping distribution
// across a grid of treatment effects for a three-analysis design.

use swgs::config::load_design;
use swgs::oc::DesignEvaluator;

pub struct Point {
    pub tau: f64,
    pub power: f64,
    pub enm: f64,
    pub stopping: Vec<f64>,
}

pub fn run_example() -> swgs::Result<Vec<Point>> {
    let design = load_design(concat!(env!("CARGO_MANIFEST_DIR"), "/configs/designs/tds2-equal.toml"))?;
    let ev = DesignEvaluator::new(&design)?;
    let taus: Vec<f64> = (0..=8).map(|i| -0.08 + 0.05 * i as f64).collect();
    let power = ev.power_curve(&taus)?;
    taus.iter()
        .zip(power)
        .map(|(&tau, power)| {
            Ok(Point {
                tau,
                power,
                enm: ev.enm(tau)?,
                stopping: ev.stopping_distribution(tau)?,
            })
        })
        .collect()
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    println!("{:>6} {:>8} {:>8}  P(stop at 1, 2, 3)", "tau", "power", "ENM");
    for p in run_example()? {
        let stops: Vec<String> = p.stopping.iter().map(|s| format!("{s:.3}")).collect();
        println!("{:>6.2} {:>8.4} {:>8.1}  {}", p.tau, p.power, p.enm, stops.join(" "));
    }
    Ok(())
}
