// Operating characteristics of the six published designs.
//
// ```text
// cargo run --release --example evaluate_table1
// ```

use std::path::PathBuf;

use swgs::config::{load_design, load_scenario};
use swgs::oc::{summarize_with, DesignEvaluator};
use swgs::optimize::score_design;

pub struct Row {
    pub name: &'static str,
    pub type_i: f64,
    pub power: f64,
    pub enm_null: f64,
    pub enm_alt: f64,
    pub max_measurements: f64,
    pub objective: f64,
}

const CASES: [(&str, &str, [f64; 3]); 6] = [
    ("tds1-equal", "tds1", [1.0 / 3.0; 3]),
    ("tds1-null", "tds1", [0.5, 0.0, 0.5]),
    ("tds1-alt", "tds1", [0.0, 0.5, 0.5]),
    ("tds2-equal", "tds2", [1.0 / 3.0; 3]),
    ("tds2-null", "tds2", [0.5, 0.0, 0.5]),
    ("tds2-alt", "tds2", [0.0, 0.5, 0.5]),
];

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn run_example() -> swgs::Result<Vec<Row>> {
    let mut rows = Vec::new();
    for (name, scenario, weights) in CASES {
        let scenario = load_scenario(configs().join(format!("{scenario}.toml")))?;
        let design = load_design(configs().join("designs").join(format!("{name}.toml")))?;
        let ev = DesignEvaluator::new(&design)?;
        let oc = summarize_with(&ev, &scenario.spec)?;
        let score = score_design(&ev, scenario.spec.delta)?;
        rows.push(Row {
            name,
            type_i: oc.type_i,
            power: oc.power,
            enm_null: oc.enm_null,
            enm_alt: oc.enm_alt,
            max_measurements: oc.max_measurements,
            objective: score.objective(&weights),
        });
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    println!(
        "{:<12} {:>8} {:>8} {:>9} {:>9} {:>6} {:>9}",
        "design", "P(0)", "P(δ)", "ENM(0)", "ENM(δ)", "max N", "O"
    );
    for r in run_example()? {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>9.1} {:>9.1} {:>6} {:>9.1}",
            r.name, r.type_i, r.power, r.enm_null, r.enm_alt, r.max_measurements, r.objective
        );
    }
    Ok(())
}
