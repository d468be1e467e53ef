//! Batch command-line frontend: `evaluate`, `optimize`, `analyze`,
//! `simulate` and `table-a1`.
//!
//! Machine records are printed as `key=value` lines with 17 significant
//! digits. Artifacts (CSV files, design documents) and a `manifest.json`
//! listing them are written to `--out-dir` when one is given.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{Analyzer, TrialResult};
use crate::config::{design_to_toml, load_design, load_scenario, DesignDoc, DesignSummary};
use crate::error::{Error, Result};
use crate::model::ScenarioSpec;
use crate::mvnorm::{MvnIntegrator, DEFAULT_ABS_TOL};
use crate::oc::{check_consistent, summarize_with, Decision, DesignEvaluator};
use crate::optimize::{ce_optimize, score_design, CeConfig, CeOutcome};
use crate::sim::{replicate_study, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "swgs", version, about = "Group sequential stepped-wedge designs")]
pub struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true, env = "SWGS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Operating characteristics of a design under a scenario.
    Evaluate(EvaluateArgs),
    /// Cross-entropy search for the optimal design.
    Optimize(OptimizeArgs),
    /// Naive and stage-wise ordering inference for an observed result.
    Analyze(AnalyzeArgs),
    /// Replication study of bias, RMSE and coverage.
    Simulate(SimulateArgs),
    /// Probability that uniformly sampled switching times come out ordered.
    TableA1(TableArgs),
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Integrator seed (only used with four or more analyses).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub m_max: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub stall_window: Option<usize>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Objective weights `w1,w2,w3`, overriding the scenario file.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub design: PathBuf,
    /// 1-based index of the terminating analysis.
    #[arg(long)]
    pub gamma: usize,
    #[arg(long, conflicts_with = "tau_hat", required_unless_present = "tau_hat", allow_hyphen_values = true)]
    pub z: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tau_hat: Option<f64>,
    /// Information at the terminating analysis (default: the design's).
    #[arg(long, requires = "tau_hat")]
    pub info: Option<f64>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub design: PathBuf,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "-0.3:0.5:0.1", allow_hyphen_values = true)]
    pub tau_grid: String,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10,15,20")]
    pub c_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,10")]
    pub t_list: Vec<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Record of one command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_paths: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

struct Run {
    manifest: RunManifest,
    out_dir: Option<PathBuf>,
}

impl Run {
    fn new(command: &str, configs: &[&Path], seed: Option<u64>, out_dir: Option<&Path>) -> Result<Self> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            manifest: RunManifest {
                command: command.to_string(),
                config_paths: configs.iter().map(|p| p.display().to_string()).collect(),
                seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix: unix_now(),
                finished_unix: 0.0,
                outputs: Vec::new(),
            },
            out_dir: out_dir.map(Path::to_path_buf),
        })
    }

    fn write(&mut self, name: &str, contents: &[u8]) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.out_dir else {
            return Ok(None);
        };
        let path = dir.join(name);
        std::fs::write(&path, contents)?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(Some(path))
    }

    fn finish(mut self) -> Result<()> {
        if let Some(dir) = self.out_dir.clone() {
            self.manifest.finished_unix = unix_now();
            let path = dir.join("manifest.json");
            self.manifest.outputs.push(path.display().to_string());
            let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serialises");
            std::fs::write(path, json)?;
        }
        Ok(())
    }
}

/// `v` with 17 significant digits, trailing zeros removed.
pub fn fmt_f64(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..16).contains(&exp) {
        return format!("{v:.16e}");
    }
    let s = format!("{:.*}", (16 - exp).max(0) as usize, v);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    let items: Vec<String> = v.iter().map(T::to_string).collect();
    format!("[{}]", items.join(","))
}

struct Record<'a, W: Write> {
    out: &'a mut W,
}

impl<W: Write> Record<'_, W> {
    fn put(&mut self, key: &str, value: impl std::fmt::Display) -> Result<()> {
        writeln!(self.out, "{key}={value}")?;
        Ok(())
    }

    fn num(&mut self, key: &str, value: f64) -> Result<()> {
        self.put(key, fmt_f64(value))
    }
}

/// Parses `start:stop:step` (inclusive) or a comma-separated list.
pub fn parse_tau_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |msg: &str| Error::Parse {
        location: "--tau-grid".into(),
        message: msg.into(),
    };
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("not a number: {s}")));
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => spec.split(',').map(number).collect(),
        3 => {
            let (a, b, h) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
            if !(h > 0.0) || b < a {
                return Err(bad("expected start <= stop and step > 0"));
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            Ok((0..=n)
                .map(|i| {
                    let v = a + i as f64 * h;
                    (v * 1e12).round() / 1e12
                })
                .collect())
        }
        _ => Err(bad("expected start:stop:step or a comma-separated list")),
    }
}

fn psi_label(psi: Decision) -> u8 {
    psi.psi()
}

fn evaluate<W: Write>(args: &EvaluateArgs, out: &mut W) -> Result<i32> {
    let scenario = load_scenario(&args.scenario)?;
    let design = load_design(&args.design)?;
    check_consistent(&design, &scenario.spec)?;
    let mut run = Run::new(
        "evaluate",
        &[&args.scenario, &args.design],
        Some(args.seed),
        args.out_dir.as_deref(),
    )?;
    let ev = DesignEvaluator::new(&design)?
        .with_integrator(MvnIntegrator::new(DEFAULT_ABS_TOL, args.seed));
    let oc = summarize_with(&ev, &scenario.spec)?;
    let score = score_design(&ev, scenario.spec.delta)?;
    let spec = &scenario.spec;

    let mut rec = Record { out };
    rec.put("command", "evaluate")?;
    rec.put("scenario", args.scenario.display())?;
    rec.put("design", args.design.display())?;
    rec.num("type_i", oc.type_i)?;
    rec.num("power", oc.power)?;
    rec.num("enm_null", oc.enm_null)?;
    rec.num("enm_alt", oc.enm_alt)?;
    rec.num("max_measurements", oc.max_measurements)?;
    rec.num("m_sw", spec.m_sw)?;
    rec.num("enm_null_reduction", 1.0 - oc.enm_null / spec.m_sw)?;
    rec.num("enm_alt_reduction", 1.0 - oc.enm_alt / spec.m_sw)?;
    rec.num("objective", score.objective(&spec.weights))?;
    rec.num("penalized_objective", score.penalized(spec))?;
    rec.put("type_i_ok", oc.type_i_ok)?;
    rec.put("power_ok", oc.power_ok)?;
    rec.put("constraints_met", oc.constraints_met())?;

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["gamma", "psi", "tau", "probability"])?;
    for row in &oc.per_outcome {
        csv.write_record([
            row.gamma.to_string(),
            psi_label(row.psi).to_string(),
            fmt_f64(row.tau),
            fmt_f64(row.probability),
        ])?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    if let Some(p) = run.write("outcomes.csv", &bytes)? {
        rec.put("outcomes_csv", p.display())?;
    }
    run.finish()?;
    Ok(if oc.constraints_met() { 0 } else { 1 })
}

fn design_doc(outcome: &CeOutcome, name: Option<String>) -> DesignDoc {
    let mut doc = DesignDoc::from_design(&outcome.design, name);
    doc.summary = Some(DesignSummary {
        type_i: outcome.oc.type_i,
        power: outcome.oc.power,
        enm_null: outcome.oc.enm_null,
        enm_alt: outcome.oc.enm_alt,
        max_measurements: outcome.oc.max_measurements,
        objective: outcome.objective,
        penalized_objective: outcome.penalized_objective,
    });
    doc
}

/// CE settings from the scenario defaults and command-line overrides.
pub fn ce_config(spec: &ScenarioSpec, args: &OptimizeArgs) -> CeConfig {
    let mut cfg = CeConfig::for_scenario(spec);
    cfg.seed = args.seed;
    if let Some(v) = args.n_samples {
        cfg.n_samples = v;
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.m_max {
        cfg.m_max = v;
    }
    if let Some(v) = args.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = args.stall_window {
        cfg.stall_window = v;
    }
    if let Some(v) = args.smoothing {
        cfg.smoothing = v;
    }
    cfg
}

fn optimize<W: Write>(args: &OptimizeArgs, out: &mut W) -> Result<i32> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(w) = &args.weights {
        scenario.spec = ScenarioSpec::new(
            scenario.spec.clusters,
            scenario.spec.periods,
            scenario.spec.alpha,
            scenario.spec.beta,
            scenario.spec.delta,
            scenario.spec.vc,
            scenario.spec.m_sw,
            [w[0], w[1], w[2]],
            scenario.spec.schedule.clone(),
        )?;
    }
    let cfg = ce_config(&scenario.spec, args);
    let mut run = Run::new("optimize", &[&args.scenario], Some(args.seed), Some(&args.out_dir))?;
    let (outcome, code, failure) = match ce_optimize(&scenario.spec, &cfg) {
        Ok(o) => (Some(o), 0, None),
        Err(Error::Infeasible { best_objective, best }) => {
            (best.map(|b| *b), 1, Some(format!("no feasible design found (best penalized objective {best_objective})")))
        }
        Err(e) => return Err(e),
    };
    let mut rec = Record { out };
    rec.put("command", "optimize")?;
    rec.put("scenario", args.scenario.display())?;
    rec.put("seed", args.seed)?;
    rec.put("n_samples", cfg.n_samples)?;
    rec.num("rho", cfg.rho)?;
    rec.put("m_max", cfg.m_max)?;
    if let Some(msg) = &failure {
        rec.put("status", "infeasible")?;
        rec.put("message", msg)?;
    } else {
        rec.put("status", "ok")?;
    }
    if let Some(o) = &outcome {
        let d = &o.design;
        rec.put("m", d.m)?;
        rec.put("switch_times", fmt_list(d.allocation.switch_times()))?;
        rec.put("futility", fmt_list(&d.boundaries.futility_bounds().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>()))?;
        rec.put("efficacy", fmt_list(&d.boundaries.efficacy_bounds().iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>()))?;
        rec.num("objective", o.objective)?;
        rec.num("penalized_objective", o.penalized_objective)?;
        rec.num("type_i", o.oc.type_i)?;
        rec.num("power", o.oc.power)?;
        rec.num("enm_null", o.oc.enm_null)?;
        rec.num("enm_alt", o.oc.enm_alt)?;
        rec.num("max_measurements", o.oc.max_measurements)?;
        rec.put("iterations", o.trace.len())?;
        rec.put("evaluations", o.evaluations)?;
        let doc = design_doc(o, scenario.name.clone().map(|n| format!("{n}-optimised")));
        if let Some(p) = run.write("design.toml", design_to_toml(&doc).as_bytes())? {
            rec.put("design_file", p.display())?;
        }
        let mut csv = csv::Writer::from_writer(Vec::new());
        csv.write_record(["iteration", "elite_quantile", "best_objective"])?;
        for t in &o.trace {
            csv.write_record([t.iteration.to_string(), fmt_f64(t.elite_quantile), fmt_f64(t.best_objective)])?;
        }
        let bytes = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        if let Some(p) = run.write("trace.csv", &bytes)? {
            rec.put("trace_csv", p.display())?;
        }
    }
    run.finish()?;
    Ok(code)
}

fn analyze<W: Write>(args: &AnalyzeArgs, out: &mut W) -> Result<i32> {
    let design = load_design(&args.design)?;
    let result = match (args.z, args.tau_hat) {
        (Some(z), _) => TrialResult::new(&design, args.gamma, z)?,
        (None, Some(t)) => match args.info {
            Some(info) => TrialResult::from_estimate(&design, args.gamma, t, info)?,
            None => {
                let info = design.information()?.get(args.gamma.wrapping_sub(1)).copied().ok_or_else(|| {
                    Error::OutOfRange(format!("gamma = {} outside 1..={}", args.gamma, design.analyses()))
                })?;
                TrialResult::from_estimate(&design, args.gamma, t, info)?
            }
        },
        (None, None) => return Err(Error::domain("one of --z or --tau-hat is required")),
    };
    let report = Analyzer::new(&design)?.report(&result, args.alpha)?;
    let mut rec = Record { out };
    rec.put("command", "analyze")?;
    rec.put("design", args.design.display())?;
    rec.put("gamma", result.gamma)?;
    rec.put("psi", result.psi.psi())?;
    rec.num("z", result.z)?;
    rec.num("info", result.info)?;
    rec.num("alpha", args.alpha)?;
    rec.num("estimate_naive", report.estimate_naive)?;
    rec.num("p_naive", report.p_naive)?;
    rec.num("ci_lower_naive", report.ci_lower_naive)?;
    rec.num("estimate_so", report.estimate_so)?;
    rec.num("p_so", report.p_so)?;
    rec.num("ci_lower_so", report.ci_lower_so)?;
    Ok(0)
}

fn simulate<W: Write>(args: &SimulateArgs, out: &mut W) -> Result<i32> {
    let scenario = load_scenario(&args.scenario)?;
    let design = load_design(&args.design)?;
    check_consistent(&design, &scenario.spec)?;
    let taus = parse_tau_grid(&args.tau_grid)?;
    let mut run = Run::new(
        "simulate",
        &[&args.scenario, &args.design],
        Some(args.seed),
        args.out_dir.as_deref(),
    )?;
    let cfg = StudyConfig::new(args.replicates, args.seed, scenario.spec.alpha);
    let metrics = replicate_study(&design, &taus, &cfg)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["tau", "estimator", "bias", "rmse", "coverage", "se_bias", "se_coverage"])?;
    for m in &metrics {
        csv.write_record([
            fmt_f64(m.tau),
            "naive".into(),
            fmt_f64(m.bias_naive),
            fmt_f64(m.rmse_naive),
            fmt_f64(m.coverage_naive),
            fmt_f64(m.se_bias_naive),
            fmt_f64(m.se_coverage_naive),
        ])?;
        csv.write_record([
            fmt_f64(m.tau),
            "so".into(),
            fmt_f64(m.bias_so),
            fmt_f64(m.rmse_so),
            fmt_f64(m.coverage_so),
            fmt_f64(m.se_bias_so),
            fmt_f64(m.se_coverage_so),
        ])?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    match run.write("metrics.csv", &bytes)? {
        Some(p) => writeln!(out, "metrics_csv={}", p.display())?,
        None => out.write_all(&bytes)?,
    }
    run.finish()?;
    Ok(0)
}

fn table_a1<W: Write>(args: &TableArgs, out: &mut W) -> Result<i32> {
    let mut run = Run::new("table-a1", &[], None, args.out_dir.as_deref())?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["clusters", "periods", "probability"])?;
    for &c in &args.c_list {
        for &t in &args.t_list {
            let p = crate::optimize::ordered_allocation_probability(c, t, (t / 2).max(1))?;
            csv.write_record([c.to_string(), t.to_string(), fmt_f64(p)])?;
        }
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    match run.write("table_a1.csv", &bytes)? {
        Some(p) => writeln!(out, "table_csv={}", p.display())?,
        None => out.write_all(&bytes)?,
    }
    run.finish()?;
    Ok(0)
}

/// Runs a parsed command, writing the record to `out`; returns the exit code.
pub fn run<W: Write>(cli: &Cli, out: &mut W) -> Result<i32> {
    if let Some(n) = cli.threads {
        // a pool may already exist when called repeatedly in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Evaluate(a) => evaluate(a, out),
        Command::Optimize(a) => optimize(a, out),
        Command::Analyze(a) => analyze(a, out),
        Command::Simulate(a) => simulate(a, out),
        Command::TableA1(a) => table_a1(a, out),
    }
}

/// Entry point used by the binary: parses `args`, runs, reports errors on
/// stderr and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(&cli, &mut lock) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
