//! Weighted-ENM objective, the cross-entropy design search and the reference
//! fixed-sample computations.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    information_closed_form, AllocationSchedule, AnalysisSchedule, GroupSequentialDesign,
    ScenarioSpec, StoppingBoundaries, VarianceComponents,
};
use crate::mvnorm::{std_normal_cdf, std_normal_quantile, std_normal_sf, MvnIntegrator, DEFAULT_ABS_TOL};
use crate::oc::{check_consistent, summarize_with, Decision, DesignEvaluator, OperatingCharacteristics, OutcomeLabel};
use crate::seeds;

/// Grid on which candidate boundaries are placed (and cached).
pub const BOUNDARY_QUANTUM: f64 = 1e-3;
const UNITS: f64 = 1e3;

/// Error rates and expected sizes at `τ = 0` and `τ = δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignScore {
    pub type_i: f64,
    pub power: f64,
    pub enm_null: f64,
    pub enm_alt: f64,
    pub max_measurements: f64,
}

impl DesignScore {
    pub fn objective(&self, weights: &[f64; 3]) -> f64 {
        weights[0] * self.enm_null + weights[1] * self.enm_alt + weights[2] * self.max_measurements
    }

    /// Objective plus the error-rate penalty.
    pub fn penalized(&self, scenario: &ScenarioSpec) -> f64 {
        self.objective(&scenario.weights) + penalty(self.type_i, self.power, scenario)
    }
}

/// `M_SW (𝕀[P(0) > α](P(0) − α)/α + 𝕀[1 − P(δ) > β](1 − P(δ) − β)/β)`.
pub fn penalty(type_i: f64, power: f64, scenario: &ScenarioSpec) -> f64 {
    let (alpha, beta) = (scenario.alpha, scenario.beta);
    let mut p = 0.0;
    if type_i > alpha {
        p += (type_i - alpha) / alpha;
    }
    if 1.0 - power > beta {
        p += (1.0 - power - beta) / beta;
    }
    scenario.m_sw * p
}

/// Rejection probability and ENM at one τ, using only the integrals both need.
fn rejection_and_enm(ev: &DesignEvaluator, tau: f64) -> Result<(f64, f64)> {
    let design = ev.design();
    let k = design.analyses();
    let mut reject = 0.0;
    let mut enm = 0.0;
    let mut stopped = 0.0;
    for gamma in 1..=k {
        let rej = ev
            .outcome_probability(tau, OutcomeLabel { gamma, psi: Decision::Reject })?
            .value;
        reject += rej;
        if gamma < k {
            let acc = ev
                .outcome_probability(tau, OutcomeLabel { gamma, psi: Decision::Accept })?
                .value;
            stopped += rej + acc;
            enm += design.measurements_at(gamma - 1) * (rej + acc);
        }
    }
    enm += design.measurements_at(k - 1) * (1.0 - stopped).max(0.0);
    Ok((reject, enm))
}

pub fn score_design(ev: &DesignEvaluator, delta: f64) -> Result<DesignScore> {
    let (type_i, enm_null) = rejection_and_enm(ev, 0.0)?;
    let (power, enm_alt) = rejection_and_enm(ev, delta)?;
    Ok(DesignScore {
        type_i,
        power,
        enm_null,
        enm_alt,
        max_measurements: ev.design().max_measurements(),
    })
}

/// `w1 ENM(0) + w2 ENM(δ) + w3 mCT`.
pub fn objective(design: &GroupSequentialDesign, scenario: &ScenarioSpec) -> Result<f64> {
    check_consistent(design, scenario)?;
    let ev = DesignEvaluator::new(design)?;
    Ok(score_design(&ev, scenario.delta)?.objective(&scenario.weights))
}

/// Objective with the error-rate penalty.
pub fn penalized_objective(design: &GroupSequentialDesign, scenario: &ScenarioSpec) -> Result<f64> {
    check_consistent(design, scenario)?;
    let ev = DesignEvaluator::new(design)?;
    Ok(score_design(&ev, scenario.delta)?.penalized(scenario))
}

/// Penalized objective of raw design parameters; `+∞` when every cluster
/// switches in the same period.
pub fn penalized_objective_raw(
    m: usize,
    switch_times: &[usize],
    futility: &[f64],
    efficacy: &[f64],
    scenario: &ScenarioSpec,
) -> Result<f64> {
    if switch_times.windows(2).all(|w| w[0] == w[1]) {
        return Ok(f64::INFINITY);
    }
    let design = GroupSequentialDesign::new(
        AllocationSchedule::new(switch_times.to_vec(), scenario.periods)?,
        scenario.schedule.clone(),
        StoppingBoundaries::new(futility.to_vec(), efficacy.to_vec())?,
        m,
        scenario.vc,
    )?;
    penalized_objective(&design, scenario)
}

/// As-equal-as-possible switch counts over periods `2..=T`, extra clusters
/// going to the earliest periods.
pub fn near_balanced_allocation(clusters: usize, periods: usize) -> Result<AllocationSchedule> {
    if periods < 2 {
        return Err(Error::constraint("at least two periods are required"));
    }
    let steps = periods - 1;
    let (base, extra) = (clusters / steps, clusters % steps);
    let mut s = Vec::with_capacity(clusters);
    for k in 0..steps {
        let n = base + usize::from(k < extra);
        s.extend(std::iter::repeat_n(k + 2, n));
    }
    AllocationSchedule::new(s, periods)
}

/// Single-analysis reference design.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedSampleReference {
    pub m: usize,
    /// `m C T`.
    pub m_sw: f64,
    pub power: f64,
    pub allocation: AllocationSchedule,
}

/// Smallest `m ≥ 2` whose single-analysis z-test has power `1 − β` at level α.
pub fn fixed_sample_reference(
    allocation: &AllocationSchedule,
    alpha: f64,
    beta: f64,
    delta: f64,
    vc: &VarianceComponents,
    m_max: usize,
) -> Result<FixedSampleReference> {
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0 && delta > 0.0) {
        return Err(Error::domain("require 0 < α, β < 1 and δ > 0"));
    }
    let x = allocation.treatment_matrix();
    let t = allocation.periods();
    let z_alpha = std_normal_quantile(1.0 - alpha)?;
    for m in 2..=m_max {
        let info = information_closed_form(&x, m, t, vc)?;
        let power = std_normal_cdf(delta * info.sqrt() - z_alpha);
        if power >= 1.0 - beta {
            return Ok(FixedSampleReference {
                m,
                m_sw: (m * allocation.clusters() * t) as f64,
                power,
                allocation: allocation.clone(),
            });
        }
    }
    Err(Error::PowerUnreachable {
        target: 1.0 - beta,
        m_max,
    })
}

/// `P(S_1 ≤ S_2 ≤ … ≤ S_C)` for independent `S_c` with the given laws over
/// `1..=T+1` (`tables[c][s - 1] = P(S_c = s)`).
pub fn ordered_allocation_probability_with(tables: &[Vec<f64>]) -> Result<f64> {
    let first = tables.first().ok_or_else(|| Error::domain("no clusters"))?;
    let n = first.len();
    if tables.iter().any(|t| t.len() != n) {
        return Err(Error::domain("probability tables differ in length"));
    }
    // dp[s] = P(S_1 ≤ … ≤ S_c, S_c = s)
    let mut dp = first.clone();
    for table in &tables[1..] {
        let mut cum = 0.0;
        for (s, p) in table.iter().enumerate() {
            cum += dp[s];
            dp[s] = p * cum;
        }
    }
    Ok(dp.iter().sum())
}

/// Ordered-allocation probability with `S_1 ~ U{1, t1}` and `S_c ~ U{1, T+1}`.
pub fn ordered_allocation_probability(clusters: usize, periods: usize, t1: usize) -> Result<f64> {
    if clusters < 1 || t1 < 1 || t1 > periods + 1 {
        return Err(Error::domain("require C ≥ 1 and 1 ≤ t1 ≤ T + 1"));
    }
    let n = periods + 1;
    let mut tables = vec![vec![1.0 / n as f64; n]; clusters];
    tables[0] = (1..=n).map(|s| if s <= t1 { 1.0 / t1 as f64 } else { 0.0 }).collect();
    ordered_allocation_probability_with(&tables)
}

/// Cross-entropy search settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CeConfig {
    pub rho: f64,
    pub n_samples: usize,
    pub m_max: usize,
    pub max_iters: usize,
    pub stall_window: usize,
    pub smoothing: f64,
    pub seed: u64,
    pub init_mean: f64,
    pub init_sd: f64,
    pub sd_floor: f64,
    pub abs_tol: f64,
}

impl CeConfig {
    /// Defaults: `N = 10000(C + 2K)`, `ρ = 0.01`, `m_max = ⌊10 M_SW / (CT)⌋`.
    pub fn for_scenario(scenario: &ScenarioSpec) -> Self {
        let dim = scenario.clusters + 2 * scenario.schedule.len();
        let ct = (scenario.clusters * scenario.periods) as f64;
        Self {
            rho: 0.01,
            n_samples: 10_000 * dim,
            m_max: ((10.0 * scenario.m_sw / ct).floor() as usize).max(2),
            max_iters: 100,
            stall_window: 5,
            smoothing: 1.0,
            seed: 0,
            init_mean: 0.0,
            init_sd: 10.0,
            sd_floor: 1e-4,
            abs_tol: DEFAULT_ABS_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::constraint(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        if self.n_samples < 100 {
            return Err(Error::constraint(format!(
                "n_samples must be at least 100, got {}",
                self.n_samples
            )));
        }
        if self.m_max < 2 {
            return Err(Error::constraint("m_max must be at least 2"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::constraint("smoothing must lie in (0, 1]"));
        }
        if !(self.init_sd > 0.0 && self.sd_floor > 0.0) {
            return Err(Error::constraint("standard deviations must be positive"));
        }
        if self.max_iters == 0 || self.stall_window == 0 {
            return Err(Error::constraint("max_iters and stall_window must be positive"));
        }
        Ok(())
    }

    pub fn elite_size(&self) -> usize {
        ((self.rho * self.n_samples as f64).ceil() as usize).max(1)
    }
}

/// Categorical law over a list of integer values.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    pub values: Vec<usize>,
    pub probs: Vec<f64>,
}

impl Categorical {
    pub fn uniform(values: Vec<usize>) -> Self {
        let p = 1.0 / values.len() as f64;
        let probs = vec![p; values.len()];
        Self { values, probs }
    }

    fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.probs).expect("probability table has positive mass")
    }

    fn update(&mut self, elite: impl Iterator<Item = usize>, smoothing: f64) {
        let mut counts = vec![0.0; self.values.len()];
        let mut n = 0.0;
        for v in elite {
            if let Ok(i) = self.values.binary_search(&v) {
                counts[i] += 1.0;
                n += 1.0;
            }
        }
        for (p, c) in self.probs.iter_mut().zip(counts) {
            *p = smoothing * c / n + (1.0 - smoothing) * *p;
        }
    }
}

/// One sampled parameter set; boundaries are integers in units of
/// [`BOUNDARY_QUANTUM`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub m: usize,
    pub s: Vec<usize>,
    pub f: Vec<i64>,
    pub r: Vec<i64>,
}

impl Candidate {
    pub fn futility(&self) -> Vec<f64> {
        self.f.iter().map(|&k| k as f64 / UNITS).collect()
    }

    pub fn efficacy(&self) -> Vec<f64> {
        let k = self.f.len();
        (0..k)
            .map(|i| {
                let units = if i + 1 < k { self.f[i] + self.r[i] } else { self.f[i] };
                units as f64 / UNITS
            })
            .collect()
    }

    fn key(&self) -> Candidate {
        let mut key = self.clone();
        key.s.sort_unstable();
        key
    }

    fn mean_abs_boundary(&self) -> i64 {
        self.f.iter().map(|v| v.abs()).sum::<i64>() + self.r.iter().sum::<i64>()
    }

    pub fn to_design(&self, scenario: &ScenarioSpec) -> Result<GroupSequentialDesign> {
        GroupSequentialDesign::new(
            AllocationSchedule::new(self.s.clone(), scenario.periods)?,
            scenario.schedule.clone(),
            StoppingBoundaries::new(self.futility(), self.efficacy())?,
            self.m,
            scenario.vc,
        )
    }
}

/// Sampling distribution and incumbent of the cross-entropy search.
#[derive(Debug, Clone, PartialEq)]
pub struct CeState {
    pub m: Categorical,
    pub s: Vec<Categorical>,
    pub f_mean: Vec<f64>,
    pub f_sd: Vec<f64>,
    pub r_mean: Vec<f64>,
    pub r_sd: Vec<f64>,
    pub best: Option<Candidate>,
    pub best_objective: f64,
}

impl CeState {
    pub fn initial(scenario: &ScenarioSpec, config: &CeConfig) -> Self {
        let k = scenario.schedule.len();
        let t1 = scenario.schedule.first();
        let mut s = vec![Categorical::uniform((1..=t1).collect())];
        for _ in 1..scenario.clusters {
            s.push(Categorical::uniform((1..=scenario.periods + 1).collect()));
        }
        Self {
            m: Categorical::uniform((2..=config.m_max).collect()),
            s,
            f_mean: vec![config.init_mean; k],
            f_sd: vec![config.init_sd; k],
            r_mean: vec![config.init_mean; k - 1],
            r_sd: vec![config.init_sd; k - 1],
            best: None,
            best_objective: f64::INFINITY,
        }
    }

    fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Candidate> {
        let m_law = self.m.sampler();
        let s_laws: Vec<_> = self.s.iter().map(|c| c.sampler()).collect();
        let quantise = |v: f64| (v * UNITS).round() as i64;
        (0..n)
            .map(|_| {
                let m = self.m.values[m_law.sample(rng)];
                let s = s_laws
                    .iter()
                    .zip(&self.s)
                    .map(|(law, c)| c.values[law.sample(rng)])
                    .collect();
                let f = self
                    .f_mean
                    .iter()
                    .zip(&self.f_sd)
                    .map(|(mu, sd)| quantise(mu + sd * rng.sample::<f64, _>(StandardNormal)))
                    .collect();
                let r = self
                    .r_mean
                    .iter()
                    .zip(&self.r_sd)
                    .map(|(&mu, &sd)| quantise(positive_normal(mu, sd, rng)).max(1))
                    .collect();
                Candidate { m, s, f, r }
            })
            .collect()
    }

    fn update(&mut self, elite: &[&Candidate], config: &CeConfig) {
        let a = config.smoothing;
        self.m.update(elite.iter().map(|c| c.m), a);
        for (i, law) in self.s.iter_mut().enumerate() {
            law.update(elite.iter().map(|c| c.s[i]), a);
        }
        let fit = |vals: Vec<f64>, mean: &mut f64, sd: &mut f64| {
            let n = vals.len() as f64;
            let mu = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
            *mean = a * mu + (1.0 - a) * *mean;
            *sd = (a * var.sqrt() + (1.0 - a) * *sd).max(config.sd_floor);
        };
        for i in 0..self.f_mean.len() {
            let vals = elite.iter().map(|c| c.f[i] as f64 / UNITS).collect();
            fit(vals, &mut self.f_mean[i], &mut self.f_sd[i]);
        }
        for i in 0..self.r_mean.len() {
            let vals = elite.iter().map(|c| c.r[i] as f64 / UNITS).collect();
            fit(vals, &mut self.r_mean[i], &mut self.r_sd[i]);
        }
    }
}

/// Draw from `N(mu, sd²)` conditioned on being positive.
fn positive_normal<R: Rng>(mu: f64, sd: f64, rng: &mut R) -> f64 {
    let a = -mu / sd;
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let z = if a > 30.0 {
        // exponential approximation to the far tail
        a - u.ln() / a
    } else {
        // Z > a by inversion in the upper tail
        let q = std_normal_quantile(u * std_normal_sf(a)).unwrap_or(-a);
        (-q).max(a)
    };
    mu + sd * z
}

/// One row of the optimisation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub elite_quantile: f64,
    pub best_objective: f64,
}

/// Result of [`ce_optimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct CeOutcome {
    pub design: GroupSequentialDesign,
    pub oc: OperatingCharacteristics,
    pub objective: f64,
    pub penalized_objective: f64,
    pub trace: Vec<TraceRow>,
    pub evaluations: usize,
}

const CACHE_LIMIT: usize = 4_000_000;

fn evaluate_candidate(c: &Candidate, scenario: &ScenarioSpec, config: &CeConfig) -> f64 {
    if c.s.windows(2).all(|w| w[0] == w[1]) {
        return f64::INFINITY;
    }
    let design = match c.to_design(scenario) {
        Ok(d) => d,
        Err(_) => return f64::INFINITY,
    };
    let mut hasher = std::collections::hash_map::DefaultHasher::new();
    std::hash::Hash::hash(c, &mut hasher);
    let seed = seeds::mix(config.seed, std::hash::Hasher::finish(&hasher));
    let ev = match DesignEvaluator::new(&design) {
        Ok(ev) => ev.with_integrator(MvnIntegrator::new(config.abs_tol, seed)),
        Err(_) => return f64::INFINITY,
    };
    match score_design(&ev, scenario.delta) {
        Ok(score) => score.penalized(scenario),
        Err(_) => f64::INFINITY,
    }
}

fn rank(a: &(f64, &Candidate), b: &(f64, &Candidate)) -> std::cmp::Ordering {
    let key = |x: f64| if x.is_nan() { f64::INFINITY } else { x };
    key(a.0)
        .total_cmp(&key(b.0))
        .then_with(|| a.1.m.cmp(&b.1.m))
        .then_with(|| a.1.s.cmp(&b.1.s))
        .then_with(|| a.1.mean_abs_boundary().cmp(&b.1.mean_abs_boundary()))
        .then_with(|| a.1.f.cmp(&b.1.f))
        .then_with(|| a.1.r.cmp(&b.1.r))
}

/// Cross-entropy minimisation of the penalized objective.
///
/// Returns [`Error::Infeasible`] with the incumbent attached when the best
/// design found fails the error-rate flags of [`summarize_with`].
pub fn ce_optimize(scenario: &ScenarioSpec, config: &CeConfig) -> Result<CeOutcome> {
    config.validate()?;
    let mut state = CeState::initial(scenario, config);
    let mut cache: HashMap<Candidate, f64> = HashMap::new();
    let mut trace = Vec::new();
    let mut stall = 0;
    let mut evaluations = 0;
    let n_elite = config.elite_size().min(config.n_samples);

    for iteration in 1..=config.max_iters {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix(config.seed, iteration as u64));
        let candidates = state.sample(config.n_samples, &mut rng);
        let keys: Vec<Candidate> = candidates.iter().map(Candidate::key).collect();

        let mut fresh: Vec<&Candidate> = keys.iter().filter(|k| !cache.contains_key(*k)).collect();
        fresh.sort_unstable_by(|a, b| (&a.m, &a.s, &a.f, &a.r).cmp(&(&b.m, &b.s, &b.f, &b.r)));
        fresh.dedup();
        let values: Vec<f64> = fresh
            .par_iter()
            .map(|c| evaluate_candidate(c, scenario, config))
            .collect();
        evaluations += fresh.len();
        if cache.len() + fresh.len() > CACHE_LIMIT {
            cache.clear();
        }
        for (k, v) in fresh.into_iter().zip(values) {
            cache.insert(k.clone(), v);
        }

        let mut scored: Vec<(f64, &Candidate)> = keys.iter().map(|k| (cache[k], k)).collect();
        scored.sort_by(rank);
        let elite: Vec<&Candidate> = scored[..n_elite].iter().map(|(_, c)| *c).collect();
        let elite_quantile = scored[n_elite - 1].0;

        let (top_value, top) = scored[0];
        if top_value < state.best_objective {
            state.best_objective = top_value;
            state.best = Some(top.clone());
            stall = 0;
        } else {
            stall += 1;
        }
        trace.push(TraceRow {
            iteration,
            elite_quantile,
            best_objective: state.best_objective,
        });
        if stall >= config.stall_window {
            break;
        }
        state.update(&elite, config);
    }

    let best = state
        .best
        .clone()
        .filter(|_| state.best_objective.is_finite())
        .ok_or(Error::Infeasible {
            best_objective: state.best_objective,
            best: None,
        })?;
    let design = best.to_design(scenario)?;
    let ev = DesignEvaluator::new(&design)?;
    let oc = summarize_with(&ev, scenario)?;
    let score = score_design(&ev, scenario.delta)?;
    let outcome = CeOutcome {
        design,
        objective: score.objective(&scenario.weights),
        penalized_objective: state.best_objective,
        oc,
        trace,
        evaluations,
    };
    if !outcome.oc.constraints_met() {
        return Err(Error::Infeasible {
            best_objective: outcome.penalized_objective,
            best: Some(Box::new(outcome)),
        });
    }
    Ok(outcome)
}

/// Scenario with `M_SW` taken from the near-balanced fixed-sample design.
#[allow(clippy::too_many_arguments)]
pub fn scenario_with_reference(
    clusters: usize,
    periods: usize,
    alpha: f64,
    beta: f64,
    delta: f64,
    vc: VarianceComponents,
    weights: [f64; 3],
    schedule: AnalysisSchedule,
    m_max: usize,
) -> Result<(ScenarioSpec, FixedSampleReference)> {
    let alloc = near_balanced_allocation(clusters, periods)?;
    let reference = fixed_sample_reference(&alloc, alpha, beta, delta, &vc, m_max)?;
    let scenario = ScenarioSpec::new(
        clusters,
        periods,
        alpha,
        beta,
        delta,
        vc,
        reference.m_sw,
        weights,
        schedule,
    )?;
    Ok((scenario, reference))
}
