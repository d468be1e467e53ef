//! Sequential data generation, interim GLS fits, trial execution and
//! replication studies of the inference procedures.
//!
//! Clusters are independent under the model, so the joint conditional
//! distribution of period `t` given periods `1..t` factorises into one
//! conditional Gaussian per cluster. Each is computed from the exact
//! partitioned-covariance formula and reused across clusters and replicates.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::analysis::{naive_inference, Analyzer, TrialResult};
use crate::error::{Error, Result};
use crate::model::{
    build_collapsed_covariance, build_collapsed_design_matrix, gls_normal_inverse,
    AllocationSchedule, FixedEffects, GroupSequentialDesign, TreatmentMatrix, VarianceComponents,
};
use crate::oc::Decision;
use crate::seeds;

/// Scale at which responses are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resolution {
    /// One mean per cluster-period; exact for the GLS analysis.
    #[default]
    ClusterPeriodMeans,
    /// `m` individual responses per cluster-period.
    Individual,
}

/// Responses of one period, stored cluster by cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodData {
    /// 1-based period index.
    pub period: usize,
    /// Responses per cluster (1 for cluster-period means, `m` otherwise).
    pub per_cluster: usize,
    pub values: Vec<f64>,
}

impl PeriodData {
    pub fn clusters(&self) -> usize {
        self.values.len() / self.per_cluster
    }

    pub fn cluster(&self, c: usize) -> &[f64] {
        &self.values[c * self.per_cluster..(c + 1) * self.per_cluster]
    }

    pub fn cluster_means(&self) -> Vec<f64> {
        self.values
            .chunks(self.per_cluster)
            .map(|v| v.iter().sum::<f64>() / self.per_cluster as f64)
            .collect()
    }
}

/// Distribution of the trailing block of a zero-mean Gaussian vector given
/// its leading `history` coordinates.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    coef: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn new(cov: &DMatrix<f64>, history: usize) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n || history >= n {
            return Err(Error::domain("history must leave at least one coordinate"));
        }
        let q = n - history;
        let s_tt = cov.view((history, history), (q, q)).into_owned();
        let (coef, cond) = if history == 0 {
            (DMatrix::zeros(q, 0), s_tt)
        } else {
            let s_hh = cov.view((0, 0), (history, history)).into_owned();
            let s_ht = cov.view((0, history), (history, q)).into_owned();
            let chol = s_hh.cholesky().ok_or(Error::NotPositiveDefinite)?;
            // Σ_{t,h} Σ_{h,h}⁻¹ = (Σ_{h,h}⁻¹ Σ_{h,t})ᵀ
            let coef = chol.solve(&s_ht).transpose();
            let cond = &s_tt - &coef * &s_ht;
            (coef, (&cond + cond.transpose()) * 0.5)
        };
        let chol = cond.cholesky().ok_or(Error::NotPositiveDefinite)?.l();
        Ok(Self { coef, chol })
    }

    pub fn history_len(&self) -> usize {
        self.coef.ncols()
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// `Σ_{t,h} Σ_{h,h}⁻¹ r` for history residuals `r`.
    pub fn mean_shift(&self, residuals: &[f64]) -> DVector<f64> {
        &self.coef * DVector::from_column_slice(residuals)
    }

    pub fn conditional_covariance(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    /// Draw with the given unconditional mean and history residuals.
    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], residuals: &[f64], rng: &mut R) -> Vec<f64> {
        let q = self.dim();
        let noise = DVector::from_fn(q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let draw = self.mean_shift(residuals) + &self.chol * noise;
        mean.iter().zip(draw.iter()).map(|(m, d)| m + d).collect()
    }
}

/// Generator of period-by-period responses for one allocation.
#[derive(Debug, Clone)]
pub struct DataGenerator {
    x: TreatmentMatrix,
    per_cluster: usize,
    conditionals: Vec<ConditionalGaussian>,
}

impl DataGenerator {
    pub fn new(
        allocation: &AllocationSchedule,
        m: usize,
        vc: &VarianceComponents,
        resolution: Resolution,
    ) -> Result<Self> {
        if m < 1 {
            return Err(Error::constraint("m must be positive"));
        }
        let x = allocation.treatment_matrix();
        let periods = allocation.periods();
        let per_cluster = match resolution {
            Resolution::ClusterPeriodMeans => 1,
            Resolution::Individual => m,
        };
        let within = match resolution {
            Resolution::ClusterPeriodMeans => vc.sigma_e2 / m as f64,
            Resolution::Individual => vc.sigma_e2,
        };
        let conditionals = (1..=periods)
            .map(|t| {
                let n = per_cluster * t;
                let cov = DMatrix::from_fn(n, n, |r, s| {
                    vc.sigma_c2 + if r == s { within } else { 0.0 }
                });
                ConditionalGaussian::new(&cov, per_cluster * (t - 1))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x,
            per_cluster,
            conditionals,
        })
    }

    pub fn for_design(design: &GroupSequentialDesign, resolution: Resolution) -> Result<Self> {
        Self::new(&design.allocation, design.m, &design.vc, resolution)
    }

    pub fn periods(&self) -> usize {
        self.x.periods()
    }

    pub fn clusters(&self) -> usize {
        self.x.clusters()
    }

    /// Draw period `history.len() + 1` given the complete earlier periods.
    pub fn next_period<R: Rng + ?Sized>(
        &self,
        history: &[PeriodData],
        effects: &FixedEffects,
        rng: &mut R,
    ) -> Result<PeriodData> {
        let t = history.len() + 1;
        if t > self.periods() {
            return Err(Error::OutOfRange(format!(
                "period {t} beyond the final period {}",
                self.periods()
            )));
        }
        if effects.period_effects.len() + 1 != self.periods() {
            return Err(Error::constraint("fixed effects do not match the number of periods"));
        }
        for (j, p) in history.iter().enumerate() {
            if p.period != j + 1
                || p.per_cluster != self.per_cluster
                || p.values.len() != self.per_cluster * self.clusters()
            {
                return Err(Error::domain(format!("malformed history at period {}", j + 1)));
            }
        }
        let cond = &self.conditionals[t - 1];
        let k = self.per_cluster;
        let mut values = Vec::with_capacity(k * self.clusters());
        let mut residuals = vec![0.0; k * (t - 1)];
        for c in 0..self.clusters() {
            for (j, p) in history.iter().enumerate() {
                let mu = effects.cell_mean(&self.x, c, j);
                for (r, y) in residuals[j * k..(j + 1) * k].iter_mut().zip(p.cluster(c)) {
                    *r = y - mu;
                }
            }
            let mean = vec![effects.cell_mean(&self.x, c, t - 1); k];
            values.extend(cond.sample(&mean, &residuals, rng));
        }
        Ok(PeriodData {
            period: t,
            per_cluster: k,
            values,
        })
    }
}

/// Stream for one (seed, replicate, period) triple.
pub fn period_rng(seed: u64, replicate: u64, period: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seeds::mix_all(seed, &[replicate, period as u64]))
}

/// Result of a GLS fit at one analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct GlsFit {
    pub beta: DVector<f64>,
    pub tau_hat: f64,
    pub info: f64,
    pub z: f64,
}

/// Precomputed GLS weights `(Dᵀ Σ⁻¹ D)⁻¹ Dᵀ Σ⁻¹` on cluster-period means.
#[derive(Debug, Clone)]
pub struct GlsFitter {
    periods: usize,
    clusters: usize,
    weights: DMatrix<f64>,
    info: f64,
}

impl GlsFitter {
    pub fn new(x: &TreatmentMatrix, m: usize, t: usize, vc: &VarianceComponents) -> Result<Self> {
        let d = build_collapsed_design_matrix(x, t)?;
        let sigma = build_collapsed_covariance(x.clusters(), m, t, vc);
        let (inv, sinv_d) = gls_normal_inverse(&d, &sigma)?;
        let p = inv.nrows();
        Ok(Self {
            periods: t,
            clusters: x.clusters(),
            weights: &inv * sinv_d.transpose(),
            info: 1.0 / inv[(p - 1, p - 1)],
        })
    }

    pub fn info(&self) -> f64 {
        self.info
    }

    /// Stacks cluster means of the first `t` periods period by period.
    fn stack(&self, data: &[PeriodData]) -> Result<DVector<f64>> {
        if data.len() < self.periods {
            return Err(Error::domain(format!(
                "{} periods observed, {} required",
                data.len(),
                self.periods
            )));
        }
        let mut y = Vec::with_capacity(self.clusters * self.periods);
        for p in &data[..self.periods] {
            if p.clusters() != self.clusters {
                return Err(Error::domain("cluster count differs from the design"));
            }
            y.extend(p.cluster_means());
        }
        Ok(DVector::from_vec(y))
    }

    pub fn fit(&self, data: &[PeriodData]) -> Result<GlsFit> {
        let y = self.stack(data)?;
        let beta = &self.weights * y;
        let tau_hat = beta[beta.len() - 1];
        Ok(GlsFit {
            beta,
            tau_hat,
            info: self.info,
            z: tau_hat * self.info.sqrt(),
        })
    }

    /// Only the treatment coefficient.
    pub fn tau_hat(&self, data: &[PeriodData]) -> Result<f64> {
        let y = self.stack(data)?;
        Ok(self.weights.row(self.weights.nrows() - 1).dot(&y.transpose()))
    }
}

/// GLS fit of the first `t` periods of `data`.
pub fn gls_fit(data: &[PeriodData], t: usize, design: &GroupSequentialDesign) -> Result<GlsFit> {
    GlsFitter::new(&design.treatment_matrix(), design.m, t, &design.vc)?.fit(data)
}

/// Path of one simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedTrial {
    pub gamma: usize,
    pub psi: Decision,
    pub z_path: Vec<f64>,
    pub tau_hat: f64,
    pub info: f64,
}

impl SimulatedTrial {
    pub fn z(&self) -> f64 {
        self.z_path[self.gamma - 1]
    }

    pub fn to_result(&self, design: &GroupSequentialDesign) -> Result<TrialResult> {
        TrialResult::from_estimate(design, self.gamma, self.tau_hat, self.info)
    }
}

/// Runs the group sequential algorithm on generated data.
#[derive(Debug, Clone)]
pub struct TrialSimulator {
    design: GroupSequentialDesign,
    generator: DataGenerator,
    fitters: Vec<GlsFitter>,
}

impl TrialSimulator {
    pub fn new(design: &GroupSequentialDesign, resolution: Resolution) -> Result<Self> {
        let x = design.treatment_matrix();
        let fitters = design
            .schedule
            .periods()
            .iter()
            .map(|&t| GlsFitter::new(&x, design.m, t, &design.vc))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            design: design.clone(),
            generator: DataGenerator::for_design(design, resolution)?,
            fitters,
        })
    }

    pub fn design(&self) -> &GroupSequentialDesign {
        &self.design
    }

    pub fn generator(&self) -> &DataGenerator {
        &self.generator
    }

    /// All `T` periods of one replicate, without stopping.
    pub fn generate_all(&self, effects: &FixedEffects, seed: u64, replicate: u64) -> Result<Vec<PeriodData>> {
        let mut data = Vec::with_capacity(self.design.periods());
        for t in 1..=self.design.periods() {
            let mut rng = period_rng(seed, replicate, t);
            let next = self.generator.next_period(&data, effects, &mut rng)?;
            data.push(next);
        }
        Ok(data)
    }

    /// Interim statistics at every analysis, ignoring the stopping rule.
    pub fn z_statistics(&self, effects: &FixedEffects, seed: u64, replicate: u64) -> Result<Vec<f64>> {
        let data = self.generate_all(effects, seed, replicate)?;
        self.fitters
            .iter()
            .map(|f| Ok(f.tau_hat(&data)? * f.info().sqrt()))
            .collect()
    }

    pub fn run(&self, effects: &FixedEffects, seed: u64, replicate: u64) -> Result<SimulatedTrial> {
        let schedule = self.design.schedule.periods();
        let b = &self.design.boundaries;
        let mut data = Vec::with_capacity(self.design.periods());
        let mut z_path = Vec::with_capacity(schedule.len());
        let mut analysis = 0;
        for t in 1..=self.design.periods() {
            let mut rng = period_rng(seed, replicate, t);
            let next = self.generator.next_period(&data, effects, &mut rng)?;
            data.push(next);
            if schedule[analysis] != t {
                continue;
            }
            let fitter = &self.fitters[analysis];
            let tau_hat = fitter.tau_hat(&data)?;
            let z = tau_hat * fitter.info().sqrt();
            z_path.push(z);
            let psi = if z <= b.futility(analysis) {
                Some(Decision::Accept)
            } else if z > b.efficacy(analysis) {
                Some(Decision::Reject)
            } else {
                None
            };
            if let Some(psi) = psi {
                return Ok(SimulatedTrial {
                    gamma: analysis + 1,
                    psi,
                    z_path,
                    tau_hat,
                    info: fitter.info(),
                });
            }
            analysis += 1;
        }
        Err(Error::domain("trial did not terminate at the final analysis"))
    }
}

pub fn run_trial(
    design: &GroupSequentialDesign,
    effects: &FixedEffects,
    seed: u64,
    replicate: u64,
) -> Result<TrialResult> {
    TrialSimulator::new(design, Resolution::ClusterPeriodMeans)?
        .run(effects, seed, replicate)?
        .to_result(design)
}

/// Settings for a replication study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub mu: f64,
    /// `π_2, …, π_T`; zero when absent.
    pub period_effects: Option<Vec<f64>>,
    pub resolution: Resolution,
}

impl StudyConfig {
    pub fn new(replicates: usize, seed: u64, alpha: f64) -> Self {
        Self {
            replicates,
            seed,
            alpha,
            mu: 0.0,
            period_effects: None,
            resolution: Resolution::ClusterPeriodMeans,
        }
    }
}

/// Performance of the naive and stage-wise ordering procedures at one τ.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationMetrics {
    pub tau: f64,
    pub replicates: usize,
    pub bias_naive: f64,
    pub bias_so: f64,
    pub rmse_naive: f64,
    pub rmse_so: f64,
    pub coverage_naive: f64,
    pub coverage_so: f64,
    pub se_bias_naive: f64,
    pub se_bias_so: f64,
    pub se_coverage_naive: f64,
    pub se_coverage_so: f64,
    /// Fraction of replicates with `τ̂_SO ≤ τ`.
    pub median_fraction_so: f64,
    pub rejection_rate: f64,
    /// `[accept, reject]` frequencies per analysis.
    pub stopping: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct Replicate {
    gamma: usize,
    psi: Decision,
    est_n: f64,
    est_so: f64,
    lower_n: f64,
    lower_so: f64,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, r: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / r;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0).max(1.0);
    (mean, (var / r).sqrt())
}

/// Simulates `config.replicates` trials at each τ and summarises the estimators.
pub fn replicate_study(
    design: &GroupSequentialDesign,
    taus: &[f64],
    config: &StudyConfig,
) -> Result<Vec<ReplicationMetrics>> {
    if config.replicates < 2 {
        return Err(Error::constraint("at least two replicates are required"));
    }
    let simulator = TrialSimulator::new(design, config.resolution)?;
    let analyzer = Analyzer::new(design)?;
    let periods = design.periods();
    let pi = match &config.period_effects {
        Some(p) => p.clone(),
        None => vec![0.0; periods - 1],
    };
    taus.iter()
        .enumerate()
        .map(|(ti, &tau)| {
            let effects = FixedEffects::new(config.mu, pi.clone(), tau, periods)?;
            let seed = seeds::mix(config.seed, ti as u64);
            let reps = (0..config.replicates as u64)
                .into_par_iter()
                .map(|r| {
                    let trial = simulator.run(&effects, seed, r)?;
                    let result = trial.to_result(design)?;
                    let naive = naive_inference(&result, config.alpha)?;
                    Ok(Replicate {
                        gamma: trial.gamma,
                        psi: trial.psi,
                        est_n: naive.estimate,
                        est_so: analyzer.median_unbiased(&result)?,
                        lower_n: naive.ci_lower,
                        lower_so: analyzer.ci_lower(&result, config.alpha)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(summarise(tau, design.analyses(), &reps))
        })
        .collect()
}

fn summarise(tau: f64, analyses: usize, reps: &[Replicate]) -> ReplicationMetrics {
    let r = reps.len() as f64;
    let (bias_naive, se_bias_naive) = mean_and_se(reps.iter().map(|x| x.est_n - tau), r);
    let (bias_so, se_bias_so) = mean_and_se(reps.iter().map(|x| x.est_so - tau), r);
    let rmse = |f: &dyn Fn(&Replicate) -> f64| {
        (reps.iter().map(|x| (f(x) - tau).powi(2)).sum::<f64>() / r).sqrt()
    };
    let frac = |f: &dyn Fn(&Replicate) -> bool| reps.iter().filter(|x| f(x)).count() as f64 / r;
    let coverage_naive = frac(&|x| tau > x.lower_n);
    let coverage_so = frac(&|x| tau > x.lower_so);
    let mut stopping = vec![[0.0; 2]; analyses];
    for x in reps {
        stopping[x.gamma - 1][x.psi.psi() as usize] += 1.0 / r;
    }
    ReplicationMetrics {
        tau,
        replicates: reps.len(),
        bias_naive,
        bias_so,
        rmse_naive: rmse(&|x| x.est_n),
        rmse_so: rmse(&|x| x.est_so),
        coverage_naive,
        coverage_so,
        se_bias_naive,
        se_bias_so,
        se_coverage_naive: (coverage_naive * (1.0 - coverage_naive) / r).sqrt(),
        se_coverage_so: (coverage_so * (1.0 - coverage_so) / r).sqrt(),
        median_fraction_so: frac(&|x| x.est_so <= tau),
        rejection_rate: frac(&|x| x.psi == Decision::Reject),
        stopping,
    }
}
