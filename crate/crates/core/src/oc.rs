//! Operating characteristics: stagewise outcome probabilities, rejection
//! probability and expected number of measurements.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GroupSequentialDesign, ScenarioSpec, StatisticCovariance, StoppingBoundaries};
use crate::mvnorm::{MvnIntegrator, RectangleProbability};

/// Allowance on the type-I error constraint when flagging a design as compliant.
pub const TYPE_I_SLACK: f64 = 1e-4;
/// Allowance on the power constraint when flagging a design as compliant.
pub const POWER_SLACK: f64 = 1e-3;

/// Decision taken when the trial stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Decision {
    /// H0 not rejected (ψ = 0).
    Accept,
    /// H0 rejected (ψ = 1).
    Reject,
}

impl Decision {
    pub fn psi(self) -> u8 {
        match self {
            Decision::Accept => 0,
            Decision::Reject => 1,
        }
    }

    pub fn from_psi(psi: u8) -> Result<Self> {
        match psi {
            0 => Ok(Decision::Accept),
            1 => Ok(Decision::Reject),
            _ => Err(Error::domain(format!("psi must be 0 or 1, got {psi}"))),
        }
    }
}

/// Terminal outcome `{Γ = gamma, Ψ = psi}`; `gamma` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OutcomeLabel {
    pub gamma: usize,
    pub psi: Decision,
}

/// Integration limits for analysis `i` when the trial ends at `gamma` with `psi`
/// (both 1-based). Interim analyses use the continuation region `(f_i, e_i]`.
pub fn integration_limits(
    i: usize,
    gamma: usize,
    psi: Decision,
    boundaries: &StoppingBoundaries,
) -> Result<(f64, f64)> {
    if gamma < 1 || gamma > boundaries.len() {
        return Err(Error::OutOfRange(format!(
            "gamma = {gamma} outside 1..={}",
            boundaries.len()
        )));
    }
    if i < 1 || i > gamma {
        return Err(Error::OutOfRange(format!("analysis {i} outside 1..={gamma}")));
    }
    let (f, e) = (boundaries.futility(i - 1), boundaries.efficacy(i - 1));
    Ok(if i < gamma {
        (f, e)
    } else {
        match psi {
            Decision::Reject => (e, f64::INFINITY),
            Decision::Accept => (f64::NEG_INFINITY, f),
        }
    })
}

/// Precomputed joint distribution of the test statistics for one design.
#[derive(Debug, Clone)]
pub struct DesignEvaluator {
    design: GroupSequentialDesign,
    cov: StatisticCovariance,
    blocks: Vec<DMatrix<f64>>,
    integrator: MvnIntegrator,
}

impl DesignEvaluator {
    pub fn new(design: &GroupSequentialDesign) -> Result<Self> {
        let cov = design.statistic_covariance()?;
        let blocks = (1..=design.analyses()).map(|g| cov.leading(g)).collect();
        Ok(Self {
            design: design.clone(),
            cov,
            blocks,
            integrator: MvnIntegrator::default(),
        })
    }

    pub fn with_integrator(mut self, integrator: MvnIntegrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn design(&self) -> &GroupSequentialDesign {
        &self.design
    }

    pub fn integrator(&self) -> &MvnIntegrator {
        &self.integrator
    }

    pub fn information(&self) -> &[f64] {
        &self.cov.information
    }

    pub fn statistic_covariance(&self) -> &StatisticCovariance {
        &self.cov
    }

    pub fn analyses(&self) -> usize {
        self.design.analyses()
    }

    /// Probability of continuing through analyses `1..gamma` and observing
    /// `lower < Z_gamma <= upper` at analysis `gamma` (1-based).
    pub fn stage_probability(
        &self,
        tau: f64,
        gamma: usize,
        lower: f64,
        upper: f64,
        integrator: &MvnIntegrator,
    ) -> Result<RectangleProbability> {
        if gamma < 1 || gamma > self.analyses() {
            return Err(Error::OutOfRange(format!(
                "gamma = {gamma} outside 1..={}",
                self.analyses()
            )));
        }
        if !tau.is_finite() {
            return Err(Error::domain("tau must be finite"));
        }
        let b = &self.design.boundaries;
        let mut lo = Vec::with_capacity(gamma);
        let mut hi = Vec::with_capacity(gamma);
        for i in 0..gamma - 1 {
            lo.push(b.futility(i));
            hi.push(b.efficacy(i));
        }
        lo.push(lower);
        hi.push(upper);
        let mean: Vec<f64> = self.cov.sqrt_info[..gamma].iter().map(|s| tau * s).collect();
        integrator.rectangle(&lo, &hi, &mean, &self.blocks[gamma - 1])
    }

    /// `P(Γ = γ, Ψ = ψ | τ)`.
    pub fn outcome_probability(&self, tau: f64, outcome: OutcomeLabel) -> Result<RectangleProbability> {
        let (lo, hi) = integration_limits(
            outcome.gamma,
            outcome.gamma,
            outcome.psi,
            &self.design.boundaries,
        )?;
        self.stage_probability(tau, outcome.gamma, lo, hi, &self.integrator)
    }

    /// `P(Γ = γ | τ)` for every analysis, the last one by complement.
    pub fn stopping_distribution(&self, tau: f64) -> Result<Vec<f64>> {
        let k = self.analyses();
        let mut probs = Vec::with_capacity(k);
        let mut total = 0.0;
        for gamma in 1..k {
            let p = self.outcome_probability(tau, OutcomeLabel { gamma, psi: Decision::Accept })?.value
                + self.outcome_probability(tau, OutcomeLabel { gamma, psi: Decision::Reject })?.value;
            total += p;
            probs.push(p);
        }
        probs.push((1.0 - total).max(0.0));
        Ok(probs)
    }

    /// Probability that H0 is rejected.
    pub fn rejection_probability(&self, tau: f64) -> Result<f64> {
        (1..=self.analyses())
            .map(|gamma| {
                self.outcome_probability(tau, OutcomeLabel { gamma, psi: Decision::Reject })
                    .map(|p| p.value)
            })
            .sum()
    }

    /// Expected number of measurements `Σ_γ m C t_γ P(Γ = γ | τ)`.
    pub fn enm(&self, tau: f64) -> Result<f64> {
        let probs = self.stopping_distribution(tau)?;
        Ok(probs
            .iter()
            .enumerate()
            .map(|(i, p)| self.design.measurements_at(i) * p)
            .sum())
    }

    /// Every `(γ, ψ)` outcome with its probability at `tau`.
    pub fn outcome_table(&self, tau: f64) -> Result<Vec<OutcomeRow>> {
        let mut rows = Vec::with_capacity(2 * self.analyses());
        for gamma in 1..=self.analyses() {
            for psi in [Decision::Accept, Decision::Reject] {
                let p = self.outcome_probability(tau, OutcomeLabel { gamma, psi })?;
                rows.push(OutcomeRow {
                    gamma,
                    psi,
                    tau,
                    probability: p.value,
                    error_estimate: p.error_estimate,
                });
            }
        }
        Ok(rows)
    }

    /// Rejection probabilities over a τ grid, one integrator seed per grid index.
    pub fn power_curve(&self, taus: &[f64]) -> Result<Vec<f64>> {
        taus.par_iter()
            .enumerate()
            .map(|(idx, &tau)| {
                let ev = self.clone().with_integrator(
                    self.integrator
                        .with_seed(crate::seeds::mix(self.integrator.seed, idx as u64)),
                );
                ev.rejection_probability(tau)
            })
            .collect()
    }
}

/// One line of the per-outcome table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeRow {
    pub gamma: usize,
    pub psi: Decision,
    pub tau: f64,
    pub probability: f64,
    pub error_estimate: f64,
}

/// Operating characteristics of a design under a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingCharacteristics {
    pub type_i: f64,
    pub power: f64,
    pub enm_null: f64,
    pub enm_alt: f64,
    pub max_measurements: f64,
    pub per_outcome: Vec<OutcomeRow>,
    pub type_i_ok: bool,
    pub power_ok: bool,
}

impl OperatingCharacteristics {
    pub fn constraints_met(&self) -> bool {
        self.type_i_ok && self.power_ok
    }
}

pub fn outcome_probability(
    tau: f64,
    outcome: OutcomeLabel,
    design: &GroupSequentialDesign,
) -> Result<RectangleProbability> {
    DesignEvaluator::new(design)?.outcome_probability(tau, outcome)
}

pub fn rejection_probability(tau: f64, design: &GroupSequentialDesign) -> Result<f64> {
    DesignEvaluator::new(design)?.rejection_probability(tau)
}

pub fn enm(tau: f64, design: &GroupSequentialDesign) -> Result<f64> {
    DesignEvaluator::new(design)?.enm(tau)
}

pub(crate) fn check_consistent(design: &GroupSequentialDesign, scenario: &ScenarioSpec) -> Result<()> {
    if design.clusters() != scenario.clusters || design.periods() != scenario.periods {
        return Err(Error::constraint(format!(
            "design is {}x{} but scenario is {}x{}",
            design.clusters(),
            design.periods(),
            scenario.clusters,
            scenario.periods
        )));
    }
    if design.schedule != scenario.schedule {
        return Err(Error::constraint("design and scenario analysis schedules differ"));
    }
    if design.vc != scenario.vc {
        return Err(Error::constraint("design and scenario variance components differ"));
    }
    Ok(())
}

/// P and ENM at τ = 0 and τ = δ plus the per-outcome table.
pub fn summarize(design: &GroupSequentialDesign, scenario: &ScenarioSpec) -> Result<OperatingCharacteristics> {
    check_consistent(design, scenario)?;
    let ev = DesignEvaluator::new(design)?;
    summarize_with(&ev, scenario)
}

pub fn summarize_with(ev: &DesignEvaluator, scenario: &ScenarioSpec) -> Result<OperatingCharacteristics> {
    let mut per_outcome = ev.outcome_table(0.0)?;
    per_outcome.extend(ev.outcome_table(scenario.delta)?);
    let reject_sum = |tau: f64| -> f64 {
        per_outcome
            .iter()
            .filter(|r| r.tau == tau && r.psi == Decision::Reject)
            .map(|r| r.probability)
            .sum()
    };
    let type_i = reject_sum(0.0);
    let power = reject_sum(scenario.delta);
    Ok(OperatingCharacteristics {
        type_i,
        power,
        enm_null: ev.enm(0.0)?,
        enm_alt: ev.enm(scenario.delta)?,
        max_measurements: ev.design().max_measurements(),
        type_i_ok: type_i <= scenario.alpha + TYPE_I_SLACK,
        power_ok: power >= 1.0 - scenario.beta - POWER_SLACK,
        per_outcome,
    })
}
