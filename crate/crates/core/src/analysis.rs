//! Post-trial inference: naive and stage-wise ordering p-values, point
//! estimates and one-sided confidence bounds.

use crate::error::{Error, Result};
use crate::model::GroupSequentialDesign;
use crate::mvnorm::{std_normal_quantile, std_normal_sf, MvnIntegrator, ROOT_ABS_TOL};
use crate::oc::{Decision, DesignEvaluator, OutcomeLabel};

/// Tolerance on boundary comparisons when checking that a result is terminal.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Required accuracy of `E(root) - target`.
pub const ROOT_TOL: f64 = 1e-6;
/// Iteration continues until the bracket is this many standard errors wide
/// (or `E` is hit to `EXACT_TOL`), so roots are accurate in τ as well.
const STEP_TOL: f64 = 1e-10;
const EXACT_TOL: f64 = 1e-13;
/// Half-width of the first root bracket in standard errors.
pub const INITIAL_BRACKET_WIDTHS: f64 = 5.0;
/// Largest half-width tried before giving up.
pub const MAX_BRACKET_WIDTHS: f64 = 20.0;

/// A terminal observation `{Γ = γ, Z_γ = z}` of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// 1-based terminating analysis.
    pub gamma: usize,
    pub z: f64,
    pub psi: Decision,
    pub design: GroupSequentialDesign,
    pub tau_hat_mle: f64,
    pub info: f64,
}

impl TrialResult {
    /// Result with the design's own information at analysis `gamma`.
    pub fn new(design: &GroupSequentialDesign, gamma: usize, z: f64) -> Result<Self> {
        check_gamma(design, gamma)?;
        let info = design.information()?[gamma - 1];
        Self::build(design, gamma, z, info)
    }

    /// Result from an estimate and its information, `z = tau_hat √info`.
    pub fn from_estimate(
        design: &GroupSequentialDesign,
        gamma: usize,
        tau_hat: f64,
        info: f64,
    ) -> Result<Self> {
        check_gamma(design, gamma)?;
        if !(info > 0.0 && info.is_finite()) {
            return Err(Error::domain(format!("information must be positive, got {info}")));
        }
        Self::build(design, gamma, tau_hat * info.sqrt(), info)
    }

    fn build(design: &GroupSequentialDesign, gamma: usize, z: f64, info: f64) -> Result<Self> {
        if !z.is_finite() {
            return Err(Error::domain("z must be finite"));
        }
        let psi = terminal_decision(design, gamma, z)?;
        Ok(Self {
            gamma,
            z,
            psi,
            design: design.clone(),
            tau_hat_mle: z / info.sqrt(),
            info,
        })
    }
}

fn check_gamma(design: &GroupSequentialDesign, gamma: usize) -> Result<()> {
    if gamma < 1 || gamma > design.analyses() {
        return Err(Error::OutOfRange(format!(
            "gamma = {gamma} outside 1..={}",
            design.analyses()
        )));
    }
    Ok(())
}

/// Decision implied by stopping at `gamma` with statistic `z`, or
/// `NotTerminal` when `z` lies in the continuation region.
pub fn terminal_decision(design: &GroupSequentialDesign, gamma: usize, z: f64) -> Result<Decision> {
    check_gamma(design, gamma)?;
    let b = &design.boundaries;
    let (f, e) = (b.futility(gamma - 1), b.efficacy(gamma - 1));
    if gamma == design.analyses() {
        return Ok(if z > e { Decision::Reject } else { Decision::Accept });
    }
    if z >= e - BOUNDARY_TOL {
        Ok(Decision::Reject)
    } else if z <= f + BOUNDARY_TOL {
        Ok(Decision::Accept)
    } else {
        Err(Error::NotTerminal(format!(
            "z = {z} lies in ({f}, {e}] at analysis {gamma}"
        )))
    }
}

/// Naive and stage-wise ordering inference for one result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceReport {
    pub estimate_naive: f64,
    pub p_naive: f64,
    pub ci_lower_naive: f64,
    pub estimate_so: f64,
    pub p_so: f64,
    pub ci_lower_so: f64,
}

/// Naive estimate, p-value and lower confidence bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveInference {
    pub estimate: f64,
    pub p_value: f64,
    pub ci_lower: f64,
}

pub fn naive_inference(result: &TrialResult, alpha: f64) -> Result<NaiveInference> {
    check_level(alpha)?;
    let z_alpha = std_normal_quantile(1.0 - alpha)?;
    Ok(NaiveInference {
        estimate: result.tau_hat_mle,
        p_value: std_normal_sf(result.z),
        ci_lower: result.tau_hat_mle - z_alpha / result.info.sqrt(),
    })
}

fn check_level(target: f64) -> Result<()> {
    if target > 0.0 && target < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("level must lie in (0, 1), got {target}")))
    }
}

/// Stage-wise ordering computations for a fixed design.
#[derive(Debug, Clone)]
pub struct Analyzer {
    evaluator: DesignEvaluator,
}

impl Analyzer {
    pub fn new(design: &GroupSequentialDesign) -> Result<Self> {
        let evaluator = DesignEvaluator::new(design)?
            .with_integrator(MvnIntegrator::new(ROOT_ABS_TOL, crate::mvnorm::DEFAULT_SEED));
        Ok(Self { evaluator })
    }

    pub fn with_integrator(mut self, integrator: MvnIntegrator) -> Self {
        self.evaluator = self.evaluator.with_integrator(integrator);
        self
    }

    pub fn design(&self) -> &GroupSequentialDesign {
        self.evaluator.design()
    }

    pub fn result(&self, gamma: usize, z: f64) -> Result<TrialResult> {
        TrialResult::new(self.design(), gamma, z)
    }

    /// Probability under `tau` of a result at least as extreme as `(gamma, z)`.
    pub fn exceedance(&self, tau: f64, gamma: usize, z: f64) -> Result<f64> {
        check_gamma(self.design(), gamma)?;
        let integrator = *self.evaluator.integrator();
        let mut total = 0.0;
        for j in 1..gamma {
            total += self
                .evaluator
                .outcome_probability(tau, OutcomeLabel { gamma: j, psi: Decision::Reject })?
                .value;
        }
        total += self
            .evaluator
            .stage_probability(tau, gamma, z, f64::INFINITY, &integrator)?
            .value;
        Ok(total.clamp(0.0, 1.0))
    }

    pub fn p_value(&self, result: &TrialResult) -> Result<f64> {
        self.exceedance(0.0, result.gamma, result.z)
    }

    /// τ solving `E(τ | γ, z) = target`.
    pub fn root(&self, result: &TrialResult, target: f64) -> Result<f64> {
        check_level(target)?;
        let g = |tau: f64| -> Result<f64> {
            Ok(self.exceedance(tau, result.gamma, result.z)? - target)
        };
        let centre = result.tau_hat_mle;
        let se = 1.0 / result.info.sqrt();
        let mut widths = INITIAL_BRACKET_WIDTHS;
        loop {
            let (a, b) = (centre - widths * se, centre + widths * se);
            let (ga, gb) = (g(a)?, g(b)?);
            if ga.abs() <= EXACT_TOL {
                return Ok(a);
            }
            if gb.abs() <= EXACT_TOL {
                return Ok(b);
            }
            if ga < 0.0 && gb > 0.0 {
                let x = solve_bracketed(g, a, b, ga, gb, STEP_TOL * se)?;
                let gx = g(x)?;
                if gx.abs() > ROOT_TOL {
                    return Err(Error::RootNotFound(format!(
                        "E - {target} = {gx} at the converged point {x}"
                    )));
                }
                return Ok(x);
            }
            if ga > 0.0 && gb < 0.0 {
                return Err(Error::RootNotFound(format!(
                    "E is decreasing in tau on [{a}, {b}]"
                )));
            }
            widths *= 2.0;
            if widths > MAX_BRACKET_WIDTHS {
                return Err(Error::RootNotFound(format!(
                    "no sign change of E - {target} within {MAX_BRACKET_WIDTHS} standard errors of {centre}"
                )));
            }
        }
    }

    pub fn median_unbiased(&self, result: &TrialResult) -> Result<f64> {
        self.root(result, 0.5)
    }

    pub fn ci_lower(&self, result: &TrialResult, alpha: f64) -> Result<f64> {
        self.root(result, alpha)
    }

    pub fn report(&self, result: &TrialResult, alpha: f64) -> Result<InferenceReport> {
        let naive = naive_inference(result, alpha)?;
        Ok(InferenceReport {
            estimate_naive: naive.estimate,
            p_naive: naive.p_value,
            ci_lower_naive: naive.ci_lower,
            estimate_so: self.median_unbiased(result)?,
            p_so: self.p_value(result)?,
            ci_lower_so: self.ci_lower(result, alpha)?,
        })
    }
}

/// Regula falsi with the Illinois modification, falling back to bisection
/// whenever the interpolated point does not shrink the bracket enough.
fn solve_bracketed(
    g: impl Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    mut ga: f64,
    mut gb: f64,
    x_tol: f64,
) -> Result<f64> {
    let mut side = 0i8;
    for iter in 0..200 {
        let width = b - a;
        let mut x = if iter % 3 == 2 {
            0.5 * (a + b)
        } else {
            b - gb * (b - a) / (gb - ga)
        };
        if !(x > a && x < b) {
            x = 0.5 * (a + b);
        }
        let gx = g(x)?;
        if gx.abs() <= EXACT_TOL || width <= x_tol {
            return Ok(x);
        }
        if gx < 0.0 {
            a = x;
            ga = gx;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = x;
            gb = gx;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Err(Error::RootNotFound("root iteration did not converge".into()))
}

pub fn stagewise_exceedance(
    tau: f64,
    gamma: usize,
    z: f64,
    design: &GroupSequentialDesign,
) -> Result<f64> {
    Analyzer::new(design)?.exceedance(tau, gamma, z)
}

pub fn so_p_value(result: &TrialResult) -> Result<f64> {
    Analyzer::new(&result.design)?.p_value(result)
}

pub fn so_root(result: &TrialResult, target: f64) -> Result<f64> {
    Analyzer::new(&result.design)?.root(result, target)
}

/// Full inference report for `result`.
pub fn analyze(result: &TrialResult, alpha: f64) -> Result<InferenceReport> {
    Analyzer::new(&result.design)?.report(result, alpha)
}
