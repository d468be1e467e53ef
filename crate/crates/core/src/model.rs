//! Domain types and the cross-sectional Hussey–Hughes model.
//!
//! Responses follow `y_cjk = μ + π_j + τ X_cj + c_c + ε_cjk` with cluster random
//! effects `c_c ~ N(0, σ_c²)` and residuals `ε ~ N(0, σ_e²)`. Observations are
//! ordered period-major (period, then cluster, then measurement) so the data
//! available after `t` periods is always a prefix of the full response vector.
//!
//! Switching times and analysis periods are 1-based, matching how trials are
//! described; matrix indices are 0-based.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition-number ceiling for the GLS normal equations.
pub const MAX_CONDITION: f64 = 1e12;

/// Variance components of the cross-sectional mixed model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceComponents {
    pub sigma_c2: f64,
    pub sigma_e2: f64,
}

impl VarianceComponents {
    pub fn new(sigma_c2: f64, sigma_e2: f64) -> Result<Self> {
        if !(sigma_c2 >= 0.0 && sigma_c2.is_finite()) {
            return Err(Error::constraint(format!(
                "sigma_c2 must be >= 0, got {sigma_c2}"
            )));
        }
        if !(sigma_e2 > 0.0 && sigma_e2.is_finite()) {
            return Err(Error::constraint(format!(
                "sigma_e2 must be > 0, got {sigma_e2}"
            )));
        }
        Ok(Self { sigma_c2, sigma_e2 })
    }

    /// Intra-cluster correlation `σ_c² / (σ_c² + σ_e²)`.
    pub fn icc(&self) -> f64 {
        self.sigma_c2 / (self.sigma_c2 + self.sigma_e2)
    }
}

/// Switching period of every cluster; `T + 1` means the cluster never switches.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AllocationSchedule {
    switch_times: Vec<usize>,
    periods: usize,
}

impl AllocationSchedule {
    pub fn new(switch_times: Vec<usize>, periods: usize) -> Result<Self> {
        Self::check(&switch_times, periods)?;
        Ok(Self {
            switch_times,
            periods,
        })
    }

    /// Validates a candidate switching vector without building it.
    pub fn check(switch_times: &[usize], periods: usize) -> Result<()> {
        let clusters = switch_times.len();
        if clusters < 2 {
            return Err(Error::constraint(format!(
                "at least two clusters required, got {clusters}"
            )));
        }
        if periods < 2 {
            return Err(Error::constraint(format!(
                "at least two periods required, got {periods}"
            )));
        }
        if let Some((c, s)) = switch_times
            .iter()
            .enumerate()
            .find(|(_, &s)| s < 1 || s > periods + 1)
        {
            return Err(Error::constraint(format!(
                "switching time of cluster {} is {s}, outside 1..={}",
                c + 1,
                periods + 1
            )));
        }
        let first = switch_times[0];
        if switch_times.iter().all(|&s| s == first) {
            return Err(if first <= periods {
                Error::constraint(format!("all clusters switch in period {first}"))
            } else {
                Error::constraint("at least two distinct switching times required")
            });
        }
        Ok(())
    }

    pub fn clusters(&self) -> usize {
        self.switch_times.len()
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn switch_times(&self) -> &[usize] {
        &self.switch_times
    }

    pub fn earliest_switch(&self) -> usize {
        *self.switch_times.iter().min().expect("non-empty")
    }

    /// Same schedule with clusters sorted by switching time.
    pub fn canonical(&self) -> Self {
        let mut s = self.switch_times.clone();
        s.sort_unstable();
        Self {
            switch_times: s,
            periods: self.periods,
        }
    }

    pub fn treatment_matrix(&self) -> TreatmentMatrix {
        build_treatment_matrix(self)
    }
}

/// Binary `C × T` treatment indicator matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentMatrix {
    clusters: usize,
    periods: usize,
    cells: Vec<bool>,
}

impl TreatmentMatrix {
    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Indicator for cluster `c` (0-based) in period index `j` (0-based).
    #[inline]
    pub fn get(&self, c: usize, j: usize) -> bool {
        self.cells[c * self.periods + j]
    }

    pub fn row(&self, c: usize) -> &[bool] {
        &self.cells[c * self.periods..(c + 1) * self.periods]
    }

    /// Number of treated clusters in each period.
    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.periods)
            .map(|j| (0..self.clusters).filter(|&c| self.get(c, j)).count())
            .collect()
    }
}

/// `X_{c,t} = 1` iff `t >= S_c`.
pub fn build_treatment_matrix(schedule: &AllocationSchedule) -> TreatmentMatrix {
    let periods = schedule.periods;
    let cells = schedule
        .switch_times
        .iter()
        .flat_map(|&s| (1..=periods).map(move |t| t >= s))
        .collect();
    TreatmentMatrix {
        clusters: schedule.clusters(),
        periods,
        cells,
    }
}

/// Periods after which interim (and the final) analyses take place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisSchedule(Vec<usize>);

impl AnalysisSchedule {
    pub fn new(analysis_periods: Vec<usize>, periods: usize) -> Result<Self> {
        if analysis_periods.is_empty() {
            return Err(Error::constraint("analysis schedule is empty"));
        }
        if analysis_periods[0] < 1 || analysis_periods.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::constraint(format!(
                "analysis periods must be strictly increasing from 1, got {analysis_periods:?}"
            )));
        }
        if *analysis_periods.last().unwrap() != periods {
            return Err(Error::constraint(format!(
                "final analysis must follow period {periods}, got {analysis_periods:?}"
            )));
        }
        Ok(Self(analysis_periods))
    }

    pub fn periods(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }
}

/// Futility and efficacy boundaries on the standardised scale.
///
/// The final efficacy bound is not stored separately; it is the final futility
/// bound, so `f_K = e_K` holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingBoundaries {
    futility: Vec<f64>,
    efficacy_interim: Vec<f64>,
}

impl StoppingBoundaries {
    /// Builds from full-length `f` and `e`; the final entries must coincide.
    pub fn new(futility: Vec<f64>, efficacy: Vec<f64>) -> Result<Self> {
        let k = futility.len();
        if k == 0 || efficacy.len() != k {
            return Err(Error::constraint(format!(
                "boundary lengths differ: {} futility vs {} efficacy",
                k,
                efficacy.len()
            )));
        }
        if futility[k - 1] != efficacy[k - 1] {
            return Err(Error::constraint(format!(
                "final futility {} and efficacy {} bounds must be equal",
                futility[k - 1],
                efficacy[k - 1]
            )));
        }
        let mut efficacy = efficacy;
        efficacy.pop();
        Self::from_parts(futility, efficacy)
    }

    /// Builds from futility bounds and positive gaps `r_i = e_i - f_i` (i < K).
    pub fn from_gaps(futility: Vec<f64>, gaps: &[f64]) -> Result<Self> {
        if gaps.len() + 1 != futility.len() {
            return Err(Error::constraint("need one gap per interim analysis"));
        }
        let efficacy = futility.iter().zip(gaps).map(|(f, r)| f + r).collect();
        Self::from_parts(futility, efficacy)
    }

    fn from_parts(futility: Vec<f64>, efficacy_interim: Vec<f64>) -> Result<Self> {
        if futility.iter().chain(&efficacy_interim).any(|v| v.is_nan()) {
            return Err(Error::constraint("boundary is NaN"));
        }
        if !futility.last().unwrap().is_finite() {
            return Err(Error::constraint("final boundary must be finite"));
        }
        for (i, (f, e)) in futility.iter().zip(&efficacy_interim).enumerate() {
            if !(f < e) {
                return Err(Error::constraint(format!(
                    "analysis {}: futility bound {f} must be below efficacy bound {e}",
                    i + 1
                )));
            }
        }
        Ok(Self {
            futility,
            efficacy_interim,
        })
    }

    pub fn len(&self) -> usize {
        self.futility.len()
    }

    pub fn is_empty(&self) -> bool {
        self.futility.is_empty()
    }

    /// Futility bound of analysis `i` (0-based).
    #[inline]
    pub fn futility(&self, i: usize) -> f64 {
        self.futility[i]
    }

    /// Efficacy bound of analysis `i` (0-based).
    #[inline]
    pub fn efficacy(&self, i: usize) -> f64 {
        if i + 1 == self.futility.len() {
            self.futility[i]
        } else {
            self.efficacy_interim[i]
        }
    }

    pub fn futility_bounds(&self) -> &[f64] {
        &self.futility
    }

    pub fn efficacy_bounds(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.efficacy(i)).collect()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.futility
            .iter()
            .zip(&self.efficacy_interim)
            .map(|(f, e)| e - f)
            .collect()
    }
}

/// A complete group sequential stepped-wedge design.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSequentialDesign {
    pub allocation: AllocationSchedule,
    pub schedule: AnalysisSchedule,
    pub boundaries: StoppingBoundaries,
    pub m: usize,
    pub vc: VarianceComponents,
}

impl GroupSequentialDesign {
    pub fn new(
        allocation: AllocationSchedule,
        schedule: AnalysisSchedule,
        boundaries: StoppingBoundaries,
        m: usize,
        vc: VarianceComponents,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::constraint(format!(
                "m must be at least 2, got {m}"
            )));
        }
        if *schedule.periods().last().unwrap() != allocation.periods() {
            return Err(Error::constraint(
                "final analysis period differs from the number of periods",
            ));
        }
        if boundaries.len() != schedule.len() {
            return Err(Error::constraint(format!(
                "{} analyses but {} boundary pairs",
                schedule.len(),
                boundaries.len()
            )));
        }
        if allocation.earliest_switch() > schedule.first() {
            return Err(Error::constraint(format!(
                "no cluster is treated by the first analysis (period {})",
                schedule.first()
            )));
        }
        Ok(Self {
            allocation,
            schedule,
            boundaries,
            m,
            vc,
        })
    }

    pub fn clusters(&self) -> usize {
        self.allocation.clusters()
    }

    pub fn periods(&self) -> usize {
        self.allocation.periods()
    }

    pub fn analyses(&self) -> usize {
        self.schedule.len()
    }

    /// `m C t_i` for analysis `i` (0-based).
    pub fn measurements_at(&self, i: usize) -> f64 {
        (self.m * self.clusters() * self.schedule.periods()[i]) as f64
    }

    /// `m C T`.
    pub fn max_measurements(&self) -> f64 {
        (self.m * self.clusters() * self.periods()) as f64
    }

    pub fn treatment_matrix(&self) -> TreatmentMatrix {
        self.allocation.treatment_matrix()
    }

    /// Fisher information for τ at every analysis.
    pub fn information(&self) -> Result<Vec<f64>> {
        let x = self.treatment_matrix();
        self.schedule
            .periods()
            .iter()
            .map(|&t| information_closed_form(&x, self.m, t, &self.vc))
            .collect()
    }

    pub fn statistic_covariance(&self) -> Result<StatisticCovariance> {
        statistic_covariance(self)
    }
}

/// Mean scale and correlation of the standardised statistics `(Z_1, …, Z_K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticCovariance {
    pub information: Vec<f64>,
    pub sqrt_info: Vec<f64>,
    pub lambda: DMatrix<f64>,
}

impl StatisticCovariance {
    pub fn from_information(information: &[f64]) -> Self {
        let k = information.len();
        let sqrt_info: Vec<f64> = information.iter().map(|i| i.sqrt()).collect();
        let lambda = DMatrix::from_fn(k, k, |i, j| {
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            (information[lo] / information[hi]).sqrt()
        });
        Self {
            information: information.to_vec(),
            sqrt_info,
            lambda,
        }
    }

    /// Λ restricted to the first `gamma` analyses.
    pub fn leading(&self, gamma: usize) -> DMatrix<f64> {
        self.lambda.view((0, 0), (gamma, gamma)).into_owned()
    }
}

/// `(I^{1/2}, Λ)` with `Λ_ij = (I_i / I_j)^{1/2}` for `i ≤ j`.
pub fn statistic_covariance(design: &GroupSequentialDesign) -> Result<StatisticCovariance> {
    Ok(StatisticCovariance::from_information(&design.information()?))
}

/// Scenario-level inputs: error rates, effect size, weights and the reference size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub clusters: usize,
    pub periods: usize,
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub vc: VarianceComponents,
    /// Measurements required by the fixed-sample near-balanced design.
    pub m_sw: f64,
    pub weights: [f64; 3],
    pub schedule: AnalysisSchedule,
}

impl ScenarioSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        clusters: usize,
        periods: usize,
        alpha: f64,
        beta: f64,
        delta: f64,
        vc: VarianceComponents,
        m_sw: f64,
        weights: [f64; 3],
        schedule: AnalysisSchedule,
    ) -> Result<Self> {
        if clusters < 2 || periods < 2 {
            return Err(Error::constraint("need C >= 2 and T >= 2"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::constraint(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::constraint(format!("beta must lie in (0,1), got {beta}")));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::constraint(format!("delta must be > 0, got {delta}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::constraint(format!(
                "weights must be non-negative, got {weights:?}"
            )));
        }
        if !(m_sw > 0.0 && m_sw.is_finite()) {
            return Err(Error::constraint(format!("M_SW must be > 0, got {m_sw}")));
        }
        if *schedule.periods().last().unwrap() != periods {
            return Err(Error::constraint("final analysis must follow period T"));
        }
        Ok(Self {
            clusters,
            periods,
            alpha,
            beta,
            delta,
            vc,
            m_sw,
            weights,
            schedule,
        })
    }
}

/// Fixed effects `β = (μ, π_2, …, π_T, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffects {
    pub mu: f64,
    pub period_effects: Vec<f64>,
    pub tau: f64,
}

impl FixedEffects {
    pub fn new(mu: f64, period_effects: Vec<f64>, tau: f64, periods: usize) -> Result<Self> {
        if period_effects.len() + 1 != periods {
            return Err(Error::constraint(format!(
                "expected {} period effects, got {}",
                periods - 1,
                period_effects.len()
            )));
        }
        Ok(Self {
            mu,
            period_effects,
            tau,
        })
    }

    /// Intercept and period effects zero.
    pub fn null_nuisance(periods: usize, tau: f64) -> Self {
        Self {
            mu: 0.0,
            period_effects: vec![0.0; periods - 1],
            tau,
        }
    }

    /// Coefficient vector for a model fitted to the first `t` periods.
    pub fn coefficients(&self, t: usize) -> DVector<f64> {
        let mut v = Vec::with_capacity(t + 1);
        v.push(self.mu);
        v.extend_from_slice(&self.period_effects[..t - 1]);
        v.push(self.tau);
        DVector::from_vec(v)
    }

    /// Mean response of cluster `c` in period index `j` (0-based).
    pub fn cell_mean(&self, x: &TreatmentMatrix, c: usize, j: usize) -> f64 {
        let period = if j == 0 { 0.0 } else { self.period_effects[j - 1] };
        self.mu + period + if x.get(c, j) { self.tau } else { 0.0 }
    }
}

fn check_periods(x: &TreatmentMatrix, t: usize) -> Result<()> {
    if t < 1 || t > x.periods() {
        return Err(Error::OutOfRange(format!(
            "period count {t} outside 1..={}",
            x.periods()
        )));
    }
    Ok(())
}

fn fill_design_row(row: &mut [f64], x: &TreatmentMatrix, c: usize, j: usize, t: usize) {
    row[0] = 1.0;
    if j >= 1 {
        row[j] = 1.0;
    }
    row[t] = if x.get(c, j) { 1.0 } else { 0.0 };
}

/// Individual-level design matrix for the first `t` periods.
///
/// Columns: intercept, dummies for periods `2..=t`, treatment (last). Period
/// dummies beyond `t` are dropped since they are identically zero, so `D_t`
/// has `t + 1` columns and equals the leading rows of `D_T` on those columns.
pub fn build_design_matrix(x: &TreatmentMatrix, m: usize, t: usize) -> Result<DMatrix<f64>> {
    check_periods(x, t)?;
    let c_n = x.clusters();
    let mut d = DMatrix::zeros(m * c_n * t, t + 1);
    let mut buf = vec![0.0; t + 1];
    for j in 0..t {
        for c in 0..c_n {
            buf.iter_mut().for_each(|v| *v = 0.0);
            fill_design_row(&mut buf, x, c, j, t);
            for k in 0..m {
                let r = (j * c_n + c) * m + k;
                for (col, v) in buf.iter().enumerate() {
                    d[(r, col)] = *v;
                }
            }
        }
    }
    Ok(d)
}

/// Individual-level covariance for the first `t` periods (exchangeable within cluster).
pub fn build_covariance(clusters: usize, m: usize, t: usize, vc: &VarianceComponents) -> DMatrix<f64> {
    let n = m * clusters * t;
    let cluster_of = |r: usize| (r / m) % clusters;
    DMatrix::from_fn(n, n, |r, s| {
        let mut v = 0.0;
        if cluster_of(r) == cluster_of(s) {
            v += vc.sigma_c2;
        }
        if r == s {
            v += vc.sigma_e2;
        }
        v
    })
}

/// Design matrix for cluster-period means (one row per cluster-period).
pub fn build_collapsed_design_matrix(x: &TreatmentMatrix, t: usize) -> Result<DMatrix<f64>> {
    check_periods(x, t)?;
    let c_n = x.clusters();
    let mut d = DMatrix::zeros(c_n * t, t + 1);
    let mut buf = vec![0.0; t + 1];
    for j in 0..t {
        for c in 0..c_n {
            buf.iter_mut().for_each(|v| *v = 0.0);
            fill_design_row(&mut buf, x, c, j, t);
            for (col, v) in buf.iter().enumerate() {
                d[(j * c_n + c, col)] = *v;
            }
        }
    }
    Ok(d)
}

/// Covariance of cluster-period means: `σ_e²/m + σ_c²` on the diagonal,
/// `σ_c²` between periods of the same cluster.
pub fn build_collapsed_covariance(
    clusters: usize,
    m: usize,
    t: usize,
    vc: &VarianceComponents,
) -> DMatrix<f64> {
    let n = clusters * t;
    let cell = vc.sigma_e2 / m as f64;
    DMatrix::from_fn(n, n, |r, s| {
        let mut v = 0.0;
        if r % clusters == s % clusters {
            v += vc.sigma_c2;
        }
        if r == s {
            v += cell;
        }
        v
    })
}

/// Closed-form information for τ from the first `t` periods (Hussey & Hughes).
pub fn information_closed_form(
    x: &TreatmentMatrix,
    m: usize,
    t: usize,
    vc: &VarianceComponents,
) -> Result<f64> {
    check_periods(x, t)?;
    let c_n = x.clusters();
    let row_sums: Vec<f64> = (0..c_n)
        .map(|c| x.row(c)[..t].iter().filter(|&&v| v).count() as f64)
        .collect();
    let u: f64 = row_sums.iter().sum();
    if u == 0.0 {
        return Err(Error::NotEstimable(format!(
            "no cluster treated within the first {t} periods"
        )));
    }
    if u == (c_n * t) as f64 {
        return Err(Error::NotEstimable(format!(
            "every cluster treated throughout the first {t} periods"
        )));
    }
    let v: f64 = row_sums.iter().map(|r| r * r).sum();
    let w: f64 = (0..t)
        .map(|j| ((0..c_n).filter(|&c| x.get(c, j)).count() as f64).powi(2))
        .sum();
    let c = c_n as f64;
    let tf = t as f64;
    let s2 = vc.sigma_e2 / m as f64;
    let sc2 = vc.sigma_c2;
    let num = (s2 + tf * sc2) * (c * u - w) + sc2 * (u * u - c * v);
    let info = num / (c * s2 * (s2 + tf * sc2));
    // relative to the information of a single cell mean
    if !(info * s2 > 1e-10) {
        return Err(Error::NotEstimable(format!(
            "treatment confounded with period effects within the first {t} periods"
        )));
    }
    Ok(info)
}

/// `(Dᵀ Σ⁻¹ D)⁻¹` and `Σ⁻¹ D`, with a rank guard on the normal equations.
pub fn gls_normal_inverse(
    d: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if d.nrows() != sigma.nrows() || sigma.nrows() != sigma.ncols() {
        return Err(Error::domain("design and covariance dimensions differ"));
    }
    let chol = sigma
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite)?;
    let sinv_d = chol.solve(d);
    let normal = d.transpose() * &sinv_d;
    let normal = (&normal + normal.transpose()) * 0.5;
    let eig = normal.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(*v));
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return Err(Error::NotEstimable(format!(
            "normal equations singular or ill-conditioned (eigenvalues {min:e}..{max:e})"
        )));
    }
    let inv = normal
        .cholesky()
        .ok_or_else(|| Error::NotEstimable("normal equations not invertible".into()))?
        .inverse();
    Ok((inv, sinv_d))
}

/// `I = 1 / [(Dᵀ Σ⁻¹ D)⁻¹]_{p,p}` with τ in the last column of `D`.
pub fn information_generic(d: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let (inv, _) = gls_normal_inverse(d, sigma)?;
    let p = inv.nrows();
    Ok(1.0 / inv[(p - 1, p - 1)])
}
