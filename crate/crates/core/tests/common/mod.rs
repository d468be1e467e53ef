//! Reference computations shared by the integration tests. Nothing in here
//! calls into the crate's integration or information code.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

pub fn configs() -> std::path::PathBuf {
    std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs")
}

pub fn design_path(name: &str) -> std::path::PathBuf {
    configs().join("designs").join(format!("{name}.toml"))
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).unwrap()
}

pub fn phi(x: f64) -> f64 {
    std_normal().pdf(x)
}

pub fn cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn sf(x: f64) -> f64 {
    std_normal().sf(x)
}

/// Gauss–Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Composite 16-point Gauss–Legendre rule with panels of width ≤ `h`.
pub struct Quadrature {
    x: Vec<f64>,
    w: Vec<f64>,
    h: f64,
}

impl Quadrature {
    pub fn new(h: f64) -> Self {
        let (x, w) = gauss_legendre(16);
        Self { x, w, h }
    }

    /// Nodes and weights covering [a, b].
    pub fn rule(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        if b <= a || b.is_nan() || a.is_nan() {
            return Vec::new();
        }
        let panels = ((b - a) / self.h).ceil().max(1.0) as usize;
        let width = (b - a) / panels as f64;
        let mut out = Vec::with_capacity(panels * self.x.len());
        for p in 0..panels {
            let mid = a + (p as f64 + 0.5) * width;
            for (xi, wi) in self.x.iter().zip(&self.w) {
                out.push((mid + 0.5 * width * xi, 0.5 * width * wi));
            }
        }
        out
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.rule(a, b).into_iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Beyond this many standard deviations from the mean the density is dropped.
pub const CUTOFF: f64 = 12.0;

fn clip(a: f64, b: f64, mean: f64) -> (f64, f64) {
    (a.max(mean - CUTOFF), b.min(mean + CUTOFF))
}

/// `P(a < Z < b)` for `Z ~ N(mean, 1)` by quadrature of the density.
pub fn interval_probability(a: f64, b: f64, mean: f64) -> f64 {
    let (a, b) = clip(a, b, mean);
    Quadrature::new(0.25).integrate(a, b, |z| phi(z - mean))
}

/// `P(a1 < Z1 < b1, a2 < Z2 < b2)` for unit-variance normals with correlation
/// `rho`, by dense tensor-product quadrature of the bivariate density.
pub fn box_probability(
    (a1, b1): (f64, f64),
    (a2, b2): (f64, f64),
    mean: (f64, f64),
    rho: f64,
) -> f64 {
    let (a1, b1) = clip(a1, b1, mean.0);
    let (a2, b2) = clip(a2, b2, mean.1);
    let q = Quadrature::new(0.25);
    let r1 = q.rule(a1, b1);
    let r2 = q.rule(a2, b2);
    let s2 = 1.0 - rho * rho;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * s2.sqrt());
    let mut total = 0.0;
    for &(x, wx) in &r1 {
        let u = x - mean.0;
        let mut inner = 0.0;
        for &(y, wy) in &r2 {
            let v = y - mean.1;
            inner += wy * (-(u * u - 2.0 * rho * u * v + v * v) / (2.0 * s2)).exp();
        }
        total += wx * inner;
    }
    norm * total
}

/// Two-analysis group sequential test on the Z scale.
#[derive(Debug, Clone, Copy)]
pub struct TwoStage {
    pub info: [f64; 2],
    pub f1: f64,
    pub e1: f64,
    pub e2: f64,
}

impl TwoStage {
    pub fn means(&self, tau: f64) -> (f64, f64) {
        (tau * self.info[0].sqrt(), tau * self.info[1].sqrt())
    }

    pub fn rho(&self) -> f64 {
        (self.info[0] / self.info[1]).sqrt()
    }

    /// `P(Γ = gamma, Ψ = psi)`, psi = 1 for rejection.
    pub fn outcome(&self, tau: f64, gamma: usize, psi: u8) -> f64 {
        let (m1, m2) = self.means(tau);
        match (gamma, psi) {
            (1, 0) => interval_probability(f64::NEG_INFINITY, self.f1, m1),
            (1, 1) => interval_probability(self.e1, f64::INFINITY, m1),
            (2, 0) => box_probability((self.f1, self.e1), (f64::NEG_INFINITY, self.e2), (m1, m2), self.rho()),
            (2, 1) => box_probability((self.f1, self.e1), (self.e2, f64::INFINITY), (m1, m2), self.rho()),
            _ => panic!("no such outcome"),
        }
    }

    /// Stage-wise ordering exceedance probability of `(gamma, z)`.
    pub fn exceedance(&self, tau: f64, gamma: usize, z: f64) -> f64 {
        let (m1, m2) = self.means(tau);
        match gamma {
            1 => interval_probability(z, f64::INFINITY, m1),
            2 => {
                self.outcome(tau, 1, 1)
                    + box_probability((self.f1, self.e1), (z, f64::INFINITY), (m1, m2), self.rho())
            }
            _ => panic!("no such analysis"),
        }
    }

    /// τ with `exceedance(τ) = target`, by bisection.
    pub fn root(&self, gamma: usize, z: f64, target: f64, lo: f64, hi: f64) -> f64 {
        let (mut a, mut b) = (lo, hi);
        assert!(self.exceedance(a, gamma, z) < target && self.exceedance(b, gamma, z) > target);
        while b - a > 1e-10 {
            let mid = 0.5 * (a + b);
            if self.exceedance(mid, gamma, z) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

/// Treatment information by explicit GLS on cluster-period means: rows are
/// (cluster, period) cells, columns are intercept, period dummies and
/// treatment.
pub fn gls_information(switch: &[usize], m: usize, t: usize, sigma_c2: f64, sigma_e2: f64) -> f64 {
    let c_n = switch.len();
    let p = t + 1;
    let mut d = DMatrix::<f64>::zeros(c_n * t, p);
    for c in 0..c_n {
        for j in 0..t {
            let row = c * t + j;
            d[(row, 0)] = 1.0;
            if j > 0 {
                d[(row, j)] = 1.0;
            }
            if j + 1 >= switch[c] {
                d[(row, p - 1)] = 1.0;
            }
        }
    }
    let mut sigma = DMatrix::<f64>::zeros(c_n * t, c_n * t);
    for c in 0..c_n {
        for j in 0..t {
            for k in 0..t {
                sigma[(c * t + j, c * t + k)] = sigma_c2 + if j == k { sigma_e2 / m as f64 } else { 0.0 };
            }
        }
    }
    let sinv = sigma.try_inverse().expect("covariance is invertible");
    let normal = d.transpose() * &sinv * &d;
    let inv = normal.try_inverse().expect("treatment effect is estimable");
    1.0 / inv[(p - 1, p - 1)]
}

/// Sample mean and covariance of rows.
pub fn sample_moments(rows: &[Vec<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mut mean = DVector::zeros(d);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        let x = DVector::from_column_slice(r) - &mean;
        cov += &x * x.transpose();
    }
    cov /= n - 1.0;
    (mean, cov)
}

/// Two-sided one-sample Kolmogorov–Smirnov statistic against U(0, 1).
pub fn ks_uniform(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i as f64 + 1.0) / n - v).max(v - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}
