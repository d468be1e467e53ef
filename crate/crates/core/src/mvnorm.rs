//! Standard and multivariate normal probability kernels.
//!
//! Rectangle probabilities `P(lower < Y <= upper)` for `Y ~ N(mean, cov)` are
//! computed by separation of variables (Genz's sequential conditioning on the
//! Cholesky factor). The trailing pair of conditional variables is handled in
//! closed form with a bivariate normal orthant routine. Dimensions one and two
//! are therefore exact, dimension three integrates the single leading variable
//! by adaptive Gauss-Legendre quadrature, and higher dimensions use a
//! randomised rank-1 lattice rule over the leading `d - 2` variables.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::error::{Error, Result};

/// Default absolute tolerance for operating-characteristic integrals.
pub const DEFAULT_ABS_TOL: f64 = 1e-6;
/// Tighter tolerance used for integrals evaluated inside root searches.
pub const ROOT_ABS_TOL: f64 = 1e-7;
/// Default integrator seed.
pub const DEFAULT_SEED: u64 = 0;

const RANDOM_SHIFTS: usize = 12;
const ERROR_MULTIPLIER: f64 = 3.0;
const BIVARIATE_ACCURACY: f64 = 1e-15;
const TRIVARIATE_TRUNCATION: f64 = 8.5;
const TRIVARIATE_PANEL: f64 = 3.0;
const TRIVARIATE_MAX_PANELS: usize = 512;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal distribution function `Φ(z)`.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(z)`, accurate far into the right tail.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)` for `0 < p < 1`.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "normal quantile requires 0 < p < 1, got {p}"
        )));
    }
    Ok(quantile_unchecked(p))
}

#[inline]
fn quantile_unchecked(p: f64) -> f64 {
    if p > 0.5 {
        return -quantile_unchecked(1.0 - p);
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // one Halley step against the lower tail
    let e = (std_normal_cdf(x) - p) / std_normal_pdf(x);
    x - e / (1.0 + 0.5 * x * e)
}

/// `Φ(b) - Φ(a)` evaluated on whichever tail keeps the difference accurate.
#[inline]
pub fn std_normal_interval(a: f64, b: f64) -> f64 {
    if a >= b {
        return 0.0;
    }
    if a > 0.0 {
        std_normal_sf(a) - std_normal_sf(b)
    } else {
        std_normal_cdf(b) - std_normal_cdf(a)
    }
}

// Gauss-Legendre half-rules (negative abscissae) used by the bivariate routine.
const GL_W: [&[f64]; 3] = [
    &[0.1713244923791705, 0.3607615730481384, 0.4679139345726904],
    &[
        0.04717533638651177,
        0.1069393259953183,
        0.1600783285433464,
        0.2031674267230659,
        0.2334925365383547,
        0.2491470458134029,
    ],
    &[
        0.01761400713915212,
        0.04060142980038694,
        0.06267204833410906,
        0.08327674157670475,
        0.1019301198172404,
        0.1181945319615184,
        0.1316886384491766,
        0.1420961093183821,
        0.1491729864726037,
        0.1527533871307259,
    ],
];
const GL_X: [&[f64]; 3] = [
    &[-0.9324695142031522, -0.6612093864662647, -0.238619186083197],
    &[
        -0.9815606342467191,
        -0.904117256370475,
        -0.769902674194305,
        -0.5873179542866171,
        -0.3678314989981802,
        -0.1252334085114692,
    ],
    &[
        -0.9931285991850949,
        -0.9639719272779138,
        -0.912234428251326,
        -0.8391169718222188,
        -0.7463319064601508,
        -0.636053680726515,
        -0.5108670019508271,
        -0.3737060887154196,
        -0.2277858511416451,
        -0.07652652113349733,
    ],
];

/// Upper orthant probability `P(X > h, Y > k)` for standard bivariate normal
/// `(X, Y)` with correlation `r` (Drezner–Wesolowsky as refined by Genz).
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            std_normal_sf(k)
        };
    }
    if k == f64::NEG_INFINITY {
        return std_normal_sf(h);
    }
    let two_pi = 2.0 * PI;
    let rule = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, x) = (GL_W[rule], GL_X[rule]);
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for (wi, xi) in w.iter().zip(x) {
            let sn = (asr * (xi + 1.0) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (1.0 - xi) / 2.0).sin();
            bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        bvn * asr / (2.0 * two_pi) + std_normal_sf(h) * std_normal_sf(k)
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k).powi(2);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            bvn = a
                * (-(bs / as_ + hk) / 2.0).exp()
                * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            if hk > -160.0 {
                let b = bs.sqrt();
                bvn -= (-hk / 2.0).exp()
                    * two_pi.sqrt()
                    * std_normal_cdf(-b / a)
                    * b
                    * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a /= 2.0;
            for (wi, xi) in w.iter().zip(x) {
                for xs in [(a * (xi + 1.0)).powi(2), (a * (1.0 - xi)).powi(2)] {
                    let rs = (1.0 - xs).sqrt();
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        bvn += a
                            * wi
                            * asr.exp()
                            * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                                - (1.0 + c * xs * (1.0 + d * xs)));
                    }
                }
            }
            bvn = -bvn / two_pi;
        }
        if r > 0.0 {
            bvn + std_normal_sf(h.max(k))
        } else {
            -bvn + (std_normal_sf(h) - std_normal_sf(k)).max(0.0)
        }
    }
}

/// 20-point Gauss-Legendre on `panels` equal sub-intervals of `[lo, hi]`.
fn composite_gauss_legendre(g: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for (wi, xi) in GL_W[2].iter().zip(GL_X[2]) {
            acc += wi * (g(mid + half * xi) + g(mid - half * xi));
        }
        total += acc * half;
    }
    total
}

/// `P(a0 < X <= b0, a1 < Y <= b1)` for a standard bivariate normal with correlation `r`.
pub fn bvn_rectangle(a0: f64, b0: f64, a1: f64, b1: f64, r: f64) -> f64 {
    if a0 >= b0 || a1 >= b1 {
        return 0.0;
    }
    let p = bvn_upper(a0, a1, r) - bvn_upper(a0, b1, r) - bvn_upper(b0, a1, r)
        + bvn_upper(b0, b1, r);
    p.clamp(0.0, 1.0)
}

/// A rectangle probability together with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RectangleProbability {
    pub value: f64,
    pub error_estimate: f64,
}

/// Randomised quasi-Monte Carlo rectangle integrator.
#[derive(Debug, Clone, Copy)]
pub struct MvnIntegrator {
    pub abs_tol: f64,
    pub seed: u64,
    /// Upper bound on lattice points per random shift.
    pub max_points: usize,
}

impl Default for MvnIntegrator {
    fn default() -> Self {
        Self {
            abs_tol: DEFAULT_ABS_TOL,
            seed: DEFAULT_SEED,
            max_points: 1 << 17,
        }
    }
}

impl MvnIntegrator {
    pub fn new(abs_tol: f64, seed: u64) -> Self {
        Self {
            abs_tol,
            seed,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    /// `P(lower < Y <= upper)` for `Y ~ N(mean, cov)`; limits may be infinite.
    pub fn rectangle(
        &self,
        lower: &[f64],
        upper: &[f64],
        mean: &[f64],
        cov: &DMatrix<f64>,
    ) -> Result<RectangleProbability> {
        let d = lower.len();
        if d == 0 || upper.len() != d || mean.len() != d || cov.nrows() != d || cov.ncols() != d
        {
            return Err(Error::domain("mismatched dimensions in rectangle probability"));
        }
        let mut a = Vec::with_capacity(d);
        let mut b = Vec::with_capacity(d);
        for i in 0..d {
            if lower[i].is_nan() || upper[i].is_nan() || !mean[i].is_finite() {
                return Err(Error::domain("NaN limit or non-finite mean"));
            }
            if lower[i] > upper[i] {
                return Err(Error::domain(format!(
                    "crossed limits in dimension {i}: {} > {}",
                    lower[i], upper[i]
                )));
            }
            a.push(lower[i] - mean[i]);
            b.push(upper[i] - mean[i]);
        }
        let chol = cov
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        if (0..d).any(|i| !(l[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        if (0..d).any(|i| a[i] >= b[i]) {
            return Ok(RectangleProbability {
                value: 0.0,
                error_estimate: 0.0,
            });
        }

        match d {
            1 => Ok(RectangleProbability {
                value: std_normal_interval(a[0] / l[(0, 0)], b[0] / l[(0, 0)]),
                error_estimate: 0.0,
            }),
            2 => {
                let s0 = l[(0, 0)];
                let s1 = (l[(1, 0)].powi(2) + l[(1, 1)].powi(2)).sqrt();
                let r = (s0 * l[(1, 0)] / (s0 * s1)).clamp(-1.0, 1.0);
                Ok(RectangleProbability {
                    value: bvn_rectangle(a[0] / s0, b[0] / s0, a[1] / s1, b[1] / s1, r),
                    error_estimate: BIVARIATE_ACCURACY,
                })
            }
            3 => Ok(self.trivariate(&a, &b, &l)),
            _ => Ok(self.lattice(&a, &b, &l)),
        }
    }

    /// Composite Gauss-Legendre over the first standardised coordinate with the
    /// conditional pair in closed form; panels are doubled until two successive
    /// rules agree to `abs_tol`.
    fn trivariate(&self, a: &[f64], b: &[f64], l: &DMatrix<f64>) -> RectangleProbability {
        let sov = Sov::new(a, b, l);
        let l00 = l[(0, 0)];
        let lo = (a[0] / l00).max(-TRIVARIATE_TRUNCATION);
        let hi = (b[0] / l00).min(TRIVARIATE_TRUNCATION);
        if lo >= hi {
            return RectangleProbability {
                value: 0.0,
                error_estimate: 0.0,
            };
        }
        let mut w = [0.0; 1];
        let mut g = |x: f64| {
            w[0] = x;
            std_normal_pdf(x) * sov.tail(&w)
        };
        let mut panels = ((hi - lo) / TRIVARIATE_PANEL).ceil().max(1.0) as usize;
        let mut prev = composite_gauss_legendre(&mut g, lo, hi, panels);
        loop {
            panels *= 2;
            let next = composite_gauss_legendre(&mut g, lo, hi, panels);
            let err = (next - prev).abs();
            if err <= self.abs_tol || panels >= TRIVARIATE_MAX_PANELS {
                return RectangleProbability {
                    value: next.clamp(0.0, 1.0),
                    error_estimate: err,
                };
            }
            prev = next;
        }
    }

    fn lattice(&self, a: &[f64], b: &[f64], l: &DMatrix<f64>) -> RectangleProbability {
        let sov = Sov::new(a, b, l);
        let dims = sov.sampled;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let generator: Vec<f64> = RICHTMYER_PRIMES[..dims.max(1)]
            .iter()
            .map(|&p| (p as f64).sqrt().fract())
            .collect();

        let mut n = 31usize;
        let mut work = vec![0.0; dims];
        let mut point = vec![0.0; dims];
        let mut best = RectangleProbability {
            value: 0.0,
            error_estimate: f64::INFINITY,
        };
        loop {
            let mut estimates = [0.0; RANDOM_SHIFTS];
            for est in estimates.iter_mut() {
                let shift: Vec<f64> = (0..dims).map(|_| rng.gen::<f64>()).collect();
                let mut sum = 0.0;
                for j in 0..n {
                    for (i, x) in point.iter_mut().enumerate() {
                        let raw = if dims == 1 {
                            (j as f64 / n as f64 + shift[i]).fract()
                        } else {
                            ((j + 1) as f64 * generator[i] + shift[i]).fract()
                        };
                        // periodising tent transform
                        *x = (2.0 * raw - 1.0).abs();
                    }
                    sum += sov.integrand(&point, &mut work);
                }
                *est = sum / n as f64;
            }
            let mean = estimates.iter().sum::<f64>() / RANDOM_SHIFTS as f64;
            let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                / (RANDOM_SHIFTS * (RANDOM_SHIFTS - 1)) as f64;
            let err = ERROR_MULTIPLIER * var.sqrt();
            if err < best.error_estimate {
                best = RectangleProbability {
                    value: mean.clamp(0.0, 1.0),
                    error_estimate: err,
                };
            }
            if err <= self.abs_tol || 2 * n + 1 > self.max_points {
                return best;
            }
            n = 2 * n + 1;
        }
    }
}

/// Convenience wrapper around [`MvnIntegrator::rectangle`].
pub fn mvn_rectangle(
    lower: &[f64],
    upper: &[f64],
    mean: &[f64],
    cov: &DMatrix<f64>,
    abs_tol: f64,
    seed: u64,
) -> Result<RectangleProbability> {
    MvnIntegrator::new(abs_tol, seed).rectangle(lower, upper, mean, cov)
}

const RICHTMYER_PRIMES: [u32; 30] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113,
];

/// Separation-of-variables integrand with the trailing two coordinates in closed form.
struct Sov<'a> {
    a: &'a [f64],
    b: &'a [f64],
    l: &'a DMatrix<f64>,
    sampled: usize,
    tail_sd: [f64; 2],
    tail_corr: f64,
}

impl<'a> Sov<'a> {
    fn new(a: &'a [f64], b: &'a [f64], l: &'a DMatrix<f64>) -> Self {
        let d = a.len();
        let k = d - 2;
        let (b00, b10, b11) = (l[(k, k)], l[(k + 1, k)], l[(k + 1, k + 1)]);
        let s0 = b00;
        let s1 = (b10 * b10 + b11 * b11).sqrt();
        Self {
            a,
            b,
            l,
            sampled: k,
            tail_sd: [s0, s1],
            tail_corr: (b10 / s1).clamp(-1.0, 1.0),
        }
    }

    fn integrand(&self, u: &[f64], w: &mut [f64]) -> f64 {
        let mut weight = 1.0;
        for i in 0..self.sampled {
            let shift: f64 = (0..i).map(|j| self.l[(i, j)] * w[j]).sum();
            let lii = self.l[(i, i)];
            let lo = (self.a[i] - shift) / lii;
            let hi = (self.b[i] - shift) / lii;
            let (p, draw) = truncated_draw(lo, hi, u[i]);
            if p <= 0.0 {
                return 0.0;
            }
            weight *= p;
            w[i] = draw;
        }
        weight * self.tail(w)
    }

    /// Closed-form probability of the trailing pair given the sampled values `w`.
    fn tail(&self, w: &[f64]) -> f64 {
        let k = self.sampled;
        let mut lim = [[0.0; 2]; 2];
        #[allow(clippy::needless_range_loop)]
        for r in 0..2 {
            let shift: f64 = (0..k).map(|j| self.l[(k + r, j)] * w[j]).sum();
            lim[r] = [
                (self.a[k + r] - shift) / self.tail_sd[r],
                (self.b[k + r] - shift) / self.tail_sd[r],
            ];
        }
        bvn_rectangle(lim[0][0], lim[0][1], lim[1][0], lim[1][1], self.tail_corr)
    }
}

/// Mass of `(lo, hi]` under N(0,1) and the inverse-CDF draw at uniform `u` within it.
#[inline]
fn truncated_draw(lo: f64, hi: f64, u: f64) -> (f64, f64) {
    let clamp = |q: f64| q.clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
    if lo > 0.0 {
        let (q_lo, q_hi) = (std_normal_sf(lo), std_normal_sf(hi));
        let p = q_lo - q_hi;
        (p, -quantile_unchecked(clamp(q_hi + u * p)))
    } else {
        let (c_lo, c_hi) = (std_normal_cdf(lo), std_normal_cdf(hi));
        let p = c_hi - c_lo;
        (p, quantile_unchecked(clamp(c_lo + u * p)))
    }
}
