use nalgebra::DMatrix;
use swgs::mvnorm::{MvnIntegrator, DEFAULT_ABS_TOL};

/// Probabilities that the first `d` standardised statistics of an
/// equally-spaced design all exceed 1, for d = 1..=5.
pub fn run_example() -> swgs::Result<Vec<(usize, f64, f64)>> {
    let integrator = MvnIntegrator::new(DEFAULT_ABS_TOL, 7);
    (1..=5)
        .map(|d| {
            // Cov(Z_i, Z_j) = sqrt(i/j) for i <= j
            let cov = DMatrix::from_fn(d, d, |i, j| {
                let (a, b) = ((i.min(j) + 1) as f64, (i.max(j) + 1) as f64);
                (a / b).sqrt()
            });
            let p = integrator.rectangle(&vec![1.0; d], &vec![f64::INFINITY; d], &vec![0.0; d], &cov)?;
            Ok((d, p.value, p.error_estimate))
        })
        .collect()
}

#[allow(dead_code)]
fn main() -> swgs::Result<()> {
    for (d, p, err) in run_example()? {
        println!("d = {d}: P = {p:.8} (error estimate {err:.1e})");
    }
    Ok(())
}
