//! Collapsed variational bound and sparse prediction as the inducing set grows.
//!
//! cargo run --example sparse_regression

use milsense::kernels::{kernel_matrix, KernelSpec};
use milsense::sparse_vgp::{collapsed_elbo_parts, optimal_q, predict, NoiseRegularization};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> milsense::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let kernel = KernelSpec::matern52(1.0, &[0.2, 0.2]);
    let x: Vec<[f64; 2]> = (0..300).map(|_| [rng.random(), rng.random()]).collect();
    let f = |p: [f64; 2]| (6.0 * p[0]).sin() * (4.0 * p[1]).cos();
    let y = DVector::from_iterator(x.len(), x.iter().map(|p| f(*p) + 0.1 * (rng.random::<f64>() - 0.5)));
    let test: Vec<[f64; 2]> = (0..400).map(|k| [(k % 20) as f64 / 19.0, (k / 20) as f64 / 19.0]).collect();

    // The exact evidence for reference.
    let c = kernel_matrix(&kernel, &x, &x)? + DMatrix::identity(x.len(), x.len()) * 0.01;
    let chol = c.cholesky().expect("positive definite");
    let alpha = chol.solve(&y);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let exact = -0.5 * (y.dot(&alpha) + logdet + x.len() as f64 * (2.0 * std::f64::consts::PI).ln());
    println!("exact log marginal: {exact:.2}");

    println!("{:>4} {:>10} {:>12} {:>10}", "M", "bound", "tr(K - Q)", "test rmse");
    for m in [4, 8, 16, 32, 64, 128] {
        let z = x[..m].to_vec();
        let parts = collapsed_elbo_parts(&kernel, &x, &y, &z, 0.01)?;
        let q = optimal_q(&kernel, &x, &y, &z, 0.01, NoiseRegularization::None)?;
        let p = predict(&kernel, &z, &q, &test)?;
        let rmse = (test.iter().zip(p.mean.iter()).map(|(t, m)| (f(*t) - m).powi(2)).sum::<f64>() / test.len() as f64).sqrt();
        println!("{m:>4} {:>10.2} {:>12.3} {:>10.4}", parts.elbo, parts.trace_residual, rmse);
    }
    Ok(())
}
