//! Temporal kernels as linear SDEs: the discretized model reproduces the
//! closed-form covariance at every lag.
//!
//! cargo run --example state_space_kernels

use milsense::kernels::{to_state_space, KernelSpec};
use nalgebra::DMatrix;

fn main() -> milsense::Result<()> {
    let dt = 0.5;
    let kernels = [
        ("matern12", KernelSpec::matern12(1.5, &[2.0])),
        ("matern32", KernelSpec::matern32(1.5, &[2.0])),
        ("matern52", KernelSpec::matern52(1.5, &[2.0])),
        ("quasi_periodic", KernelSpec::quasi_periodic(1.5, 4.0, 3.0)),
        ("sum", KernelSpec::Sum(vec![KernelSpec::matern12(0.5, &[1.0]), KernelSpec::matern52(1.0, &[6.0])])),
    ];
    println!("{:15} {:>5} {:>12} {:>12}", "kernel", "dim", "lyapunov", "max |err|");
    for (name, k) in &kernels {
        let ss = to_state_space(k, dt)?;
        // Cov(f(0), f(k dt)) = H A^k P∞ Hᵀ.
        let mut ak = DMatrix::identity(ss.sde.dim(), ss.sde.dim());
        let mut err: f64 = 0.0;
        for lag in 0..=20 {
            let cov = (&ss.sde.h * &ak * &ss.sde.pinf * ss.sde.h.transpose())[(0, 0)];
            err = err.max((cov - k.eval(&[0.0], &[lag as f64 * dt])?).abs());
            ak = &ss.a * ak;
        }
        println!("{name:15} {:>5} {:>12.2e} {:>12.2e}", ss.sde.dim(), ss.sde.lyapunov_residual(), err);
    }
    Ok(())
}
