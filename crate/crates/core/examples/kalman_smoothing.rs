//! Kalman filtering and RTS smoothing of a Matérn-3/2 process with gaps.
//!
//! cargo run --example kalman_smoothing

use milsense::kernels::{to_state_space, KernelSpec};
use milsense::markov_gp::{kalman_filter, rts_smoother, sample_prior, Dynamics, Observations, StateSpaceModel};
use nalgebra::DVector;

fn main() -> milsense::Result<()> {
    let ss = to_state_space(&KernelSpec::matern32(1.0, &[5.0]), 1.0)?;
    let model = StateSpaceModel {
        dynamics: Dynamics::Shared { a: ss.a.clone(), q: ss.q.clone() },
        h: ss.sde.h.clone(),
        p0: ss.sde.pinf.clone(),
        m0: DVector::zeros(ss.sde.dim()),
        obs_noise: 0.05,
    };
    let n = 200;
    let draw = sample_prior(&model, n, 11)?;

    // Hide every step in 60..100 and every third step elsewhere.
    let mut obs = Observations::fully_observed(draw.observed.clone());
    for k in 0..n {
        obs.mask[(k, 0)] = !(60..100).contains(&k) && k % 3 != 0;
    }
    let filt = kalman_filter(&model, &obs)?;
    let smooth = rts_smoother(&model, &filt)?;
    println!("log marginal likelihood: {:.3}", filt.log_marginal_likelihood);

    let (mut se_in, mut se_gap, mut n_gap) = (0.0, 0.0, 0);
    for k in 0..n {
        let err = (&model.h * &smooth.means[k])[(0, 0)] - draw.signal[(k, 0)];
        if (60..100).contains(&k) {
            se_gap += err * err;
            n_gap += 1;
        } else {
            se_in += err * err;
        }
    }
    println!("smoothed rmse outside the gap: {:.4}", (se_in / (n - n_gap) as f64).sqrt());
    println!("smoothed rmse inside the gap:  {:.4}", (se_gap / n_gap as f64).sqrt());
    for k in [50, 70, 80, 90, 110] {
        let var = (&model.h * &smooth.covs[k] * model.h.transpose())[(0, 0)];
        println!("t = {k:3}: truth {:+.3}, mean {:+.3}, sd {:.3}", draw.signal[(k, 0)], (&model.h * &smooth.means[k])[(0, 0)], var.sqrt());
    }
    Ok(())
}
