mod common;

use common::{dense_log_marginal, gram, inv};
use milsense::kernels::{to_state_space, KernelSpec};
use milsense::markov_gp::{kalman_filter, rts_smoother, sample_prior, Dynamics, Observations, StateSpaceModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Chain over possibly irregular `times`.
fn chain(kernel: &KernelSpec, times: &[f64], s2: f64) -> StateSpaceModel {
    let st = to_state_space(kernel, 0.0).unwrap();
    let steps: Vec<_> = times.windows(2).map(|w| to_state_space(kernel, w[1] - w[0]).unwrap()).collect();
    StateSpaceModel {
        dynamics: Dynamics::PerStep {
            a: steps.iter().map(|s| s.a.clone()).collect(),
            q: steps.iter().map(|s| s.q.clone()).collect(),
        },
        h: st.sde.h.clone(),
        p0: st.sde.pinf.clone(),
        m0: DVector::zeros(st.sde.dim()),
        obs_noise: s2,
    }
}

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += rng.random_range(0.05..1.0);
            t
        })
        .collect()
}

#[test]
fn irregular_matern32_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = KernelSpec::matern32(1.4, &[1.7]);
    let times = random_times(&mut rng, 50);
    let y: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
    let model = chain(&k, &times, 0.2);
    let obs = Observations::fully_observed(DMatrix::from_column_slice(50, 1, &y));
    let kal = kalman_filter(&model, &obs).unwrap().log_marginal_likelihood;
    let tv: Vec<Vec<f64>> = times.iter().map(|t| vec![*t]).collect();
    let dense = dense_log_marginal(&gram(&k, &tv, &tv), &DVector::from_vec(y), 0.2);
    assert!((kal - dense).abs() <= 1e-6 * dense.abs().max(1.0), "{kal} vs {dense}");
}

#[test]
fn smoothed_means_match_dense_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let k = KernelSpec::matern12(0.9, &[0.8]);
    let times = random_times(&mut rng, 50);
    let y = DVector::from_fn(50, |_, _| rng.random_range(-1.0..1.0));
    let model = chain(&k, &times, 0.1);
    let obs = Observations::fully_observed(DMatrix::from_column_slice(50, 1, y.as_slice()));
    let sm = rts_smoother(&model, &kalman_filter(&model, &obs).unwrap()).unwrap();
    let tv: Vec<Vec<f64>> = times.iter().map(|t| vec![*t]).collect();
    let kk = gram(&k, &tv, &tv);
    let post = &kk * inv(&(&kk + DMatrix::identity(50, 50) * 0.1)) * &y;
    for i in 0..50 {
        assert!((sm.means[i][0] - post[i]).abs() < 1e-6);
    }
}

#[test]
fn monte_carlo_prior_variance() {
    let ss = to_state_space(&KernelSpec::matern12(2.0, &[3.0]), 1.0).unwrap();
    let model = StateSpaceModel {
        dynamics: Dynamics::Shared { a: ss.a.clone(), q: ss.q.clone() },
        h: ss.sde.h.clone(),
        p0: ss.sde.pinf.clone(),
        m0: DVector::zeros(1),
        obs_noise: 1e-3,
    };
    // Lag-0 variance over many independent short paths keeps the estimator unbiased.
    let mut acc = 0.0;
    let n = 10_000;
    let sample = sample_prior(&model, n, 17).unwrap();
    for x in &sample.states {
        acc += x[0] * x[0];
    }
    let v = acc / n as f64;
    assert!((v - 2.0).abs() < 0.1, "sample variance {v}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posterior_variance_below_prior(seed in 0u64..1000, s2 in 0.01f64..2.0, ell in 0.3f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSpec::matern32(1.0, &[ell]);
        let times = random_times(&mut rng, 30);
        let model = chain(&k, &times, s2);
        let mut obs = Observations::fully_observed(DMatrix::from_fn(30, 1, |_, _| rng.random_range(-3.0..3.0)));
        for t in 0..30 {
            obs.mask[(t, 0)] = rng.random_range(0.0..1.0) > 0.3;
        }
        let filt = kalman_filter(&model, &obs).unwrap();
        let sm = rts_smoother(&model, &filt).unwrap();
        for t in 0..30 {
            if obs.mask[(t, 0)] {
                let prior = (&model.h * &model.p0 * model.h.transpose())[(0, 0)];
                prop_assert!((&model.h * &filt.filtered_covs[t] * model.h.transpose())[(0, 0)] <= prior + 1e-12);
                prop_assert!((&model.h * &sm.covs[t] * model.h.transpose())[(0, 0)] <= prior + 1e-12);
            }
        }
    }

    #[test]
    fn split_filtering_chains(seed in 0u64..1000, cut in 1usize..29) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = KernelSpec::matern52(1.3, &[2.0]);
        let times = random_times(&mut rng, 30);
        let y = DMatrix::from_fn(30, 1, |_, _| rng.random_range(-2.0..2.0));
        let full = kalman_filter(&chain(&k, &times, 0.3), &Observations::fully_observed(y.clone())).unwrap();

        let first = kalman_filter(&chain(&k, &times[..cut], 0.3), &Observations::fully_observed(y.rows(0, cut).into_owned())).unwrap();
        let bridge = to_state_space(&k, times[cut] - times[cut - 1]).unwrap();
        let mut second = chain(&k, &times[cut..], 0.3);
        second.m0 = &bridge.a * &first.filtered_means[cut - 1];
        second.p0 = &bridge.a * &first.filtered_covs[cut - 1] * bridge.a.transpose() + &bridge.q;
        let rest = kalman_filter(&second, &Observations::fully_observed(y.rows(cut, 30 - cut).into_owned())).unwrap();
        let total = first.log_marginal_likelihood + rest.log_marginal_likelihood;
        prop_assert!((total - full.log_marginal_likelihood).abs() <= 1e-9 * full.log_marginal_likelihood.abs().max(1.0));
    }
}
