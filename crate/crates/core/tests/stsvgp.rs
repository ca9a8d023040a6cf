mod common;

use common::{dense_log_marginal, dense_st, gram, random_points};
use milsense::datasets::{GridDataset, Metadata};
use milsense::kernels::{kernel_matrix, to_state_space, KernelSpec};
use milsense::sparse_vgp::{optimal_q, InducingSet, NoiseRegularization};
use milsense::stsvgp::{
    build_inducing_chain, st_elbo, st_fit_posterior, st_predict, test_time_update, CovarianceReuse, StGpModel,
    TestObservations, TestTimeOptions,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel() -> KernelSpec {
    KernelSpec::separable(KernelSpec::matern32(1.2, &[0.35, 0.3]), KernelSpec::matern32(0.8, &[3.0]))
}

fn instance(seed: u64, nt: usize, ns: usize, z: Vec<[f64; 2]>) -> (StGpModel, GridDataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = random_points(&mut rng, ns);
    let times: Vec<f64> = (0..nt).map(|k| k as f64).collect();
    let values = DMatrix::from_fn(nt, ns, |_, _| rng.random_range(-1.5..1.5));
    let data = GridDataset::new(grid.clone(), times.clone(), values, Metadata::named("test")).unwrap();
    let model = StGpModel::new(kernel(), InducingSet::free(z), times, 0.2, grid).unwrap();
    (model, data)
}

fn dense_evidence(model: &StGpModel, data: &GridDataset) -> f64 {
    let mut pts = Vec::new();
    let mut y = Vec::new();
    for (k, t) in data.times.iter().enumerate() {
        for (j, p) in data.spatial_locations.iter().enumerate() {
            if data.mask[(k, j)] {
                pts.push(vec![p[0], p[1], *t]);
                y.push(data.values[(k, j)]);
            }
        }
    }
    dense_log_marginal(&gram(&model.kernel, &pts, &pts), &DVector::from_vec(y), model.sigma2)
}

#[test]
fn full_grid_inducing_set_gives_the_evidence() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = random_points(&mut rng, 6);
    let (mut model, mut data) = instance(9, 10, 6, grid.clone());
    model.spatial_grid = grid.clone();
    data.spatial_locations = grid;
    let elbo = st_elbo(&model, &data).unwrap();
    let exact = dense_evidence(&model, &data);
    assert!((elbo - exact).abs() <= 1e-5 * exact.abs().max(1.0), "{elbo} vs {exact}");
}

#[test]
fn single_step_moments_match_static_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z = random_points(&mut rng, 4);
    let (model, data) = instance(10, 1, 12, z.clone());
    let post = st_fit_posterior(&model, &data).unwrap();
    // One time step: the spatial kernel scaled by κ_t(0).
    let stat = KernelSpec::matern32(1.2 * 0.8, &[0.35, 0.3]);
    let y = DVector::from_iterator(12, data.values.row(0).iter().copied());
    let q = optimal_q(&stat, &data.spatial_locations, &y, &z, model.sigma2, NoiseRegularization::None).unwrap();
    assert!((&post.means[0] - &q.mu).amax() < 1e-6);
    assert!((&post.covs[0] - &q.a_cov).amax() < 1e-6);
}

#[test]
fn predictive_variance_splits_into_residual_and_posterior_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z = random_points(&mut rng, 4);
    let xs = random_points(&mut rng, 6);
    let (model, data) = instance(11, 8, 10, z.clone());
    let post = st_fit_posterior(&model, &data).unwrap();
    let pred = st_predict(&model, &post, &xs).unwrap();
    let ks = model.spatial_kernel();
    let kzz = kernel_matrix(ks, &z, &z).unwrap();
    let kxz = kernel_matrix(ks, &xs, &z).unwrap();
    let b = &kxz * kzz.clone().cholesky().unwrap().inverse();
    let kappa0 = 0.8;
    let resid = (kernel_matrix(ks, &xs, &xs).unwrap() - &b * kxz.transpose()).diagonal() * kappa0;
    for t in 0..8 {
        let post_term = (&b * &post.covs[t] * b.transpose()).diagonal();
        for j in 0..6 {
            assert!((pred.var[(t, j)] - post_term[j] - resid[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn single_inducing_point_chain_is_scaled_temporal_model() {
    let (model, _) = instance(12, 5, 4, vec![[0.2, 0.7]]);
    let chain = build_inducing_chain(&model).unwrap();
    let ss = to_state_space(model.temporal_kernel(), 1.0).unwrap();
    let kzz = 1.2;
    let (a, q) = chain.dynamics.transition(0);
    assert!((a - &ss.a).amax() < 1e-14);
    assert!((q - &ss.q * kzz).amax() < 1e-12);
    assert!((&chain.p0 - &ss.sde.pinf * kzz).amax() < 1e-12);
}

#[test]
fn inducing_chain_lag_covariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let z = random_points(&mut rng, 3);
    let kern = KernelSpec::separable(KernelSpec::matern32(1.0, &[0.4, 0.4]), KernelSpec::matern12(1.5, &[2.0]));
    let model = StGpModel::new(kern.clone(), InducingSet::free(z.clone()), (0..6).map(|k| k as f64 * 0.5).collect(), 0.1, z.clone()).unwrap();
    let chain = build_inducing_chain(&model).unwrap();
    let kzz = kernel_matrix(kern.spatial().unwrap(), &z, &z).unwrap();
    let (a, _) = chain.dynamics.transition(0);
    let mut ak = DMatrix::identity(a.nrows(), a.ncols());
    for lag in 0..=5 {
        let cov = &chain.h * &ak * &chain.p0 * chain.h.transpose();
        let kt = 1.5 * (-(lag as f64 * 0.5) / 2.0).exp();
        assert!((cov - &kzz * kt).amax() < 1e-10, "lag {lag}");
        ak = a * ak;
    }
}

fn sensor_obs(data: &GridDataset, idx: &[usize]) -> TestObservations {
    let sub = data.select_locations(idx).unwrap();
    TestObservations { times: sub.times.clone(), locations: sub.spatial_locations.clone(), values: sub.values, mask: sub.mask }
}

#[test]
fn test_time_update_matches_fresh_restricted_fit() {
    let (model0, data) = instance(14, 12, 10, vec![[0.5, 0.5]]);
    let idx = [1, 4, 7];
    let z: Vec<[f64; 2]> = idx.iter().map(|&i| data.spatial_locations[i]).collect();
    let model = StGpModel { inducing: InducingSet::free(z.clone()), ..model0 };
    let trained = st_fit_posterior(&model, &data).unwrap();
    let obs = sensor_obs(&data, &idx);
    let upd = test_time_update(&model, &trained, &obs, TestTimeOptions::default()).unwrap();

    let mut restricted = model.clone();
    restricted.spatial_grid = z;
    let fresh = st_fit_posterior(&restricted, &data.select_locations(&idx).unwrap()).unwrap();
    for t in 0..12 {
        assert!((&upd.means[t] - &fresh.means[t]).amax() < 1e-9);
        assert_eq!(upd.covs[t], trained.covs[t]);
    }

    // Shifting the test data by c moves the means by the response to constant c data.
    let c = 0.75;
    let mut shifted = obs.clone();
    shifted.values.add_scalar_mut(c);
    let moved = test_time_update(&model, &trained, &shifted, TestTimeOptions::default()).unwrap();
    let mut constant = data.select_locations(&idx).unwrap();
    constant.values.fill(c);
    let response = st_fit_posterior(&restricted, &constant).unwrap();
    for t in 0..12 {
        assert!((&moved.means[t] - &upd.means[t] - &response.means[t]).amax() < 1e-9);
    }

    let mut missing = obs.clone();
    missing.mask.fill(false);
    let prior = test_time_update(&model, &trained, &missing, TestTimeOptions { reuse: CovarianceReuse::Averaged, sweeps: 1 }).unwrap();
    assert!(prior.means.iter().all(|m| m.amax() == 0.0));
    assert!((&prior.covs[0] - &prior.covs[11]).amax() == 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bound_never_exceeds_spatiotemporal_evidence(seed in 0u64..10_000, m in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let (model, mut data) = instance(seed, 8, 7, random_points(&mut rng, m));
        for v in data.mask.iter_mut() {
            *v = rng.random_range(0.0..1.0) > 0.25;
        }
        let elbo = st_elbo(&model, &data).unwrap();
        let exact = dense_evidence(&model, &data);
        prop_assert!(elbo <= exact + 1e-8 * exact.abs().max(1.0));
        let dense = dense_st(&model.kernel, &model.spatial_grid, &model.time_grid, &data.values, &data.mask, &model.inducing.locations, model.sigma2, &[]);
        prop_assert!((elbo - dense.elbo).abs() <= 1e-5 * dense.elbo.abs().max(1.0));
    }
}
