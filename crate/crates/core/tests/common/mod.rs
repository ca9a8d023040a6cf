//! Dense reference computations shared by the integration tests. Kernels are
//! re-derived from their closed forms and every inference step uses plain
//! nalgebra decompositions, so none of this goes through the crate's solvers.
#![allow(dead_code)]

use milsense::kernels::{HyperParams, KernelSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn scaled_dist(hp: &HyperParams, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(&hp.lengthscales).map(|((x, y), l)| ((x - y) / l).powi(2)).sum::<f64>().sqrt()
}

/// Closed-form covariance. Separable inputs are `[spatial..., t]`.
pub fn k_oracle(spec: &KernelSpec, a: &[f64], b: &[f64]) -> f64 {
    match spec {
        KernelSpec::Matern12(hp) => hp.variance * (-scaled_dist(hp, a, b)).exp(),
        KernelSpec::Matern32(hp) => {
            let s = 3f64.sqrt() * scaled_dist(hp, a, b);
            hp.variance * (1.0 + s) * (-s).exp()
        }
        KernelSpec::Matern52(hp) => {
            let s = 5f64.sqrt() * scaled_dist(hp, a, b);
            hp.variance * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
        KernelSpec::QuasiPeriodicMatern32(hp) => {
            let s = 3f64.sqrt() * scaled_dist(hp, a, b);
            let tau = (a[0] - b[0]).abs();
            hp.variance * (1.0 + s) * (-s).exp() * (2.0 * std::f64::consts::PI * tau / hp.period.unwrap()).cos()
        }
        KernelSpec::Sum(c) => c.iter().map(|k| k_oracle(k, a, b)).sum(),
        KernelSpec::Product(c) => c.iter().map(|k| k_oracle(k, a, b)).product(),
        KernelSpec::Separable { spatial, temporal } => {
            let d = a.len() - 1;
            k_oracle(spatial, &a[..d], &b[..d]) * k_oracle(temporal, &a[d..], &b[d..])
        }
    }
}

pub fn gram(spec: &KernelSpec, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| k_oracle(spec, &a[i], &b[j]))
}

pub fn logdet(m: &DMatrix<f64>) -> f64 {
    let c = m.clone().cholesky().expect("oracle matrix must be positive definite");
    2.0 * c.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().cholesky().expect("oracle matrix must be positive definite").inverse()
}

/// `log N(y | 0, K + σ² I)`.
pub fn dense_log_marginal(k: &DMatrix<f64>, y: &DVector<f64>, sigma2: f64) -> f64 {
    let n = y.len();
    let c = k + DMatrix::identity(n, n) * sigma2;
    let alpha = inv(&c) * y;
    -0.5 * (y.dot(&alpha) + logdet(&c) + n as f64 * LN_2PI)
}

/// Collapsed bound from the explicit Nyström matrix.
pub fn dense_collapsed(spec: &KernelSpec, x: &[Vec<f64>], y: &DVector<f64>, z: &[Vec<f64>], sigma2: f64) -> f64 {
    let kzz = gram(spec, z, z);
    let kxz = gram(spec, x, z);
    let q = &kxz * inv(&kzz) * kxz.transpose();
    let kxx = gram(spec, x, x);
    dense_log_marginal(&q, y, sigma2) - (kxx - &q).trace() / (2.0 * sigma2)
}

/// Spatiotemporal sparse GP computed with all `N_t · M` inducing values at once.
pub struct DenseSt {
    pub elbo: f64,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// Predictive mean and variance of the latent field, `N_t × N*`.
    pub pred_mean: DMatrix<f64>,
    pub pred_var: DMatrix<f64>,
}

/// `values`/`mask` are `N_t × N_s` over `grid` × `times`; inducing points
/// `z` are shared across time.
#[allow(clippy::too_many_arguments)]
pub fn dense_st(
    spec: &KernelSpec,
    grid: &[[f64; 2]],
    times: &[f64],
    values: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    z: &[[f64; 2]],
    sigma2: f64,
    xstar: &[[f64; 2]],
) -> DenseSt {
    let (nt, m) = (times.len(), z.len());
    let pt = |p: &[f64; 2], t: f64| vec![p[0], p[1], t];
    let mut xo = Vec::new();
    let mut y = Vec::new();
    for k in 0..nt {
        for (j, p) in grid.iter().enumerate() {
            if mask[(k, j)] {
                xo.push(pt(p, times[k]));
                y.push(values[(k, j)]);
            }
        }
    }
    let y = DVector::from_vec(y);
    // Inducing inputs ordered time-major.
    let u: Vec<Vec<f64>> = (0..nt).flat_map(|k| z.iter().map(move |p| pt(p, times[k]))).collect();
    let kuu = gram(spec, &u, &u);
    let kfu = gram(spec, &xo, &u);
    let kuu_inv = inv(&kuu);
    let q = &kfu * &kuu_inv * kfu.transpose();
    let kff_diag: f64 = xo.iter().map(|p| k_oracle(spec, p, p)).sum();
    let elbo = dense_log_marginal(&q, &y, sigma2) - (kff_diag - q.trace()) / (2.0 * sigma2);

    let sigma = &kuu + kfu.transpose() * &kfu / sigma2;
    let sigma_inv = inv(&sigma);
    let mean_u = &kuu * &sigma_inv * kfu.transpose() * &y / sigma2;
    let cov_u = &kuu * &sigma_inv * &kuu;
    let means = (0..nt).map(|k| mean_u.rows(k * m, m).into_owned()).collect();
    let covs = (0..nt).map(|k| cov_u.view((k * m, k * m), (m, m)).into_owned()).collect();

    let ns = xstar.len();
    let mut pred_mean = DMatrix::zeros(nt, ns);
    let mut pred_var = DMatrix::zeros(nt, ns);
    let w = &kuu_inv * &mean_u;
    let core = &kuu_inv - &kuu_inv * &cov_u * &kuu_inv;
    for k in 0..nt {
        for (j, p) in xstar.iter().enumerate() {
            let x = pt(p, times[k]);
            let ksu = DVector::from_iterator(u.len(), u.iter().map(|v| k_oracle(spec, &x, v)));
            pred_mean[(k, j)] = ksu.dot(&w);
            pred_var[(k, j)] = k_oracle(spec, &x, &x) - ksu.dot(&(&core * &ksu));
        }
    }
    DenseSt { elbo, means, covs, pred_mean, pred_var }
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn random_points<R: Rng>(rng: &mut R, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
