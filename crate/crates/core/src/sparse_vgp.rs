//! Static sparse variational GP with a Gaussian likelihood: Nyström
//! structures, the collapsed evidence lower bound, the optimal `q(u)`, and
//! the data-fit perturbation of the bound.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::linalg::{symmetrized, Factor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Default minimum separation between inducing locations (normalized units).
pub const DEFAULT_MIN_SEPARATION: f64 = 1e-6;

/// Inducing locations in the plane, with a per-location "frozen" flag.
#[derive(Debug, Clone, PartialEq)]
pub struct InducingSet {
    pub locations: Vec<[f64; 2]>,
    pub fixed: Vec<bool>,
}

impl InducingSet {
    pub fn free(locations: Vec<[f64; 2]>) -> Self {
        let fixed = vec![false; locations.len()];
        InducingSet { locations, fixed }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    /// Checks finiteness, non-emptiness and pairwise separation `>= min_sep`.
    pub fn validate(&self, min_sep: f64) -> Result<()> {
        if self.locations.is_empty() {
            return Err(Error::input("inducing set must not be empty"));
        }
        if self.fixed.len() != self.locations.len() {
            return Err(Error::input("fixed mask length differs from the location count"));
        }
        if self.locations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("inducing locations must be finite"));
        }
        for i in 0..self.len() {
            for j in (i + 1)..self.len() {
                let (a, b) = (self.locations[i], self.locations[j]);
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                if d < min_sep {
                    return Err(Error::input(format!(
                        "inducing points {i} and {j} are closer than {min_sep:e}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Mean and covariance of `q(u)`.
#[derive(Debug, Clone)]
pub struct VariationalMoments {
    pub mu: DVector<f64>,
    pub a_cov: DMatrix<f64>,
}

/// How the noise variance entering `optimal_q` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseRegularization {
    /// Use `σ²` as given: the exact optimum of the collapsed bound.
    #[default]
    None,
    /// Use `σ² + tr(K_post)/N`.
    TraceRegularized,
}

/// `Q_NN = K_NM K_MM⁻¹ K_MN`, computed through a Cholesky factor of `K_MM`.
pub fn nystrom(kmm: &DMatrix<f64>, knm: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if kmm.nrows() != knm.ncols() {
        return Err(Error::input("K_MM and K_NM disagree on M"));
    }
    let f = Factor::new(kmm, "K_MM")?;
    let v = f.solve_lower(&knm.transpose());
    Ok(symmetrized(v.transpose() * v))
}

/// Shared factorization for the collapsed bound: `K_MM = L Lᵀ`, `V = L⁻¹ K_MN`,
/// `B = I + V Vᵀ / σ²`.
struct Collapsed {
    kmm: Factor,
    v: DMatrix<f64>,
    b: Factor,
    sigma2: f64,
    knn_diag: DVector<f64>,
}

impl Collapsed {
    fn new<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
        kernel: &KernelSpec,
        x: &[P],
        z: &[Q],
        sigma2: f64,
    ) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::input("noise variance must be finite and > 0"));
        }
        let xs: Vec<&[f64]> = x.iter().map(|p| p.as_ref()).collect();
        let zs: Vec<&[f64]> = z.iter().map(|p| p.as_ref()).collect();
        let kmm = Factor::new(&kernel_matrix(kernel, &zs, &zs)?, "K_MM")?;
        let kmn = kernel_matrix(kernel, &zs, &xs)?;
        let v = kmm.solve_lower(&kmn);
        let m = zs.len();
        let mut b = &v * v.transpose() / sigma2;
        for i in 0..m {
            b[(i, i)] += 1.0;
        }
        let b = Factor::new(&symmetrized(b), "I + V Vᵀ/σ²")?;
        let knn_diag = DVector::from_iterator(xs.len(), xs.iter().map(|p| kernel.k(p, p)));
        Ok(Collapsed { kmm, v, b, sigma2, knn_diag })
    }

    fn n(&self) -> usize {
        self.v.ncols()
    }

    /// `tr(K_NN − Q_NN)`.
    fn trace_residual(&self) -> f64 {
        self.knn_diag.sum() - self.v.norm_squared()
    }

    /// `(Q_NN + σ² I)⁻¹ y` by Woodbury.
    fn apply_inverse(&self, y: &DVector<f64>) -> DVector<f64> {
        let vy = &self.v * y;
        let inner = self.b.solve_vec(&vy);
        (y - self.v.transpose() * inner / self.sigma2) / self.sigma2
    }

    fn log_marginal(&self, y: &DVector<f64>) -> f64 {
        let n = self.n() as f64;
        let logdet = n * self.sigma2.ln() + self.b.logdet();
        let quad = y.dot(&self.apply_inverse(y));
        -0.5 * (n * LN_2PI + logdet + quad)
    }
}

/// Terms of the collapsed bound.
#[derive(Debug, Clone, Copy)]
pub struct ElboParts {
    pub elbo: f64,
    /// `log N(Y | 0, σ²I + Q_NN)`.
    pub log_marginal: f64,
    /// `tr(K_NN − Q_NN)`.
    pub trace_residual: f64,
}

fn check_xy<P>(x: &[P], y: &DVector<f64>) -> Result<()> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::input(format!(
            "need N >= 1 inputs matching outputs, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(())
}

/// Collapsed bound `log N(Y | 0, σ²I + Q_NN) − tr(K_NN − Q_NN)/(2σ²)`.
pub fn collapsed_elbo<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    kernel: &KernelSpec,
    x: &[P],
    y: &DVector<f64>,
    z: &[Q],
    sigma2: f64,
) -> Result<f64> {
    Ok(collapsed_elbo_parts(kernel, x, y, z, sigma2)?.elbo)
}

pub fn collapsed_elbo_parts<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    kernel: &KernelSpec,
    x: &[P],
    y: &DVector<f64>,
    z: &[Q],
    sigma2: f64,
) -> Result<ElboParts> {
    check_xy(x, y)?;
    let c = Collapsed::new(kernel, x, z, sigma2)?;
    let log_marginal = c.log_marginal(y);
    let trace_residual = c.trace_residual();
    Ok(ElboParts {
        elbo: log_marginal - trace_residual / (2.0 * sigma2),
        log_marginal,
        trace_residual,
    })
}

/// Closed-form optimal `q(u) = N(μ, A)` with
/// `μ = σ⁻² K_MM Σ⁻¹ K_MN y`, `A = K_MM Σ⁻¹ K_MM`, `Σ = K_MM + σ⁻² K_MN K_NM`.
pub fn optimal_q<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    kernel: &KernelSpec,
    x: &[P],
    y: &DVector<f64>,
    z: &[Q],
    sigma2: f64,
    regularization: NoiseRegularization,
) -> Result<VariationalMoments> {
    check_xy(x, y)?;
    let mut c = Collapsed::new(kernel, x, z, sigma2)?;
    if regularization == NoiseRegularization::TraceRegularized {
        let s2 = sigma2 + c.trace_residual().max(0.0) / x.len() as f64;
        c = Collapsed::new(kernel, x, z, s2)?;
    }
    // With K_MM = L Lᵀ: Σ = L B Lᵀ, so μ = σ⁻² L B⁻¹ V y and A = L B⁻¹ Lᵀ.
    let l = c.kmm.l();
    let vy = &c.v * y / c.sigma2;
    let mu = &l * c.b.solve_vec(&vy);
    let a_cov = symmetrized(&l * c.b.solve(&l.transpose()));
    Ok(VariationalMoments { mu, a_cov })
}

/// Per-point predictive mean and variance.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
    /// Points whose variance was clamped from below −1e-8 (relative) to zero.
    pub clamped: usize,
}

/// Predictive marginals of `f(X*)` under `q(u)`.
pub fn predict<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    kernel: &KernelSpec,
    z: &[Q],
    moments: &VariationalMoments,
    xstar: &[P],
) -> Result<Prediction> {
    if moments.mu.len() != z.len() || moments.a_cov.shape() != (z.len(), z.len()) {
        return Err(Error::input("variational moments do not match the inducing set"));
    }
    let xs: Vec<&[f64]> = xstar.iter().map(|p| p.as_ref()).collect();
    let zs: Vec<&[f64]> = z.iter().map(|p| p.as_ref()).collect();
    let kmm = Factor::new(&kernel_matrix(kernel, &zs, &zs)?, "K_MM")?;
    let kms = kernel_matrix(kernel, &zs, &xs)?;
    // Bᵀ = K_MM⁻¹ K_M*
    let bt = kmm.solve(&kms);
    let mean = bt.transpose() * &moments.mu;
    let abt = &moments.a_cov * &bt;
    let mut clamped = 0;
    let var = DVector::from_iterator(
        xs.len(),
        (0..xs.len()).map(|i| {
            let prior = kernel.k(xs[i], xs[i]);
            let nys = kms.column(i).dot(&bt.column(i));
            let v = prior - nys + bt.column(i).dot(&abt.column(i));
            clamp_variance(v, prior, &mut clamped)
        }),
    );
    Ok(Prediction { mean, var, clamped })
}

pub(crate) fn clamp_variance(v: f64, scale: f64, clamped: &mut usize) -> f64 {
    if v >= 0.0 {
        return v;
    }
    if v < -1e-8 * scale.abs().max(1.0) {
        *clamped += 1;
        log::warn!("predictive variance {v:e} clamped to zero");
    }
    0.0
}

/// Change of the collapsed bound under a data perturbation δ.
#[derive(Debug, Clone, Copy)]
pub struct Perturbation {
    /// `L(Y) − L(Y + δ)`.
    pub delta_l: f64,
    /// `∇D(Y)ᵀ δ` with `∇D(Y) = (Q_NN + σ²I)⁻¹ Y`.
    pub linear: f64,
    /// `D(δ) = ½ δᵀ (Q_NN + σ²I)⁻¹ δ`.
    pub quadratic: f64,
}

pub fn elbo_perturbation<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    kernel: &KernelSpec,
    x: &[P],
    y: &DVector<f64>,
    delta: &DVector<f64>,
    z: &[Q],
    sigma2: f64,
) -> Result<Perturbation> {
    check_xy(x, y)?;
    if delta.len() != y.len() {
        return Err(Error::input("perturbation length differs from the data length"));
    }
    let c = Collapsed::new(kernel, x, z, sigma2)?;
    let grad = c.apply_inverse(y);
    let linear = grad.dot(delta);
    let quadratic = 0.5 * delta.dot(&c.apply_inverse(delta));
    Ok(Perturbation { delta_l: linear + quadratic, linear, quadratic })
}

/// `∇D(Y) = (Q_NN + σ²I)⁻¹ Y`.
pub fn data_fit_gradient<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    kernel: &KernelSpec,
    x: &[P],
    y: &DVector<f64>,
    z: &[Q],
    sigma2: f64,
) -> Result<DVector<f64>> {
    check_xy(x, y)?;
    Ok(Collapsed::new(kernel, x, z, sigma2)?.apply_inverse(y))
}
