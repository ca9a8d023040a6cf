//! Spatiotemporal sparse variational GP for separable kernels.
//!
//! Inducing values `u_t = f(Z, t)` share one set of spatial locations across
//! the time grid. With `K_s(Z, Z) = L Lᵀ`, the whitened variable `L⁻¹ u` is
//! `M` independent copies of the temporal state-space chain, so the collapsed
//! bound is a Kalman filter over an `M·d_t` state with emission
//! `Φ = K_s(X, Z) L⁻ᵀ`. State ordering is spatial index major, temporal state
//! index minor.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::datasets::{find_location, uniform_spacing, GridDataset};
use crate::error::{Error, Result};
use crate::kernels::{discretize_with_grad, kernel_matrix_cross, kernel_matrix_sym, to_state_space, KernelSpec};
use crate::linalg::{kron, symmetrized, Factor};
use crate::markov_gp::{kalman_predict, kalman_update, rts_smoother, Dynamics, FilterResult, StateSpaceModel};
use crate::sparse_vgp::{clamp_variance, InducingSet};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Separable spatiotemporal model with inducing locations fixed across time.
#[derive(Debug, Clone)]
pub struct StGpModel {
    /// Must be `Separable` with a 2-D spatial child and a 1-D temporal child.
    pub kernel: KernelSpec,
    pub inducing: InducingSet,
    pub time_grid: Vec<f64>,
    pub sigma2: f64,
    pub spatial_grid: Vec<[f64; 2]>,
}

impl StGpModel {
    pub fn new(
        kernel: KernelSpec,
        inducing: InducingSet,
        time_grid: Vec<f64>,
        sigma2: f64,
        spatial_grid: Vec<[f64; 2]>,
    ) -> Result<Self> {
        let m = StGpModel { kernel, inducing, time_grid, sigma2, spatial_grid };
        m.validate()?;
        Ok(m)
    }

    /// Model on the grids of `data`.
    pub fn for_dataset(kernel: KernelSpec, inducing: InducingSet, sigma2: f64, data: &GridDataset) -> Result<Self> {
        Self::new(kernel, inducing, data.times.clone(), sigma2, data.spatial_locations.clone())
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        let (s, t) = match (self.kernel.spatial(), self.kernel.temporal()) {
            (Some(s), Some(t)) => (s, t),
            _ => return Err(Error::input("spatiotemporal model needs a Separable kernel")),
        };
        if s.input_dim() != 2 || t.input_dim() != 1 {
            return Err(Error::input("Separable kernel must be 2-D spatial x 1-D temporal"));
        }
        to_state_space(t, 0.0)?;
        self.inducing.validate(0.0)?;
        uniform_spacing(&self.time_grid)?;
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::input("noise variance must be finite and > 0"));
        }
        if self.spatial_grid.is_empty() || self.spatial_grid.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("spatial grid must be non-empty and finite"));
        }
        Ok(())
    }

    pub fn spatial_kernel(&self) -> &KernelSpec {
        self.kernel.spatial().expect("validated separable kernel")
    }

    pub fn temporal_kernel(&self) -> &KernelSpec {
        self.kernel.temporal().expect("validated separable kernel")
    }

    pub fn dt(&self) -> f64 {
        uniform_spacing(&self.time_grid).unwrap_or(0.0)
    }

    /// `M_s · d_t`.
    pub fn state_dim(&self) -> Result<usize> {
        Ok(self.inducing.len() * to_state_space(self.temporal_kernel(), 0.0)?.sde.dim())
    }

    fn check_data(&self, data: &GridDataset) -> Result<()> {
        data.validate()?;
        let same_space = data.spatial_locations.len() == self.spatial_grid.len()
            && data.spatial_locations.iter().zip(&self.spatial_grid).all(|(a, b)| a == b);
        let same_time = data.times.len() == self.time_grid.len()
            && data.times.iter().zip(&self.time_grid).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(1.0));
        if !same_space || !same_time {
            return Err(Error::input("dataset grid does not match the model grids"));
        }
        Ok(())
    }
}

/// Per-time moments of `q(u_t) = N(μ_t, A_t)` plus the bound they came from.
#[derive(Debug, Clone)]
pub struct StPosterior {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    pub elbo: f64,
}

/// Per-time predictive means and marginal variances, `N_t × N*`.
#[derive(Debug, Clone)]
pub struct PredictiveField {
    pub mean: DMatrix<f64>,
    pub var: DMatrix<f64>,
}

/// Markov chain over `u_t` (not whitened): transition `I ⊗ A`, process noise
/// `K_MM ⊗ Q`, initial covariance `K_MM ⊗ P∞`, emission `I ⊗ H` onto `u_t`.
pub fn build_inducing_chain(model: &StGpModel) -> Result<StateSpaceModel> {
    model.validate()?;
    let ss = to_state_space(model.temporal_kernel(), model.dt())?;
    let kzz = kernel_matrix_sym(model.spatial_kernel(), &model.inducing.locations);
    let m = model.inducing.len();
    let eye = DMatrix::identity(m, m);
    let d = ss.sde.dim();
    let chain = StateSpaceModel {
        dynamics: Dynamics::Shared { a: kron(&eye, &ss.a), q: symmetrized(kron(&kzz, &ss.q)) },
        h: kron(&eye, &ss.sde.h),
        p0: symmetrized(kron(&kzz, &ss.sde.pinf)),
        m0: DVector::zeros(m * d),
        obs_noise: model.sigma2,
    };
    Ok(chain)
}

/// Spatial quantities shared by every time step.
struct Spatial {
    kzz: Factor,
    /// `Φ = K_s(X, Z) L⁻ᵀ`, `N_s × M`.
    phi: DMatrix<f64>,
    /// `k_s(x_i, x_i)`.
    kxx: DVector<f64>,
}

impl Spatial {
    fn new(kernel: &KernelSpec, grid: &[[f64; 2]], z: &[[f64; 2]]) -> Result<Self> {
        let kzz = Factor::new(&kernel_matrix_sym(kernel, z), "K_s(Z, Z)")?;
        let kzx = kernel_matrix_cross(kernel, z, grid);
        let phi = kzz.solve_lower(&kzx).transpose();
        let kxx = DVector::from_iterator(grid.len(), grid.iter().map(|x| kernel.k(x, x)));
        Ok(Spatial { kzz, phi, kxx })
    }
}

/// Emission for one observation pattern. When more locations are observed
/// than there are inducing points, observations are projected onto the
/// column space of `Φ_O = U R`.
struct Pattern {
    idx: Vec<usize>,
    proj: Option<DMatrix<f64>>,
    emission: DMatrix<f64>,
}

impl Pattern {
    fn new(idx: Vec<usize>, phi: &DMatrix<f64>, h: &DMatrix<f64>) -> Self {
        let phi_o = phi.select_rows(&idx);
        if idx.len() > phi.ncols() {
            let qr = phi_o.qr();
            let r = qr.r();
            Pattern { idx, proj: Some(qr.q()), emission: kron(&r, h) }
        } else {
            Pattern { emission: kron(&phi_o, h), idx, proj: None }
        }
    }
}

/// Filter over the whitened chain plus what is needed to reuse it.
struct Pass {
    chain: StateSpaceModel,
    filt: FilterResult,
    patterns: Vec<Pattern>,
    step_pattern: Vec<Option<usize>>,
    /// `Σ_i c_i (k_ii − ‖Φ_i‖²)` with `c_i` the observation count at location i.
    residual: f64,
    counts: Vec<f64>,
    kappa0: f64,
    elbo: f64,
}

fn whitened_chain(temporal: &KernelSpec, dt: f64, m: usize, sigma2: f64) -> Result<StateSpaceModel> {
    let ss = to_state_space(temporal, dt)?;
    let d = ss.sde.dim();
    let eye = DMatrix::identity(m, m);
    Ok(StateSpaceModel {
        dynamics: Dynamics::Shared { a: kron(&eye, &ss.a), q: kron(&eye, &ss.q) },
        h: kron(&eye, &ss.sde.h),
        p0: kron(&eye, &ss.sde.pinf),
        m0: DVector::zeros(m * d),
        obs_noise: sigma2,
    })
}

fn forward(model: &StGpModel, sp: &Spatial, values: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<Pass> {
    let m = model.inducing.len();
    let chain = whitened_chain(model.temporal_kernel(), model.dt(), m, model.sigma2)?;
    let ss = to_state_space(model.temporal_kernel(), 0.0)?;
    let h = &ss.sde.h;
    let kappa0 = ss.sde.variance();
    let s2 = model.sigma2;
    let nt = values.nrows();

    let mut lookup: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut patterns: Vec<Pattern> = Vec::new();
    let mut step_pattern = Vec::with_capacity(nt);
    let mut filt = FilterResult {
        predicted_means: Vec::with_capacity(nt),
        predicted_covs: Vec::with_capacity(nt),
        filtered_means: Vec::with_capacity(nt),
        filtered_covs: Vec::with_capacity(nt),
        step_log_likelihoods: Vec::with_capacity(nt),
        log_marginal_likelihood: 0.0,
    };
    let mut counts = vec![0.0; values.ncols()];
    let (a, q) = chain.dynamics.transition(0);
    let (a, q) = (a.clone(), q.clone());
    let mut mean = chain.m0.clone();
    let mut cov = chain.p0.clone();
    for t in 0..nt {
        if t > 0 {
            (mean, cov) = kalman_predict(&mean, &cov, &a, &q);
        }
        filt.predicted_means.push(mean.clone());
        filt.predicted_covs.push(cov.clone());
        let idx: Vec<usize> = (0..values.ncols()).filter(|&j| mask[(t, j)]).collect();
        let mut ll = 0.0;
        if idx.is_empty() {
            step_pattern.push(None);
        } else {
            idx.iter().for_each(|&j| counts[j] += 1.0);
            let pi = *lookup.entry(idx.clone()).or_insert_with(|| {
                patterns.push(Pattern::new(idx.clone(), &sp.phi, h));
                patterns.len() - 1
            });
            step_pattern.push(Some(pi));
            let pat = &patterns[pi];
            let y = DVector::from_iterator(idx.len(), idx.iter().map(|&j| values[(t, j)]));
            let y_eff = match &pat.proj {
                Some(u) => u.transpose() * &y,
                None => y.clone(),
            };
            let (m2, p2, l) = kalman_update(&mean, &cov, &pat.emission, &y_eff, s2)
                .map_err(|e| Error::Numerical(format!("time step {t}: {e}")))?;
            mean = m2;
            cov = p2;
            ll = l;
            if let Some(u) = &pat.proj {
                let resid = &y - u * &y_eff;
                let extra = (idx.len() - m) as f64;
                ll += -0.5 * extra * (LN_2PI + s2.ln()) - resid.norm_squared() / (2.0 * s2);
            }
        }
        filt.step_log_likelihoods.push(ll);
        filt.log_marginal_likelihood += ll;
        filt.filtered_means.push(mean.clone());
        filt.filtered_covs.push(cov.clone());
    }
    let residual: f64 = (0..values.ncols())
        .map(|i| counts[i] * (sp.kxx[i] - sp.phi.row(i).norm_squared()))
        .sum();
    let elbo = filt.log_marginal_likelihood - kappa0 * residual / (2.0 * s2);
    Ok(Pass { chain, filt, patterns, step_pattern, residual, counts, kappa0, elbo })
}

fn run(model: &StGpModel, values: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<(Spatial, Pass)> {
    model.validate()?;
    if values.ncols() != model.spatial_grid.len() || values.nrows() != model.time_grid.len() {
        return Err(Error::input("observation matrix does not match the model grids"));
    }
    let sp = Spatial::new(model.spatial_kernel(), &model.spatial_grid, &model.inducing.locations)?;
    let pass = forward(model, &sp, values, mask)?;
    Ok((sp, pass))
}

/// Collapsed bound of the spatiotemporal sparse GP, linear in the number of
/// time steps.
pub fn st_elbo(model: &StGpModel, data: &GridDataset) -> Result<f64> {
    model.check_data(data)?;
    Ok(run(model, &data.values, &data.mask)?.1.elbo)
}

/// Smoothed `(m̄_t, P̄_t)` of the whitened inducing values `L⁻¹ u_t`.
fn whitened_moments(pass: &Pass) -> Result<(Vec<DVector<f64>>, Vec<DMatrix<f64>>, crate::markov_gp::SmootherResult)> {
    let sm = rts_smoother(&pass.chain, &pass.filt)?;
    let hm = &pass.chain.h;
    let means = sm.means.iter().map(|m| hm * m).collect();
    let covs = sm.covs.iter().map(|p| symmetrized(hm * p * hm.transpose())).collect();
    Ok((means, covs, sm))
}

pub(crate) fn fit_moments(model: &StGpModel, values: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<StPosterior> {
    let (sp, pass) = run(model, values, mask)?;
    let (wm, wc, _) = whitened_moments(&pass)?;
    let l = sp.kzz.l();
    Ok(StPosterior {
        means: wm.iter().map(|m| &l * m).collect(),
        covs: wc.iter().map(|p| symmetrized(&l * p * l.transpose())).collect(),
        elbo: pass.elbo,
    })
}

/// Smoothed moments of `u_t` under the optimal Gaussian `q`; a single
/// filter/smoother pass is exact for the Gaussian likelihood.
pub fn st_fit_posterior(model: &StGpModel, data: &GridDataset) -> Result<StPosterior> {
    model.check_data(data)?;
    fit_moments(model, &data.values, &data.mask)
}

/// Predictive marginals at spatial points `xstar` for every time step of `posterior`.
pub fn st_predict(model: &StGpModel, posterior: &StPosterior, xstar: &[[f64; 2]]) -> Result<PredictiveField> {
    model.validate()?;
    let m = model.inducing.len();
    if posterior.means.iter().any(|v| v.len() != m) || posterior.covs.iter().any(|c| c.shape() != (m, m)) {
        return Err(Error::input("posterior moments do not match the inducing set"));
    }
    if posterior.means.len() != posterior.covs.len() {
        return Err(Error::input("posterior has unequal mean and covariance sequences"));
    }
    if xstar.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::input("prediction points must be finite"));
    }
    let ks = model.spatial_kernel();
    let kappa0 = to_state_space(model.temporal_kernel(), 0.0)?.sde.variance();
    let kzz = Factor::new(&kernel_matrix_sym(ks, &model.inducing.locations), "K_s(Z, Z)")?;
    let kzs = kernel_matrix_cross(ks, &model.inducing.locations, xstar);
    // Bᵀ = K_MM⁻¹ K_M*
    let bt = kzz.solve(&kzs);
    let b = bt.transpose();
    let ns = xstar.len();
    let nys: Vec<f64> = (0..ns)
        .map(|j| kappa0 * (ks.k(&xstar[j], &xstar[j]) - kzs.column(j).dot(&bt.column(j))))
        .collect();
    let nt = posterior.means.len();
    let mut mean = DMatrix::zeros(nt, ns);
    let mut var = DMatrix::zeros(nt, ns);
    let mut clamped = 0;
    for t in 0..nt {
        let mt = &b * &posterior.means[t];
        let ba = &b * &posterior.covs[t];
        for j in 0..ns {
            mean[(t, j)] = mt[j];
            let v = nys[j] + ba.row(j).dot(&b.row(j));
            var[(t, j)] = clamp_variance(v, kappa0 * ks.variance(), &mut clamped);
        }
    }
    Ok(PredictiveField { mean, var })
}

/// Observations on a subset of the spatial grid (the sensor design) over a
/// uniform time grid with the model's spacing.
#[derive(Debug, Clone)]
pub struct TestObservations {
    pub times: Vec<f64>,
    pub locations: Vec<[f64; 2]>,
    /// `N_t × n_sensors`.
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

/// Which training covariances the test-time posterior carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceReuse {
    /// `A_t` step by step; falls back to the average when lengths differ.
    #[default]
    PerStep,
    /// The time average of `A_t` at every step.
    Averaged,
}

#[derive(Debug, Clone, Copy)]
pub struct TestTimeOptions {
    pub reuse: CovarianceReuse,
    /// Filter/smoother sweeps; for a Gaussian likelihood the first sweep
    /// already reaches the fixed point, so values above 1 change nothing.
    pub sweeps: usize,
}

impl Default for TestTimeOptions {
    fn default() -> Self {
        TestTimeOptions { reuse: CovarianceReuse::PerStep, sweeps: 1 }
    }
}

/// Replaces the means of `trained` by a pass over sensor observations, keeping
/// the trained covariances.
pub fn test_time_update(
    model: &StGpModel,
    trained: &StPosterior,
    test: &TestObservations,
    opts: TestTimeOptions,
) -> Result<StPosterior> {
    if opts.sweeps == 0 {
        return Err(Error::input("test-time update needs at least one sweep"));
    }
    if trained.covs.is_empty() {
        return Err(Error::input("trained posterior is empty"));
    }
    for p in &test.locations {
        if find_location(&model.spatial_grid, *p).is_none() {
            return Err(Error::input(format!("sensor ({}, {}) is not on the spatial grid", p[0], p[1])));
        }
    }
    let shape = (test.times.len(), test.locations.len());
    if test.values.shape() != shape || test.mask.shape() != shape {
        return Err(Error::input("test observations must be times x sensors"));
    }
    let dt_test = uniform_spacing(&test.times)?;
    if test.times.len() > 1 && model.time_grid.len() > 1 && (dt_test - model.dt()).abs() > 1e-9 * model.dt() {
        return Err(Error::input("test time spacing differs from the training spacing"));
    }
    let mut restricted = model.clone();
    restricted.spatial_grid = test.locations.clone();
    restricted.time_grid = test.times.clone();
    let mut out = fit_moments(&restricted, &test.values, &test.mask)?;
    let per_step = opts.reuse == CovarianceReuse::PerStep && trained.covs.len() == out.means.len();
    out.covs = if per_step {
        trained.covs.clone()
    } else {
        let mut avg = trained.covs.iter().fold(DMatrix::zeros(trained.covs[0].nrows(), trained.covs[0].ncols()), |a, c| a + c);
        avg /= trained.covs.len() as f64;
        vec![symmetrized(avg); out.means.len()]
    };
    Ok(out)
}

/// How [`st_elbo_grad`] obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    #[default]
    Analytic,
    /// Central differences: step 1e-4 on locations, 1e-5 on log-parameters.
    FiniteDifference,
}

/// Bound and its gradient with respect to inducing locations, `log σ²`, and
/// the kernel's log-parameters (in [`KernelSpec::log_params`] order).
#[derive(Debug, Clone)]
pub struct StElboGrad {
    pub elbo: f64,
    pub d_locations: Vec<[f64; 2]>,
    pub d_log_sigma2: f64,
    pub d_log_params: Vec<f64>,
}

impl StElboGrad {
    /// Flattened as `[z_1x, z_1y, ..., log σ², kernel log-parameters...]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.d_locations.iter().flatten().copied().collect();
        v.push(self.d_log_sigma2);
        v.extend(&self.d_log_params);
        v
    }
}

pub fn st_elbo_grad(model: &StGpModel, data: &GridDataset, method: GradientMethod) -> Result<StElboGrad> {
    model.check_data(data)?;
    match method {
        GradientMethod::Analytic => analytic_grad(model, &data.values, &data.mask),
        GradientMethod::FiniteDifference => fd_grad(model, &data.values, &data.mask),
    }
}

fn fd_grad(model: &StGpModel, values: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<StElboGrad> {
    let eval = |m: &StGpModel| -> Result<f64> { Ok(run(m, values, mask)?.1.elbo) };
    let elbo = eval(model)?;
    let central = |f: &dyn Fn(f64) -> Result<StGpModel>, h: f64| -> Result<f64> {
        Ok((eval(&f(h)?)? - eval(&f(-h)?)?) / (2.0 * h))
    };
    let mut d_locations = vec![[0.0; 2]; model.inducing.len()];
    for (i, d) in d_locations.iter_mut().enumerate() {
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = central(
                &|h| {
                    let mut m = model.clone();
                    m.inducing.locations[i][k] += h;
                    Ok(m)
                },
                1e-4,
            )?;
        }
    }
    let d_log_sigma2 = central(
        &|h| {
            let mut m = model.clone();
            m.sigma2 = (model.sigma2.ln() + h).exp();
            Ok(m)
        },
        1e-5,
    )?;
    let theta = model.kernel.log_params();
    let mut d_log_params = vec![0.0; theta.len()];
    for (p, dp) in d_log_params.iter_mut().enumerate() {
        *dp = central(
            &|h| {
                let mut th = theta.clone();
                th[p] += h;
                let mut m = model.clone();
                m.kernel = model.kernel.with_log_params(&th)?;
                Ok(m)
            },
            1e-5,
        )?;
    }
    Ok(StElboGrad { elbo, d_locations, d_log_sigma2, d_log_params })
}

/// Sum of the `d × d` diagonal blocks of a `(M·d) × (M·d)` matrix.
fn block_trace(m: &DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let copies = m.nrows() / d;
    let mut out = DMatrix::zeros(d, d);
    for i in 0..copies {
        out += m.view((i * d, i * d), (d, d));
    }
    out
}

/// Gradient by Fisher's identity: derivatives of the expected complete-data
/// log density under the smoothing distribution of the whitened chain.
fn analytic_grad(model: &StGpModel, values: &DMatrix<f64>, mask: &DMatrix<bool>) -> Result<StElboGrad> {
    let (sp, pass) = run(model, values, mask)?;
    let (wm, wc, sm) = whitened_moments(&pass)?;
    let s2 = model.sigma2;
    let m = model.inducing.len();
    let ns = model.spatial_grid.len();
    let nt = values.nrows();
    let phi = &sp.phi;

    // d ELBO / d Φ and d ELBO / d σ² from the emission terms.
    let mut gphi = DMatrix::zeros(ns, m);
    let mut dsigma2 = 0.0;
    let mut yacc: Vec<DMatrix<f64>> = pass.patterns.iter().map(|p| DMatrix::zeros(p.idx.len(), m)).collect();
    let mut sacc: Vec<DMatrix<f64>> = vec![DMatrix::zeros(m, m); pass.patterns.len()];
    let mut yy = vec![0.0; pass.patterns.len()];
    let mut nsteps = vec![0usize; pass.patterns.len()];
    for t in 0..nt {
        let Some(pi) = pass.step_pattern[t] else { continue };
        let idx = &pass.patterns[pi].idx;
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&j| values[(t, j)]));
        yacc[pi] += &y * wm[t].transpose();
        sacc[pi] += &wm[t] * wm[t].transpose() + &wc[t];
        yy[pi] += y.norm_squared();
        nsteps[pi] += 1;
    }
    for (pi, pat) in pass.patterns.iter().enumerate() {
        let phi_o = phi.select_rows(&pat.idx);
        let g = (&yacc[pi] - &phi_o * &sacc[pi]) / s2;
        for (r, &j) in pat.idx.iter().enumerate() {
            let mut row = gphi.row_mut(j);
            row += g.row(r);
        }
        let sq = yy[pi] - 2.0 * phi_o.dot(&yacc[pi]) + (phi_o.transpose() * &phi_o).dot(&sacc[pi]);
        dsigma2 += -((nsteps[pi] * pat.idx.len()) as f64) / (2.0 * s2) + sq / (2.0 * s2 * s2);
    }
    // Trace penalty −κ₀ Σ_i c_i (k_ii − ‖Φ_i‖²) / (2σ²).
    let kappa0 = pass.kappa0;
    dsigma2 += kappa0 * pass.residual / (2.0 * s2 * s2);
    for i in 0..ns {
        let c = pass.counts[i];
        if c > 0.0 {
            let mut row = gphi.row_mut(i);
            row += phi.row(i) * (kappa0 * c / s2);
        }
    }
    let gkxx: Vec<f64> = pass.counts.iter().map(|c| -kappa0 * c / (2.0 * s2)).collect();

    // Temporal log-parameters.
    let dg = discretize_with_grad(model.temporal_kernel(), model.dt())?;
    let d = dg.a.nrows();
    let pinf_f = Factor::new(&dg.pinf, "stationary covariance")?;
    let w0 = block_trace(&(&sm.covs[0] + &sm.means[0] * sm.means[0].transpose()), d);
    let mut s_tot = DMatrix::zeros(d, d);
    let mut x_tot = DMatrix::zeros(d, d);
    let big_a = kron(&DMatrix::identity(m, m), &dg.a);
    for t in 0..nt.saturating_sub(1) {
        let (mt, mn) = (&sm.means[t], &sm.means[t + 1]);
        let c = &sm.cross_covs[t];
        let e = mn - &big_a * mt;
        let exx = &sm.covs[t] + mt * mt.transpose();
        let exnx = c + mn * mt.transpose();
        let s = &sm.covs[t + 1] - &big_a * c.transpose() - c * big_a.transpose()
            + &big_a * &sm.covs[t] * big_a.transpose()
            + &e * e.transpose();
        s_tot += block_trace(&s, d);
        x_tot += block_trace(&(exnx - &big_a * exx), d);
    }
    let q_inv = if nt > 1 { Some(Factor::new(&dg.q, "process noise")?) } else { None };
    let mf = m as f64;
    let d_temporal: Vec<f64> = (0..dg.dpinf.len())
        .map(|k| {
            let pdp = pinf_f.solve(&dg.dpinf[k]);
            let mut g = -0.5 * mf * pdp.trace() + 0.5 * (&pdp * pinf_f.solve(&w0)).trace();
            if let Some(qf) = &q_inv {
                let qdq = qf.solve(&dg.dq[k]);
                g += -0.5 * mf * (nt - 1) as f64 * qdq.trace() + 0.5 * (&qdq * qf.solve(&s_tot)).trace();
                g += (qf.solve(&x_tot) * dg.da[k].transpose()).trace();
            }
            let dkappa = (&dg.h * &dg.dpinf[k] * dg.h.transpose())[(0, 0)];
            g - dkappa * pass.residual / (2.0 * s2)
        })
        .collect();

    // Spatial: Φ = K_xz L⁻ᵀ, K_zz = L Lᵀ.
    let kbar_xz = sp.kzz.solve_upper(&gphi.transpose()).transpose();
    let f = symmetrized(phi.transpose() * &gphi);
    let kbar_zz = sp.kzz.solve_upper(&sp.kzz.solve_upper(&f).transpose()) * -0.5;

    let ks = model.spatial_kernel();
    let z = &model.inducing.locations;
    let n_sp = ks.n_params();
    let mut d_spatial = vec![0.0; n_sp];
    let mut d_locations = vec![[0.0; 2]; m];
    for (j, zj) in z.iter().enumerate() {
        for (i, x) in model.spatial_grid.iter().enumerate() {
            let w = kbar_xz[(i, j)];
            if w == 0.0 {
                continue;
            }
            let g = ks.eval_grad(zj, x);
            for p in 0..n_sp {
                d_spatial[p] += w * g.d_log_params[p];
            }
            d_locations[j][0] += w * g.d_input[0];
            d_locations[j][1] += w * g.d_input[1];
        }
        for (k, zk) in z.iter().enumerate() {
            let g = ks.eval_grad(zj, zk);
            let w = kbar_zz[(j, k)];
            for p in 0..n_sp {
                d_spatial[p] += w * g.d_log_params[p];
            }
            let w2 = kbar_zz[(j, k)] + kbar_zz[(k, j)];
            d_locations[j][0] += w2 * g.d_input[0];
            d_locations[j][1] += w2 * g.d_input[1];
        }
    }
    for (i, x) in model.spatial_grid.iter().enumerate() {
        if gkxx[i] != 0.0 {
            let g = ks.eval_grad(x, x);
            for p in 0..n_sp {
                d_spatial[p] += gkxx[i] * g.d_log_params[p];
            }
        }
    }
    for (dz, fixed) in d_locations.iter_mut().zip(&model.inducing.fixed) {
        if *fixed {
            *dz = [0.0; 2];
        }
    }
    let mut d_log_params = d_spatial;
    d_log_params.extend(d_temporal);
    Ok(StElboGrad { elbo: pass.elbo, d_locations, d_log_sigma2: s2 * dsigma2, d_log_params })
}
