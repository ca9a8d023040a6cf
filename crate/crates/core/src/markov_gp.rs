//! Kalman filtering, Rauch–Tung–Striebel smoothing, and prior sampling for
//! linear-Gaussian state-space models.
//!
//! Covariance updates use the Joseph form. Missing observations are given
//! by an explicit mask; a step with nothing observed is a pure prediction.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, symmetrize, Factor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Transition matrices and process noise, shared or per step.
///
/// Index `k` of a per-step sequence drives the move from step `k` to `k + 1`.
#[derive(Debug, Clone)]
pub enum Dynamics {
    Shared { a: DMatrix<f64>, q: DMatrix<f64> },
    PerStep { a: Vec<DMatrix<f64>>, q: Vec<DMatrix<f64>> },
}

impl Dynamics {
    pub fn transition(&self, k: usize) -> (&DMatrix<f64>, &DMatrix<f64>) {
        match self {
            Dynamics::Shared { a, q } => (a, q),
            Dynamics::PerStep { a, q } => (&a[k], &q[k]),
        }
    }

    /// `None` for an empty per-step sequence, which fits any state.
    fn state_dim(&self) -> Option<usize> {
        match self {
            Dynamics::Shared { a, .. } => Some(a.nrows()),
            Dynamics::PerStep { a, .. } => a.first().map(|m| m.nrows()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub dynamics: Dynamics,
    /// Emission matrix, observed dimension × state dimension.
    pub h: DMatrix<f64>,
    pub p0: DMatrix<f64>,
    pub m0: DVector<f64>,
    /// Per-observation noise variance σ_obs².
    pub obs_noise: f64,
}

impl StateSpaceModel {
    pub fn state_dim(&self) -> usize {
        self.p0.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        if self.p0.ncols() != d || self.m0.len() != d || self.h.ncols() != d {
            return Err(Error::input("state-space model dimensions disagree"));
        }
        if self.dynamics.state_dim().is_some_and(|n| n != d) {
            return Err(Error::input("transition dimension disagrees with the state"));
        }
        if let Dynamics::PerStep { a, q } = &self.dynamics {
            if a.len() != q.len() {
                return Err(Error::input("per-step transitions and noises differ in length"));
            }
        }
        if !(self.obs_noise > 0.0 && self.obs_noise.is_finite()) {
            return Err(Error::input("observation noise must be finite and > 0"));
        }
        Ok(())
    }

    fn check_steps(&self, n_steps: usize) -> Result<()> {
        if let Dynamics::PerStep { a, .. } = &self.dynamics {
            if a.len() + 1 < n_steps {
                return Err(Error::input(format!(
                    "{} per-step transitions cannot cover {n_steps} steps",
                    a.len()
                )));
            }
        }
        Ok(())
    }
}

/// Observation sequence: one row per step, with a per-entry mask (`true` = observed).
#[derive(Debug, Clone)]
pub struct Observations {
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
}

impl Observations {
    pub fn fully_observed(values: DMatrix<f64>) -> Self {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Observations { values, mask }
    }

    pub fn missing(n_steps: usize, dim: usize) -> Self {
        Observations {
            values: DMatrix::zeros(n_steps, dim),
            mask: DMatrix::from_element(n_steps, dim, false),
        }
    }

    pub fn n_steps(&self) -> usize {
        self.values.nrows()
    }

    pub(crate) fn observed(&self, k: usize) -> Vec<usize> {
        (0..self.values.ncols()).filter(|&j| self.mask[(k, j)]).collect()
    }
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    /// Per-step predictive log densities of the observed entries.
    pub step_log_likelihoods: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

#[derive(Debug, Clone)]
pub struct SmootherResult {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
    /// `Cov(x_{k+1}, x_k | all data)` for each transition.
    pub cross_covs: Vec<DMatrix<f64>>,
}

/// Prediction step `x' = A x + q`.
pub fn kalman_predict(
    m: &DVector<f64>,
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let mut pp = a * p * a.transpose() + q;
    symmetrize(&mut pp);
    (a * m, pp)
}

/// Joseph-form update with emission `c` and isotropic noise `r`; returns the
/// updated moments and the predictive log density of `y`.
pub fn kalman_update(
    m: &DVector<f64>,
    p: &DMatrix<f64>,
    c: &DMatrix<f64>,
    y: &DVector<f64>,
    r: f64,
) -> Result<(DVector<f64>, DMatrix<f64>, f64)> {
    let pct = p * c.transpose();
    let mut s = c * &pct;
    for i in 0..s.nrows() {
        s[(i, i)] += r;
    }
    symmetrize(&mut s);
    let sf = Factor::new(&s, "innovation covariance")?;
    let v = y - c * m;
    let gain = sf.solve(&pct.transpose()).transpose();
    let m_new = m + &gain * &v;
    let d = p.nrows();
    let ikc = DMatrix::<f64>::identity(d, d) - &gain * c;
    let mut p_new = &ikc * p * ikc.transpose() + (&gain * gain.transpose()) * r;
    symmetrize(&mut p_new);
    let quad = v.dot(&sf.solve_vec(&v));
    let ll = -0.5 * (y.len() as f64 * LN_2PI + sf.logdet() + quad);
    Ok((m_new, p_new, ll))
}

/// Forward pass over all steps of `obs`.
pub fn kalman_filter(model: &StateSpaceModel, obs: &Observations) -> Result<FilterResult> {
    model.validate()?;
    if obs.values.ncols() != model.obs_dim() || obs.mask.shape() != obs.values.shape() {
        return Err(Error::input(format!(
            "observations have {} columns, emission has {} rows",
            obs.values.ncols(),
            model.obs_dim()
        )));
    }
    let n = obs.n_steps();
    model.check_steps(n)?;
    let mut out = FilterResult {
        predicted_means: Vec::with_capacity(n),
        predicted_covs: Vec::with_capacity(n),
        filtered_means: Vec::with_capacity(n),
        filtered_covs: Vec::with_capacity(n),
        step_log_likelihoods: Vec::with_capacity(n),
        log_marginal_likelihood: 0.0,
    };
    let mut m = model.m0.clone();
    let mut p = model.p0.clone();
    for k in 0..n {
        if k > 0 {
            let (a, q) = model.dynamics.transition(k - 1);
            (m, p) = kalman_predict(&m, &p, a, q);
        }
        out.predicted_means.push(m.clone());
        out.predicted_covs.push(p.clone());
        let idx = obs.observed(k);
        let mut ll = 0.0;
        if !idx.is_empty() {
            let c = model.h.select_rows(&idx);
            let y = DVector::from_iterator(idx.len(), idx.iter().map(|&j| obs.values[(k, j)]));
            let (m2, p2, l) = kalman_update(&m, &p, &c, &y, model.obs_noise)
                .map_err(|e| step_error(e, k))?;
            m = m2;
            p = p2;
            ll = l;
        }
        out.step_log_likelihoods.push(ll);
        out.log_marginal_likelihood += ll;
        out.filtered_means.push(m.clone());
        out.filtered_covs.push(p.clone());
    }
    Ok(out)
}

fn step_error(e: Error, k: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("step {k}: {msg}")),
        other => other,
    }
}

/// Backward Rauch–Tung–Striebel pass.
pub fn rts_smoother(model: &StateSpaceModel, filt: &FilterResult) -> Result<SmootherResult> {
    let n = filt.filtered_means.len();
    if n == 0 {
        return Err(Error::input("empty filter result"));
    }
    let mut means = filt.filtered_means.clone();
    let mut covs = filt.filtered_covs.clone();
    let mut cross = vec![DMatrix::zeros(0, 0); n - 1];
    for k in (0..n - 1).rev() {
        let (a, _) = model.dynamics.transition(k);
        let pp = &filt.predicted_covs[k + 1];
        let pf = &filt.filtered_covs[k];
        let fac = Factor::new(pp, "predicted covariance").map_err(|e| step_error(e, k + 1))?;
        // G = Pf Aᵀ Pp⁻¹
        let gain = fac.solve(&(a * pf)).transpose();
        let dm = &means[k + 1] - &filt.predicted_means[k + 1];
        means[k] = &filt.filtered_means[k] + &gain * dm;
        let dp = &covs[k + 1] - pp;
        let mut ps = pf + &gain * dp * gain.transpose();
        symmetrize(&mut ps);
        cross[k] = &covs[k + 1] * gain.transpose();
        covs[k] = ps;
    }
    Ok(SmootherResult { means, covs, cross_covs: cross })
}

#[derive(Debug, Clone)]
pub struct PriorSample {
    pub states: Vec<DVector<f64>>,
    /// Noise-free emissions `H x_k`, one row per step.
    pub signal: DMatrix<f64>,
    /// `signal` plus observation noise.
    pub observed: DMatrix<f64>,
}

/// Draws one trajectory from the prior; deterministic for a given seed.
pub fn sample_prior(model: &StateSpaceModel, n_steps: usize, seed: u64) -> Result<PriorSample> {
    if n_steps == 0 {
        return Err(Error::input("n_steps must be >= 1"));
    }
    model.validate()?;
    model.check_steps(n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.state_dim();
    let mut draw = |n: usize| -> DVector<f64> {
        DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)))
    };
    let shared_sqrt = match &model.dynamics {
        Dynamics::Shared { q, .. } => Some(psd_sqrt(q)),
        Dynamics::PerStep { .. } => None,
    };
    let mut states = Vec::with_capacity(n_steps);
    let mut x = &model.m0 + psd_sqrt(&model.p0) * draw(d);
    for k in 0..n_steps {
        if k > 0 {
            let (a, q) = model.dynamics.transition(k - 1);
            let noise = match &shared_sqrt {
                Some(s) => s * draw(d),
                None => psd_sqrt(q) * draw(d),
            };
            x = a * &x + noise;
        }
        states.push(x.clone());
    }
    let p = model.obs_dim();
    let mut signal = DMatrix::zeros(n_steps, p);
    for (k, s) in states.iter().enumerate() {
        signal.row_mut(k).copy_from(&(&model.h * s).transpose());
    }
    let sd = model.obs_noise.sqrt();
    let observed = DMatrix::from_fn(n_steps, p, |k, j| {
        let e: f64 = StandardNormal.sample(&mut rng);
        signal[(k, j)] + sd * e
    });
    Ok(PriorSample { states, signal, observed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{to_state_space, KernelSpec};

    fn temporal_model(spec: &KernelSpec, dt: f64, noise: f64) -> StateSpaceModel {
        let ss = to_state_space(spec, dt).unwrap();
        StateSpaceModel {
            m0: DVector::zeros(ss.sde.dim()),
            p0: ss.sde.pinf.clone(),
            h: ss.sde.h.clone(),
            dynamics: Dynamics::Shared { a: ss.a, q: ss.q },
            obs_noise: noise,
        }
    }

    #[test]
    fn single_scalar_observation() {
        let model = temporal_model(&KernelSpec::matern12(1.0, &[1.0]), 1.0, 0.1);
        let obs = Observations::fully_observed(DMatrix::from_element(1, 1, 0.5));
        let f = kalman_filter(&model, &obs).unwrap();
        let want = -0.5 * (LN_2PI + 1.1f64.ln() + 0.25 / 1.1);
        assert!((f.log_marginal_likelihood - want).abs() < 1e-14);
    }

    #[test]
    fn all_missing_gives_zero_and_prior_smoothing() {
        let spec = KernelSpec::matern32(2.0, &[1.5]);
        let model = temporal_model(&spec, 0.5, 0.1);
        let obs = Observations::missing(8, 1);
        let f = kalman_filter(&model, &obs).unwrap();
        assert_eq!(f.log_marginal_likelihood, 0.0);
        let s = rts_smoother(&model, &f).unwrap();
        for (m, p) in s.means.iter().zip(&s.covs) {
            assert!(m.amax() < 1e-12);
            assert!((p - &model.p0).amax() < 1e-10);
        }
    }

    #[test]
    fn single_step_smoother_is_filter() {
        let model = temporal_model(&KernelSpec::matern12(1.0, &[1.0]), 1.0, 0.3);
        let obs = Observations::fully_observed(DMatrix::from_element(1, 1, -0.2));
        let f = kalman_filter(&model, &obs).unwrap();
        let s = rts_smoother(&model, &f).unwrap();
        assert_eq!(s.means[0], f.filtered_means[0]);
        assert_eq!(s.covs[0], f.filtered_covs[0]);
    }

    #[test]
    fn emission_mismatch_is_input_error() {
        let model = temporal_model(&KernelSpec::matern12(1.0, &[1.0]), 1.0, 0.3);
        let obs = Observations::fully_observed(DMatrix::zeros(3, 2));
        assert!(matches!(kalman_filter(&model, &obs), Err(Error::Input(_))));
    }

    #[test]
    fn zero_prior_samples_zero() {
        let model = StateSpaceModel {
            dynamics: Dynamics::Shared { a: DMatrix::identity(2, 2), q: DMatrix::zeros(2, 2) },
            h: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            p0: DMatrix::zeros(2, 2),
            m0: DVector::zeros(2),
            obs_noise: 1.0,
        };
        let s = sample_prior(&model, 20, 3).unwrap();
        assert!(s.states.iter().all(|x| x.amax() == 0.0));
        assert!(s.signal.amax() == 0.0);
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = temporal_model(&KernelSpec::matern32(1.0, &[2.0]), 0.5, 0.1);
        let a = sample_prior(&model, 50, 11).unwrap();
        let b = sample_prior(&model, 50, 11).unwrap();
        assert_eq!(a.observed, b.observed);
        let c = sample_prior(&model, 50, 12).unwrap();
        assert_ne!(a.observed, c.observed);
    }
}
