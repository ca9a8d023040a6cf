//! Kernel algebra: Matérn family, a cosine-modulated Matérn-3/2, sums,
//! products, and separable spatial × temporal products.
//!
//! Hyperparameters are positive and exposed to optimizers on log scale.
//! Points are plain coordinate slices; a separable kernel takes
//! `[spatial coords..., t]`.

mod json;
mod state_space;

pub use state_space::{to_state_space, DiscreteSde, LtiSde};
pub(crate) use state_space::discretize_with_grad;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Leaf hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Signal variance σ_f².
    pub variance: f64,
    /// One lengthscale per input dimension.
    pub lengthscales: Vec<f64>,
    /// Period of the cosine modulation; only used by `QuasiPeriodicMatern32`.
    pub period: Option<f64>,
}

impl HyperParams {
    pub fn new(variance: f64, lengthscales: Vec<f64>) -> Self {
        HyperParams { variance, lengthscales, period: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    Matern12(HyperParams),
    Matern32(HyperParams),
    Matern52(HyperParams),
    /// `σ² cos(2πr/period) · matern32(r)`.
    QuasiPeriodicMatern32(HyperParams),
    Sum(Vec<KernelSpec>),
    Product(Vec<KernelSpec>),
    Separable { spatial: Box<KernelSpec>, temporal: Box<KernelSpec> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Nu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl Nu {
    /// Unit-variance correlation `g(r)` and `g'(r)/r`.
    fn profile(self, r: f64) -> (f64, f64) {
        match self {
            Nu::Half => {
                let e = (-r).exp();
                let h = if r > 0.0 { -e / r } else { 0.0 };
                (e, h)
            }
            Nu::ThreeHalves => {
                let s = 3f64.sqrt() * r;
                let e = (-s).exp();
                ((1.0 + s) * e, -3.0 * e)
            }
            Nu::FiveHalves => {
                let s = 5f64.sqrt() * r;
                let e = (-s).exp();
                ((1.0 + s + s * s / 3.0) * e, -(5.0 / 3.0) * (1.0 + s) * e)
            }
        }
    }
}

/// Value and derivatives of `k(a, b)` returned by [`KernelSpec::eval_grad`].
#[derive(Debug, Clone)]
pub struct KernelGrad {
    pub value: f64,
    /// `∂k/∂a` (the first argument).
    pub d_input: Vec<f64>,
    /// `∂k/∂ log θ` in [`KernelSpec::log_params`] order.
    pub d_log_params: Vec<f64>,
}

impl KernelSpec {
    pub fn matern12(variance: f64, lengthscales: &[f64]) -> Self {
        KernelSpec::Matern12(HyperParams::new(variance, lengthscales.to_vec()))
    }

    pub fn matern32(variance: f64, lengthscales: &[f64]) -> Self {
        KernelSpec::Matern32(HyperParams::new(variance, lengthscales.to_vec()))
    }

    pub fn matern52(variance: f64, lengthscales: &[f64]) -> Self {
        KernelSpec::Matern52(HyperParams::new(variance, lengthscales.to_vec()))
    }

    pub fn quasi_periodic(variance: f64, lengthscale: f64, period: f64) -> Self {
        KernelSpec::QuasiPeriodicMatern32(HyperParams {
            variance,
            lengthscales: vec![lengthscale],
            period: Some(period),
        })
    }

    pub fn separable(spatial: KernelSpec, temporal: KernelSpec) -> Self {
        KernelSpec::Separable { spatial: Box::new(spatial), temporal: Box::new(temporal) }
    }

    /// Checks structural and positivity invariants.
    pub fn validate(&self) -> Result<()> {
        self.validate_inner(true)
    }

    fn validate_inner(&self, top: bool) -> Result<()> {
        match self {
            KernelSpec::Matern12(hp) | KernelSpec::Matern32(hp) | KernelSpec::Matern52(hp) => {
                check_leaf(hp, false)
            }
            KernelSpec::QuasiPeriodicMatern32(hp) => {
                check_leaf(hp, true)?;
                if hp.lengthscales.len() != 1 {
                    return Err(Error::input("quasi-periodic kernel takes a single lengthscale"));
                }
                Ok(())
            }
            KernelSpec::Sum(children) | KernelSpec::Product(children) => {
                let first = children
                    .first()
                    .ok_or_else(|| Error::input("sum/product kernel needs at least one child"))?;
                let dim = first.input_dim();
                for c in children {
                    c.validate_inner(false)?;
                    if c.input_dim() != dim {
                        return Err(Error::input("sum/product children disagree on input dimension"));
                    }
                }
                Ok(())
            }
            KernelSpec::Separable { spatial, temporal } => {
                if !top {
                    return Err(Error::input("separable kernel may only appear at the top level"));
                }
                spatial.validate_inner(false)?;
                temporal.validate_inner(false)?;
                if temporal.input_dim() != 1 {
                    return Err(Error::input("temporal child of a separable kernel must be 1-D"));
                }
                Ok(())
            }
        }
    }

    /// Number of input coordinates the kernel consumes.
    pub fn input_dim(&self) -> usize {
        match self {
            KernelSpec::Matern12(hp)
            | KernelSpec::Matern32(hp)
            | KernelSpec::Matern52(hp)
            | KernelSpec::QuasiPeriodicMatern32(hp) => hp.lengthscales.len(),
            KernelSpec::Sum(c) | KernelSpec::Product(c) => c.first().map_or(0, |k| k.input_dim()),
            KernelSpec::Separable { spatial, .. } => spatial.input_dim() + 1,
        }
    }

    /// `κ(a, a)` for a stationary kernel.
    pub fn variance(&self) -> f64 {
        match self {
            KernelSpec::Matern12(hp)
            | KernelSpec::Matern32(hp)
            | KernelSpec::Matern52(hp)
            | KernelSpec::QuasiPeriodicMatern32(hp) => hp.variance,
            KernelSpec::Sum(c) => c.iter().map(|k| k.variance()).sum(),
            KernelSpec::Product(c) => c.iter().map(|k| k.variance()).product(),
            KernelSpec::Separable { spatial, temporal } => spatial.variance() * temporal.variance(),
        }
    }

    pub fn spatial(&self) -> Option<&KernelSpec> {
        match self {
            KernelSpec::Separable { spatial, .. } => Some(spatial),
            _ => None,
        }
    }

    pub fn temporal(&self) -> Option<&KernelSpec> {
        match self {
            KernelSpec::Separable { temporal, .. } => Some(temporal),
            _ => None,
        }
    }

    /// Covariance between two points, with dimension checks.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let d = self.input_dim();
        if a.len() != d || b.len() != d {
            return Err(Error::input(format!(
                "kernel expects {d}-D points, got {} and {}",
                a.len(),
                b.len()
            )));
        }
        Ok(self.k(a, b))
    }

    /// Unchecked evaluation used in inner loops.
    pub(crate) fn k(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            KernelSpec::Matern12(hp) => matern(Nu::Half, hp, a, b),
            KernelSpec::Matern32(hp) => matern(Nu::ThreeHalves, hp, a, b),
            KernelSpec::Matern52(hp) => matern(Nu::FiveHalves, hp, a, b),
            KernelSpec::QuasiPeriodicMatern32(hp) => {
                let tau = a[0] - b[0];
                let (g, _) = Nu::ThreeHalves.profile(tau.abs() / hp.lengthscales[0]);
                hp.variance * (2.0 * std::f64::consts::PI * tau / period(hp)).cos() * g
            }
            KernelSpec::Sum(c) => c.iter().map(|k| k.k(a, b)).sum(),
            KernelSpec::Product(c) => c.iter().map(|k| k.k(a, b)).product(),
            KernelSpec::Separable { spatial, temporal } => {
                let ds = a.len() - 1;
                spatial.k(&a[..ds], &b[..ds]) * temporal.k(&a[ds..], &b[ds..])
            }
        }
    }

    /// Number of log-hyperparameters.
    pub fn n_params(&self) -> usize {
        match self {
            KernelSpec::Matern12(hp) | KernelSpec::Matern32(hp) | KernelSpec::Matern52(hp) => {
                1 + hp.lengthscales.len()
            }
            KernelSpec::QuasiPeriodicMatern32(_) => 3,
            KernelSpec::Sum(c) | KernelSpec::Product(c) => c.iter().map(|k| k.n_params()).sum(),
            KernelSpec::Separable { spatial, temporal } => spatial.n_params() + temporal.n_params(),
        }
    }

    /// Log-hyperparameters in tree order: per leaf `log σ²`, `log ℓ_i...`, then `log period`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_params(&mut out);
        out
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::Matern12(hp)
            | KernelSpec::Matern32(hp)
            | KernelSpec::Matern52(hp)
            | KernelSpec::QuasiPeriodicMatern32(hp) => {
                out.push(hp.variance.ln());
                out.extend(hp.lengthscales.iter().map(|l| l.ln()));
                if let Some(p) = hp.period {
                    out.push(p.ln());
                }
            }
            KernelSpec::Sum(c) | KernelSpec::Product(c) => c.iter().for_each(|k| k.push_params(out)),
            KernelSpec::Separable { spatial, temporal } => {
                spatial.push_params(out);
                temporal.push_params(out);
            }
        }
    }

    /// Human-readable names matching [`Self::log_params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_names("", &mut out);
        out
    }

    fn push_names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            KernelSpec::Matern12(hp)
            | KernelSpec::Matern32(hp)
            | KernelSpec::Matern52(hp)
            | KernelSpec::QuasiPeriodicMatern32(hp) => {
                out.push(format!("{prefix}log_variance"));
                for i in 0..hp.lengthscales.len() {
                    out.push(format!("{prefix}log_lengthscale[{i}]"));
                }
                if hp.period.is_some() {
                    out.push(format!("{prefix}log_period"));
                }
            }
            KernelSpec::Sum(c) | KernelSpec::Product(c) => {
                for (i, k) in c.iter().enumerate() {
                    k.push_names(&format!("{prefix}{i}."), out);
                }
            }
            KernelSpec::Separable { spatial, temporal } => {
                spatial.push_names(&format!("{prefix}spatial."), out);
                temporal.push_names(&format!("{prefix}temporal."), out);
            }
        }
    }

    /// Returns a copy with hyperparameters replaced by `exp(log_params)`.
    pub fn with_log_params(&self, log_params: &[f64]) -> Result<KernelSpec> {
        if log_params.len() != self.n_params() {
            return Err(Error::input(format!(
                "expected {} log-parameters, got {}",
                self.n_params(),
                log_params.len()
            )));
        }
        let mut k = self.clone();
        let mut it = log_params.iter().map(|v| v.exp());
        k.pull_params(&mut it);
        Ok(k)
    }

    fn pull_params(&mut self, it: &mut impl Iterator<Item = f64>) {
        match self {
            KernelSpec::Matern12(hp)
            | KernelSpec::Matern32(hp)
            | KernelSpec::Matern52(hp)
            | KernelSpec::QuasiPeriodicMatern32(hp) => {
                hp.variance = it.next().unwrap();
                for l in hp.lengthscales.iter_mut() {
                    *l = it.next().unwrap();
                }
                if let Some(p) = hp.period.as_mut() {
                    *p = it.next().unwrap();
                }
            }
            KernelSpec::Sum(c) | KernelSpec::Product(c) => {
                c.iter_mut().for_each(|k| k.pull_params(it))
            }
            KernelSpec::Separable { spatial, temporal } => {
                spatial.pull_params(it);
                temporal.pull_params(it);
            }
        }
    }

    /// Multiplies every lengthscale by `factor` (used for unit normalization).
    pub fn scale_lengthscales(&self, factor: f64) -> KernelSpec {
        let mut k = self.clone();
        k.visit_leaves(&mut |hp| hp.lengthscales.iter_mut().for_each(|l| *l *= factor));
        k
    }

    fn visit_leaves(&mut self, f: &mut impl FnMut(&mut HyperParams)) {
        match self {
            KernelSpec::Matern12(hp)
            | KernelSpec::Matern32(hp)
            | KernelSpec::Matern52(hp)
            | KernelSpec::QuasiPeriodicMatern32(hp) => f(hp),
            KernelSpec::Sum(c) | KernelSpec::Product(c) => c.iter_mut().for_each(|k| k.visit_leaves(f)),
            KernelSpec::Separable { spatial, temporal } => {
                spatial.visit_leaves(f);
                temporal.visit_leaves(f);
            }
        }
    }

    /// Value, input gradient, and log-hyperparameter gradient of `k(a, b)`.
    pub fn eval_grad(&self, a: &[f64], b: &[f64]) -> KernelGrad {
        match self {
            KernelSpec::Matern12(hp) => matern_grad(Nu::Half, hp, a, b),
            KernelSpec::Matern32(hp) => matern_grad(Nu::ThreeHalves, hp, a, b),
            KernelSpec::Matern52(hp) => matern_grad(Nu::FiveHalves, hp, a, b),
            KernelSpec::QuasiPeriodicMatern32(hp) => {
                let tau = a[0] - b[0];
                let ell = hp.lengthscales[0];
                let r = tau.abs() / ell;
                let (g, h) = Nu::ThreeHalves.profile(r);
                let omega = 2.0 * std::f64::consts::PI / period(hp);
                let (s, c) = (omega * tau).sin_cos();
                let value = hp.variance * c * g;
                let d_tau = hp.variance * (-omega * s * g + c * h * tau / (ell * ell));
                KernelGrad {
                    value,
                    d_input: vec![d_tau],
                    d_log_params: vec![
                        value,
                        -hp.variance * c * h * r * r,
                        hp.variance * g * s * omega * tau,
                    ],
                }
            }
            KernelSpec::Sum(children) => {
                let mut value = 0.0;
                let mut d_input = vec![0.0; a.len()];
                let mut d_log_params = Vec::with_capacity(self.n_params());
                for c in children {
                    let g = c.eval_grad(a, b);
                    value += g.value;
                    d_input.iter_mut().zip(&g.d_input).for_each(|(x, y)| *x += y);
                    d_log_params.extend(g.d_log_params);
                }
                KernelGrad { value, d_input, d_log_params }
            }
            KernelSpec::Product(children) => {
                let grads: Vec<KernelGrad> = children.iter().map(|c| c.eval_grad(a, b)).collect();
                let value: f64 = grads.iter().map(|g| g.value).product();
                let mut d_input = vec![0.0; a.len()];
                let mut d_log_params = Vec::with_capacity(self.n_params());
                for (j, g) in grads.iter().enumerate() {
                    let others: f64 = grads
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| *i != j)
                        .map(|(_, o)| o.value)
                        .product();
                    d_input.iter_mut().zip(&g.d_input).for_each(|(x, y)| *x += others * y);
                    d_log_params.extend(g.d_log_params.iter().map(|v| others * v));
                }
                KernelGrad { value, d_input, d_log_params }
            }
            KernelSpec::Separable { spatial, temporal } => {
                let ds = a.len() - 1;
                let gs = spatial.eval_grad(&a[..ds], &b[..ds]);
                let gt = temporal.eval_grad(&a[ds..], &b[ds..]);
                let mut d_input: Vec<f64> = gs.d_input.iter().map(|v| v * gt.value).collect();
                d_input.extend(gt.d_input.iter().map(|v| v * gs.value));
                let mut d_log_params: Vec<f64> =
                    gs.d_log_params.iter().map(|v| v * gt.value).collect();
                d_log_params.extend(gt.d_log_params.iter().map(|v| v * gs.value));
                KernelGrad { value: gs.value * gt.value, d_input, d_log_params }
            }
        }
    }
}

fn period(hp: &HyperParams) -> f64 {
    hp.period.expect("validated quasi-periodic kernel has a period")
}

fn check_leaf(hp: &HyperParams, needs_period: bool) -> Result<()> {
    let pos = |v: f64| v.is_finite() && v > 0.0;
    if !pos(hp.variance) {
        return Err(Error::input(format!("variance must be finite and > 0, got {}", hp.variance)));
    }
    if hp.lengthscales.is_empty() || !hp.lengthscales.iter().all(|l| pos(*l)) {
        return Err(Error::input("lengthscales must be non-empty, finite and > 0"));
    }
    match (needs_period, hp.period) {
        (true, Some(p)) if pos(p) => Ok(()),
        (true, _) => Err(Error::input("quasi-periodic kernel needs a finite positive period")),
        (false, Some(_)) => Err(Error::input("period is only valid for the quasi-periodic kernel")),
        (false, None) => Ok(()),
    }
}

fn scaled_distance(hp: &HyperParams, a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(&hp.lengthscales)
        .map(|((x, y), l)| {
            let u = (x - y) / l;
            u * u
        })
        .sum::<f64>()
        .sqrt()
}

fn matern(nu: Nu, hp: &HyperParams, a: &[f64], b: &[f64]) -> f64 {
    hp.variance * nu.profile(scaled_distance(hp, a, b)).0
}

fn matern_grad(nu: Nu, hp: &HyperParams, a: &[f64], b: &[f64]) -> KernelGrad {
    let r = scaled_distance(hp, a, b);
    let (g, h) = nu.profile(r);
    let value = hp.variance * g;
    let mut d_input = Vec::with_capacity(a.len());
    let mut d_log_params = Vec::with_capacity(1 + a.len());
    d_log_params.push(value);
    for ((x, y), l) in a.iter().zip(b).zip(&hp.lengthscales) {
        let tau = x - y;
        d_input.push(hp.variance * h * tau / (l * l));
        d_log_params.push(-hp.variance * h * (tau / l) * (tau / l));
    }
    KernelGrad { value, d_input, d_log_params }
}

/// Dense covariance matrix between two point lists.
pub fn kernel_matrix<P: AsRef<[f64]>>(spec: &KernelSpec, a: &[P], b: &[P]) -> Result<DMatrix<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("kernel_matrix needs non-empty point lists"));
    }
    let d = spec.input_dim();
    if a.iter().chain(b).any(|p| p.as_ref().len() != d) {
        return Err(Error::input(format!("kernel expects {d}-D points")));
    }
    let same = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.as_ref() == y.as_ref());
    if same {
        return Ok(kernel_matrix_sym(spec, a));
    }
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| spec.k(a[i].as_ref(), b[j].as_ref())))
}

/// Exactly symmetric `K(A, A)`; points are assumed validated.
pub(crate) fn kernel_matrix_sym<P: AsRef<[f64]>>(spec: &KernelSpec, a: &[P]) -> DMatrix<f64> {
    let n = a.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.k(a[i].as_ref(), a[j].as_ref());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Unchecked cross-covariance.
pub(crate) fn kernel_matrix_cross<P: AsRef<[f64]>, Q: AsRef<[f64]>>(
    spec: &KernelSpec,
    a: &[P],
    b: &[Q],
) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| spec.k(a[i].as_ref(), b[j].as_ref()))
}
