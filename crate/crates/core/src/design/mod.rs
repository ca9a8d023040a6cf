//! Sensor placement: MIL joint optimization, space-filling and classical
//! baselines, sensor removal, and information utilities.

mod baselines;
mod classic;
mod mil;
mod optim;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{find_location, GridDataset, Normalizer};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix, KernelSpec};
use crate::linalg::{min_eigenvalue, symmetrized, Factor};
use crate::sparse_vgp::InducingSet;
use crate::stsvgp::{st_elbo, GradientMethod, StGpModel};

pub use baselines::{latin_hypercube, lhs_design, uniform_design};
pub use classic::{imse_design, imse_objective, kron_logdet, mes_design, mes_design_traced, MesTrace};
pub use mil::{fit_with_fixed_design, kmeans, mil_design, snap_to_grid};

/// Sensor locations in the dataset's coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorDesign {
    pub strategy: String,
    pub seed: u64,
    pub locations: Vec<[f64; 2]>,
    /// Locations that were held fixed while the design was built.
    pub fixed: Vec<bool>,
}

impl SensorDesign {
    pub fn new(strategy: &str, seed: u64, locations: Vec<[f64; 2]>) -> Self {
        let fixed = vec![false; locations.len()];
        SensorDesign { strategy: strategy.into(), seed, locations, fixed }
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fixed.len() != self.locations.len() {
            return Err(Error::input("design has mismatched locations and fixed flags"));
        }
        if self.locations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("design locations must be finite"));
        }
        Ok(())
    }

    /// Grid index of every location; errors if one is off the grid.
    pub fn grid_indices(&self, grid: &[[f64; 2]]) -> Result<Vec<usize>> {
        self.locations
            .iter()
            .map(|p| {
                find_location(grid, *p).ok_or_else(|| {
                    Error::input(format!("design location ({}, {}) is not on the spatial grid", p[0], p[1]))
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: SensorDesign = serde_json::from_str(s)
            .map_err(|e| Error::Parse { line: e.line(), msg: format!("design: {e}") })?;
        d.validate()?;
        Ok(d)
    }
}

/// Settings shared by the gradient-based strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub restarts: usize,
    /// Central-difference step (normalized units) where differences are used.
    pub fd_step: f64,
    /// Stop when the tracked value moves less than this (relative) over 50 accepted steps.
    pub tolerance: f64,
    pub seed: u64,
    pub gradient: GradientChoice,
    pub learn_hyperparameters: bool,
    /// Refit hyperparameters with the snapped locations held fixed.
    pub refit_after_snap: bool,
    /// Free locations closer than this (normalized units) are pushed apart.
    pub min_separation: f64,
    /// Starting noise variance; defaults to 10% of the data variance.
    pub initial_noise_var: Option<f64>,
    pub kmeans_iters: usize,
}

/// Serializable mirror of [`GradientMethod`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientChoice {
    #[default]
    Analytic,
    FiniteDifference,
}

impl From<GradientChoice> for GradientMethod {
    fn from(g: GradientChoice) -> Self {
        match g {
            GradientChoice::Analytic => GradientMethod::Analytic,
            GradientChoice::FiniteDifference => GradientMethod::FiniteDifference,
        }
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 500,
            lr_start: 0.05,
            lr_end: 0.001,
            restarts: 3,
            fd_step: 1e-4,
            tolerance: 1e-7,
            seed: 0,
            gradient: GradientChoice::Analytic,
            learn_hyperparameters: true,
            refit_after_snap: false,
            min_separation: 1e-3,
            initial_noise_var: None,
            kmeans_iters: 100,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if self.max_iters == 0 || self.restarts == 0 || self.kmeans_iters == 0 {
            return Err(Error::input("max_iters, restarts and kmeans_iters must be >= 1"));
        }
        if !pos(self.lr_start) || !pos(self.lr_end) || !pos(self.fd_step) || !pos(self.tolerance) {
            return Err(Error::input("step sizes and tolerance must be finite and > 0"));
        }
        if !(self.min_separation >= 0.0) || self.initial_noise_var.is_some_and(|v| !pos(v)) {
            return Err(Error::input("min_separation must be >= 0 and initial_noise_var > 0"));
        }
        Ok(())
    }
}

/// Hyperparameters and diagnostics of a fitted model. Lengthscales refer to
/// coordinates normalized by `normalizer`; values are offset by `offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kernel: KernelSpec,
    pub sigma2: f64,
    pub offset: f64,
    pub normalizer: Normalizer,
    /// Bound at the reported (snapped) design.
    pub elbo: f64,
    /// Bound at the continuous optimum before snapping.
    pub pre_snap_elbo: f64,
    /// Bound after every accepted iteration of the best restart.
    pub elbo_trace: Vec<f64>,
    /// Final bound per restart (`None` when the restart diverged).
    pub restart_elbos: Vec<Option<f64>>,
    pub best_restart: usize,
    pub iterations: usize,
}

impl FitResult {
    /// Model on `data` (raw units) with the fitted hyperparameters and `design` as inducing set.
    pub fn model_for(&self, data: &GridDataset, design: &[[f64; 2]]) -> Result<StGpModel> {
        let grid = data.spatial_locations.iter().map(|p| self.normalizer.forward(*p)).collect();
        let z = design.iter().map(|p| self.normalizer.forward(*p)).collect();
        StGpModel::new(self.kernel.clone(), InducingSet::free(z), data.times.clone(), self.sigma2, grid)
    }

    /// Copy of `data` with normalized coordinates and the offset removed.
    pub fn normalize_data(&self, data: &GridDataset) -> GridDataset {
        normalized(data, &self.normalizer, self.offset)
    }
}

pub(crate) fn normalized(data: &GridDataset, norm: &Normalizer, offset: f64) -> GridDataset {
    let mut d = data.clone();
    d.spatial_locations = data.spatial_locations.iter().map(|p| norm.forward(*p)).collect();
    d.values.iter_mut().zip(data.mask.iter()).for_each(|(v, m)| {
        if *m {
            *v -= offset
        }
    });
    d
}

/// `½ (log det K_prior − log det K_post)`.
pub fn gaussian_eig(prior: &DMatrix<f64>, posterior: &DMatrix<f64>) -> Result<f64> {
    let check = |m: &DMatrix<f64>, what: &str| -> Result<()> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::input(format!("{what} must be square and non-empty")));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        if (m - m.transpose()).amax() > 1e-10 * scale || min_eigenvalue(m) <= 0.0 {
            return Err(Error::input(format!("{what} must be symmetric positive definite")));
        }
        Ok(())
    };
    check(prior, "prior covariance")?;
    check(posterior, "posterior covariance")?;
    if prior.shape() != posterior.shape() {
        return Err(Error::input("prior and posterior sizes differ"));
    }
    let lp = Factor::new(prior, "prior covariance")?.logdet();
    let lq = Factor::new(posterior, "posterior covariance")?.logdet();
    Ok(0.5 * (lp - lq))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// `log det K(X_n)`.
    Mes,
    /// `log det K_post(X_test)`.
    DOpt,
    /// `−tr K_post(X_grid)`.
    Imse,
}

/// Static spatial model used to score a design.
#[derive(Debug, Clone)]
pub struct UtilityContext {
    /// 2-D spatial kernel.
    pub kernel: KernelSpec,
    pub sigma2: f64,
    pub grid: Vec<[f64; 2]>,
    /// Test points for `DOpt`; defaults to the grid points not in the design.
    pub test: Option<Vec<[f64; 2]>>,
}

fn posterior_cov(ctx: &UtilityContext, design: &[[f64; 2]], test: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    let kdd = kernel_matrix(&ctx.kernel, design, design)?;
    let mut noisy = kdd;
    for i in 0..noisy.nrows() {
        noisy[(i, i)] += ctx.sigma2;
    }
    let f = Factor::new(&noisy, "K_DD + σ²I")?;
    let kdt = kernel_matrix(&ctx.kernel, design, test)?;
    let ktt = kernel_matrix(&ctx.kernel, test, test)?;
    Ok(symmetrized(ktt - kdt.transpose() * f.solve(&kdt)))
}

pub fn utility(kind: UtilityKind, ctx: &UtilityContext, design: &SensorDesign) -> Result<f64> {
    design.validate()?;
    if design.is_empty() {
        return Err(Error::input("design is empty"));
    }
    if !(ctx.sigma2 >= 0.0) {
        return Err(Error::input("noise variance must be >= 0"));
    }
    let d = &design.locations;
    match kind {
        UtilityKind::Mes => Ok(Factor::new(&kernel_matrix(&ctx.kernel, d, d)?, "K(X_n)")?.logdet()),
        UtilityKind::DOpt => {
            let test: Vec<[f64; 2]> = match &ctx.test {
                Some(t) => t.clone(),
                None => ctx.grid.iter().filter(|g| find_location(d, **g).is_none()).copied().collect(),
            };
            if test.is_empty() {
                return Err(Error::input("no test points left for the D-optimal utility"));
            }
            Ok(Factor::new(&posterior_cov(ctx, d, &test)?, "K_post(X_test)")?.logdet())
        }
        UtilityKind::Imse => Ok(-posterior_cov(ctx, d, &ctx.grid)?.trace()),
    }
}

/// Score of one removal subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalScore {
    /// Indices into the original design.
    pub removed: Vec<usize>,
    pub elbo: f64,
}

/// Default cap on the number of enumerated subsets.
pub const REMOVAL_CAP: u64 = 100_000;

fn binomial(n: usize, r: usize) -> u64 {
    let r = r.min(n - r);
    (0..r).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// All `r`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..r).collect();
    if r > n {
        return out;
    }
    loop {
        out.push(cur.clone());
        let Some(i) = (0..r).rev().find(|&i| cur[i] != i + n - r) else { break };
        cur[i] += 1;
        for j in i + 1..r {
            cur[j] = cur[j - 1] + 1;
        }
    }
    out
}

/// Evaluates the bound for every way of removing `r` sensors (hyperparameters
/// fixed) and returns the best remaining design with the full score table.
pub fn sensor_removal(
    data: &GridDataset,
    fit: &FitResult,
    design: &SensorDesign,
    r: usize,
    cap: u64,
) -> Result<(SensorDesign, Vec<RemovalScore>)> {
    design.validate()?;
    let n = design.len();
    if r >= n {
        return Err(Error::input(format!("cannot remove {r} of {n} sensors")));
    }
    let count = binomial(n, r);
    if count > cap {
        return Err(Error::input(format!(
            "{count} subsets exceed the enumeration cap {cap}; a greedy search is needed"
        )));
    }
    let norm_data = fit.normalize_data(data);
    let subsets = combinations(n, r);
    let scores: Vec<Result<RemovalScore>> = subsets
        .into_par_iter()
        .map(|removed| {
            let keep: Vec<[f64; 2]> = (0..n).filter(|i| !removed.contains(i)).map(|i| design.locations[i]).collect();
            let model = fit.model_for(data, &keep)?;
            Ok(RemovalScore { elbo: st_elbo(&model, &norm_data)?, removed })
        })
        .collect();
    let scores: Vec<RemovalScore> = scores.into_iter().collect::<Result<_>>()?;
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if s.elbo > scores[b].elbo { i } else { b });
    let removed = &scores[best].removed;
    let keep: Vec<usize> = (0..n).filter(|i| !removed.contains(i)).collect();
    let out = SensorDesign {
        strategy: format!("{}-removal", design.strategy),
        seed: design.seed,
        locations: keep.iter().map(|&i| design.locations[i]).collect(),
        fixed: keep.iter().map(|&i| design.fixed[i]).collect(),
    };
    Ok((out, scores))
}
