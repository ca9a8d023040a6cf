//! End-to-end protocols: fit on a training window, update on sensor
//! observations from a test window, predict the whole grid, and score.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{inject_sim_error, GridDataset};
use crate::design::{fit_with_fixed_design, mil_design, FitResult, OptimizerConfig, SensorDesign};
use crate::error::{Error, Result};
use crate::evalsuite::{rmse, EvalReport};
use crate::kernels::KernelSpec;
use crate::stsvgp::{st_fit_posterior, st_predict, test_time_update, CovarianceReuse, TestObservations, TestTimeOptions};

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub reuse: CovarianceReuse,
    /// Absolute error counted as extreme.
    pub threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { reuse: CovarianceReuse::PerStep, threshold: 1.0 }
    }
}

/// Prediction over the test window and its scores.
#[derive(Debug, Clone)]
pub struct DesignEvaluation {
    pub report: EvalReport,
    /// Predictive mean of the field, `N_t(test) × N_s`, in data units.
    pub mean: DMatrix<f64>,
    /// Predictive variance of an observation (field variance plus noise).
    pub var: DMatrix<f64>,
    pub rmse_per_location: Vec<f64>,
}

/// Scores `design` using the hyperparameters in `fit`.
///
/// The inducing covariances come from a fit on `train`; the means from a pass
/// over the `test` values at the sensors. Predictions cover every grid point
/// and are compared with all observed test values.
pub fn evaluate_design(
    train: &GridDataset,
    test: &GridDataset,
    design: &SensorDesign,
    fit: &FitResult,
    opts: EvalOptions,
) -> Result<DesignEvaluation> {
    design.validate()?;
    if test.spatial_locations != train.spatial_locations {
        return Err(Error::input("train and test windows must share the spatial grid"));
    }
    let idx = design.grid_indices(&train.spatial_locations)?;
    let model = fit.model_for(train, &design.locations)?;
    let trained = st_fit_posterior(&model, &fit.normalize_data(train))?;
    let sensors = fit.normalize_data(test).select_locations(&idx)?;
    let obs = TestObservations {
        times: sensors.times.clone(),
        locations: sensors.spatial_locations.clone(),
        values: sensors.values,
        mask: sensors.mask,
    };
    let post = test_time_update(&model, &trained, &obs, TestTimeOptions { reuse: opts.reuse, sweeps: 1 })?;
    let field = st_predict(&model, &post, &model.spatial_grid)?;
    let mean = field.mean.add_scalar(fit.offset);
    let var = field.var.add_scalar(fit.sigma2);
    let report = EvalReport::compute(&mean, &var, &test.values, Some(&test.mask), opts.threshold)?;
    let rmse_per_location = (0..test.n_space())
        .map(|j| {
            let c = |m: &DMatrix<f64>| m.columns(j, 1).into_owned();
            let mask = test.mask.columns(j, 1).into_owned();
            rmse(&c(&mean), &c(&test.values), Some(&mask)).unwrap_or(f64::NAN)
        })
        .collect();
    Ok(DesignEvaluation { report, mean, var, rmse_per_location })
}

/// Fits hyperparameters with the design held fixed, then evaluates it.
pub fn evaluate_baseline(
    train: &GridDataset,
    test: &GridDataset,
    kernel: &KernelSpec,
    design: &SensorDesign,
    cfg: &OptimizerConfig,
    opts: EvalOptions,
) -> Result<(FitResult, DesignEvaluation)> {
    let fit = fit_with_fixed_design(train, kernel, design, cfg)?;
    let eval = evaluate_design(train, test, design, &fit, opts)?;
    Ok((fit, eval))
}

/// One simulator-error setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub ell_s: f64,
    pub ell_t: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ell_s: f64,
    pub ell_t: f64,
    pub var: f64,
    pub seed: u64,
    pub rmse: f64,
    pub npll: f64,
}

/// Per-cell mean and standard deviation over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub ell_s: f64,
    pub ell_t: f64,
    pub var: f64,
    pub n: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub npll_mean: f64,
    pub npll_std: f64,
}

/// Simulator-error ablation.
///
/// Hyperparameters are first fitted by MIL on the clean training data. For
/// each cell and seed, error is injected into the training data, MIL places
/// `n_sensors` with those hyperparameters frozen, and the design is scored on
/// the clean data.
pub fn ablate_noise(
    train: &GridDataset,
    test: &GridDataset,
    kernel: &KernelSpec,
    n_sensors: usize,
    cells: &[AblationCell],
    seeds: &[u64],
    cfg: &OptimizerConfig,
    opts: EvalOptions,
) -> Result<(FitResult, Vec<AblationRow>)> {
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::input("ablation needs at least one cell and one seed"));
    }
    let (_, golden) = mil_design(train, kernel, n_sensors, None, cfg)?;
    let jobs: Vec<(AblationCell, u64)> = cells.iter().flat_map(|c| seeds.iter().map(move |s| (*c, *s))).collect();
    let rows: Vec<Result<AblationRow>> = jobs
        .into_par_iter()
        .map(|(cell, seed)| {
            let noisy = inject_sim_error(train, cell.ell_s, cell.ell_t, cell.var, seed)?;
            let frozen = OptimizerConfig {
                learn_hyperparameters: false,
                initial_noise_var: Some(golden.sigma2),
                seed,
                ..cfg.clone()
            };
            let (design, _) = mil_design(&noisy, &golden.kernel, n_sensors, None, &frozen)?;
            let eval = evaluate_design(train, test, &design, &golden, opts)?;
            Ok(AblationRow {
                ell_s: cell.ell_s,
                ell_t: cell.ell_t,
                var: cell.var,
                seed,
                rmse: eval.report.rmse,
                npll: eval.report.npll,
            })
        })
        .collect();
    Ok((golden, rows.into_iter().collect::<Result<_>>()?))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Groups rows by cell (in first-appearance order).
pub fn summarize_ablation(rows: &[AblationRow]) -> Vec<AblationSummary> {
    let mut cells: Vec<AblationCell> = Vec::new();
    for r in rows {
        let c = AblationCell { ell_s: r.ell_s, ell_t: r.ell_t, var: r.var };
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    cells
        .iter()
        .map(|c| {
            let sel: Vec<&AblationRow> =
                rows.iter().filter(|r| r.ell_s == c.ell_s && r.ell_t == c.ell_t && r.var == c.var).collect();
            let (rmse_mean, rmse_std) = mean_std(&sel.iter().map(|r| r.rmse).collect::<Vec<_>>());
            let (npll_mean, npll_std) = mean_std(&sel.iter().map(|r| r.npll).collect::<Vec<_>>());
            AblationSummary { ell_s: c.ell_s, ell_t: c.ell_t, var: c.var, n: sel.len(), rmse_mean, rmse_std, npll_mean, npll_std }
        })
        .collect()
}
