use nalgebra::DMatrix;

use super::mil::{kmeans, snap_to_grid};
use super::optim::{adam_ascent, Eval};
use super::{FitResult, OptimizerConfig, SensorDesign};
use crate::datasets::{hull_project, DomainHull, GridDataset};
use crate::error::{Error, Result};
use crate::kernels::{kernel_matrix_sym, to_state_space};
use crate::linalg::Factor;
use crate::sparse_vgp::InducingSet;
use crate::stsvgp::{st_predict, StGpModel};

/// `log det(Σ_S ⊗ K_T)` through `N_T log det Σ_S + N_S log det K_T`.
pub fn kron_logdet(sigma_s: &DMatrix<f64>, k_t: &DMatrix<f64>) -> Result<f64> {
    let ls = Factor::new(sigma_s, "spatial covariance")?.logdet();
    let lt = Factor::new(k_t, "temporal covariance")?.logdet();
    Ok(k_t.nrows() as f64 * ls + sigma_s.nrows() as f64 * lt)
}

fn check_init(data: &GridDataset, init: &SensorDesign, n_add: usize) -> Result<()> {
    init.validate()?;
    init.grid_indices(&data.spatial_locations)?;
    if n_add == 0 || init.len() + n_add > data.n_space() {
        return Err(Error::input(format!(
            "cannot add {n_add} sensors to {} on {} grid points",
            init.len(),
            data.n_space()
        )));
    }
    Ok(())
}

fn flatten(p: &[[f64; 2]]) -> Vec<f64> {
    p.iter().flatten().copied().collect()
}

fn unflatten(x: &[f64]) -> Vec<[f64; 2]> {
    x.chunks(2).map(|c| [c[0], c[1]]).collect()
}

/// Appends the snapped new points to `init`, which is marked fixed.
fn finish(data: &GridDataset, init: &SensorDesign, new_raw: &[[f64; 2]], strategy: &str, seed: u64) -> Result<SensorDesign> {
    let grid = &data.spatial_locations;
    let taken = init.grid_indices(grid)?;
    let idx = snap_to_grid(new_raw, grid, &taken, |i| -(i as f64))?;
    let mut locations = init.locations.clone();
    locations.extend(idx.iter().map(|&j| grid[j]));
    let mut fixed = vec![true; init.len()];
    fixed.extend(vec![false; idx.len()]);
    Ok(SensorDesign { strategy: strategy.into(), seed, locations, fixed })
}

/// Iterates of the MES ascent in the dataset's coordinates.
#[derive(Debug, Clone)]
pub struct MesTrace {
    pub iterates: Vec<Vec<[f64; 2]>>,
    pub objective: f64,
}

/// Maximum-entropy design: maximizes `log det(K_s(D) + (σ²/κ_t(0)) I)` over
/// `n_add` new points by projected Adam onto the hull. The temporal factor of
/// the Kronecker log-determinant does not depend on the design and is dropped.
pub fn mes_design(
    data: &GridDataset,
    fit: &FitResult,
    n_add: usize,
    init: &SensorDesign,
    hull: &DomainHull,
    cfg: &OptimizerConfig,
) -> Result<SensorDesign> {
    Ok(mes_design_traced(data, fit, n_add, init, hull, cfg)?.0)
}

pub fn mes_design_traced(
    data: &GridDataset,
    fit: &FitResult,
    n_add: usize,
    init: &SensorDesign,
    hull: &DomainHull,
    cfg: &OptimizerConfig,
) -> Result<(SensorDesign, MesTrace)> {
    data.validate()?;
    cfg.validate()?;
    check_init(data, init, n_add)?;
    let norm = fit.normalizer;
    if hull.vertices.len() < 3 {
        return Err(Error::DegenerateGeometry("hull needs at least 3 vertices".into()));
    }
    let nhull = DomainHull { vertices: hull.vertices.iter().map(|p| norm.forward(*p)).collect() };
    let ks = fit.kernel.spatial().ok_or_else(|| Error::input("MES needs a Separable kernel"))?;
    let kappa0 = to_state_space(fit.kernel.temporal().unwrap(), 0.0)?.sde.variance();
    let nugget = fit.sigma2 / kappa0;
    let fixed: Vec<[f64; 2]> = init.locations.iter().map(|p| norm.forward(*p)).collect();
    let grid: Vec<[f64; 2]> = data.spatial_locations.iter().map(|p| norm.forward(*p)).collect();
    let nf = fixed.len();

    let objective = |x: &[f64]| -> Result<Eval> {
        let mut z = fixed.clone();
        z.extend(unflatten(x));
        let mut k = kernel_matrix_sym(ks, &z);
        for i in 0..z.len() {
            k[(i, i)] += nugget;
        }
        let f = Factor::new(&k, "MES covariance")?;
        let kinv = f.inverse();
        let mut grad = vec![0.0; x.len()];
        for j in nf..z.len() {
            for l in 0..z.len() {
                if l != j {
                    let g = ks.eval_grad(&z[j], &z[l]);
                    grad[2 * (j - nf)] += 2.0 * kinv[(j, l)] * g.d_input[0];
                    grad[2 * (j - nf) + 1] += 2.0 * kinv[(j, l)] * g.d_input[1];
                }
            }
        }
        let value = f.logdet();
        Ok(Eval { value, grad, tracked: value })
    };
    let project = |x: &mut [f64]| {
        for c in x.chunks_mut(2) {
            let p = hull_project(&nhull, [c[0], c[1]]);
            c[0] = p[0];
            c[1] = p[1];
        }
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iterates = Vec::new();
    for r in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64);
        let x0 = flatten(&kmeans(&grid, n_add, &fixed, seed, cfg.kmeans_iters)?);
        let out = adam_ascent(x0, cfg, true, true, objective, project)?;
        iterates.extend(out.iterates.iter().map(|x| unflatten(x).iter().map(|p| norm.inverse(*p)).collect()));
        if best.as_ref().is_none_or(|b| out.value > b.0) {
            best = Some((out.value, out.x));
        }
    }
    let (value, x) = best.expect("at least one restart");
    let new_raw: Vec<[f64; 2]> = unflatten(&x).iter().map(|p| norm.inverse(*p)).collect();
    let design = finish(data, init, &new_raw, "mes", cfg.seed)?;
    Ok((design, MesTrace { iterates, objective: value }))
}

/// `Σ_t Σ_x Var[f(x, t)]` over `prediction_grid` when every sensor of
/// `design` observes at each time in `times`. Observed values do not enter.
pub fn imse_objective(
    fit: &FitResult,
    times: &[f64],
    design: &[[f64; 2]],
    prediction_grid: &[[f64; 2]],
) -> Result<f64> {
    let norm = fit.normalizer;
    let z: Vec<[f64; 2]> = design.iter().map(|p| norm.forward(*p)).collect();
    let px: Vec<[f64; 2]> = prediction_grid.iter().map(|p| norm.forward(*p)).collect();
    imse_normalized(fit, times, &z, &px)
}

fn imse_normalized(fit: &FitResult, times: &[f64], z: &[[f64; 2]], px: &[[f64; 2]]) -> Result<f64> {
    let model = StGpModel::new(fit.kernel.clone(), InducingSet::free(z.to_vec()), times.to_vec(), fit.sigma2, z.to_vec())?;
    let zeros = DMatrix::zeros(times.len(), z.len());
    let mask = DMatrix::from_element(times.len(), z.len(), true);
    let post = crate::stsvgp::fit_moments(&model, &zeros, &mask)?;
    Ok(st_predict(&model, &post, px)?.var.sum())
}

/// IMSE design: minimizes [`imse_objective`] over `n_add` new points by Adam
/// with central-difference gradients, then snaps to the grid.
pub fn imse_design(
    data: &GridDataset,
    fit: &FitResult,
    n_add: usize,
    init: &SensorDesign,
    prediction_grid: Option<&[[f64; 2]]>,
    cfg: &OptimizerConfig,
) -> Result<SensorDesign> {
    data.validate()?;
    cfg.validate()?;
    check_init(data, init, n_add)?;
    let norm = fit.normalizer;
    let grid: Vec<[f64; 2]> = data.spatial_locations.iter().map(|p| norm.forward(*p)).collect();
    let px: Vec<[f64; 2]> = match prediction_grid {
        Some(p) => p.iter().map(|q| norm.forward(*q)).collect(),
        None => grid.clone(),
    };
    let fixed: Vec<[f64; 2]> = init.locations.iter().map(|p| norm.forward(*p)).collect();
    let scale = (data.n_time() * px.len()) as f64;
    let (lo, hi) = crate::datasets::bounding_box(&grid);
    let value = |x: &[f64]| -> Result<f64> {
        let mut z = fixed.clone();
        z.extend(unflatten(x));
        Ok(-imse_normalized(fit, &data.times, &z, &px)? / scale)
    };
    let h = cfg.fd_step;
    let objective = |x: &[f64]| -> Result<Eval> {
        let v = value(x)?;
        let mut grad = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + h;
            let up = value(&xp)?;
            xp[i] = x[i] - h;
            let down = value(&xp)?;
            xp[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        Ok(Eval { value: v, grad, tracked: v })
    };
    let project = |x: &mut [f64]| {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(lo[i % 2], hi[i % 2]);
        }
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for r in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64);
        let x0 = flatten(&kmeans(&grid, n_add, &fixed, seed, cfg.kmeans_iters)?);
        let out = adam_ascent(x0, cfg, true, false, objective, project)?;
        if best.as_ref().is_none_or(|b| out.value > b.0) {
            best = Some((out.value, out.x));
        }
    }
    let x = best.expect("at least one restart").1;
    let new_raw: Vec<[f64; 2]> = unflatten(&x).iter().map(|p| norm.inverse(*p)).collect();
    finish(data, init, &new_raw, "imse", cfg.seed)
}
