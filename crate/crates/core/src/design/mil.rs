use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::{adam_ascent, Eval};
use super::{normalized, FitResult, OptimizerConfig, SensorDesign};
use crate::datasets::{bounding_box, GridDataset, Normalizer};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::sparse_vgp::InducingSet;
use crate::stsvgp::{st_elbo, st_elbo_grad, StGpModel};

/// Log-parameters are kept inside `[-LOG_BOUND, LOG_BOUND]`.
const LOG_BOUND: f64 = 14.0;
/// Weight of the quadratic separation penalty on the per-observation objective.
const SEPARATION_WEIGHT: f64 = 1.0;

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(points: &[[f64; 2]], p: [f64; 2]) -> usize {
    let mut best = 0;
    for (i, q) in points.iter().enumerate() {
        if dist2(*q, p) < dist2(points[best], p) {
            best = i;
        }
    }
    best
}

/// Lloyd's k-means over `points` with `k` free centroids seeded at distinct
/// random points, alongside `fixed` centroids that never move. Returns the
/// free centroids.
pub fn kmeans(points: &[[f64; 2]], k: usize, fixed: &[[f64; 2]], seed: u64, max_iters: usize) -> Result<Vec<[f64; 2]>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    if k > points.len() {
        return Err(Error::input(format!("k-means with {k} centroids over {} points", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cent: Vec<[f64; 2]> = fixed.to_vec();
    cent.extend(sample(&mut rng, points.len(), k).iter().map(|i| points[i]));
    let nf = fixed.len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (a, p) in assign.iter_mut().zip(points) {
            let c = nearest(&cent, *p);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sum = vec![[0.0; 2]; cent.len()];
        let mut cnt = vec![0usize; cent.len()];
        for (a, p) in assign.iter().zip(points) {
            sum[*a][0] += p[0];
            sum[*a][1] += p[1];
            cnt[*a] += 1;
        }
        for c in nf..cent.len() {
            if cnt[c] > 0 {
                cent[c] = [sum[c][0] / cnt[c] as f64, sum[c][1] / cnt[c] as f64];
            }
        }
    }
    Ok(cent.split_off(nf))
}

/// Maps free points to distinct grid indices not used by `taken`.
///
/// Each point goes to its nearest grid point. When several compete for the
/// same grid point (or it is taken), the one with the highest `contribution`
/// keeps it and the others move to their nearest unused grid point.
pub fn snap_to_grid(
    points: &[[f64; 2]],
    grid: &[[f64; 2]],
    taken: &[usize],
    contribution: impl Fn(usize) -> f64,
) -> Result<Vec<usize>> {
    if points.len() + taken.len() > grid.len() {
        return Err(Error::input("more sensors than grid points"));
    }
    let mut used = vec![false; grid.len()];
    taken.iter().for_each(|&i| used[i] = true);
    let target: Vec<usize> = points.iter().map(|p| nearest(grid, *p)).collect();
    let contested = (0..points.len()).any(|i| used[target[i]] || (0..i).any(|j| target[j] == target[i]));
    let scores: Vec<f64> = if contested { (0..points.len()).map(&contribution).collect() } else { vec![0.0; points.len()] };
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![usize::MAX; points.len()];
    let mut movers = Vec::new();
    for &i in &order {
        if used[target[i]] {
            movers.push(i);
        } else {
            used[target[i]] = true;
            out[i] = target[i];
        }
    }
    for i in movers {
        let p = points[i];
        let j = (0..grid.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| dist2(grid[a], p).total_cmp(&dist2(grid[b], p)).then(a.cmp(&b)))
            .expect("enough grid points");
        used[j] = true;
        out[i] = j;
    }
    Ok(out)
}

/// The optimization problem in normalized coordinates.
struct Problem<'a> {
    data: &'a GridDataset,
    kernel: &'a KernelSpec,
    fixed: Vec<[f64; 2]>,
    n_free: usize,
    learn_hyper: bool,
    sigma2: f64,
    lo: [f64; 2],
    hi: [f64; 2],
    min_sep: f64,
    cfg: &'a OptimizerConfig,
    n_obs: f64,
}

struct Decoded {
    free: Vec<[f64; 2]>,
    kernel: KernelSpec,
    sigma2: f64,
}

impl Problem<'_> {
    fn encode(&self, free: &[[f64; 2]]) -> Vec<f64> {
        let mut x: Vec<f64> = free.iter().flatten().copied().collect();
        if self.learn_hyper {
            x.push(self.sigma2.ln());
            x.extend(self.kernel.log_params());
        }
        x
    }

    fn decode(&self, x: &[f64]) -> Result<Decoded> {
        let nc = 2 * self.n_free;
        let free = x[..nc].chunks(2).map(|c| [c[0], c[1]]).collect();
        if self.learn_hyper {
            Ok(Decoded { free, sigma2: x[nc].exp(), kernel: self.kernel.with_log_params(&x[nc + 1..])? })
        } else {
            Ok(Decoded { free, sigma2: self.sigma2, kernel: self.kernel.clone() })
        }
    }

    fn model(&self, d: &Decoded) -> Result<StGpModel> {
        let mut z = self.fixed.clone();
        z.extend(&d.free);
        let mut inducing = InducingSet::free(z);
        inducing.fixed[..self.fixed.len()].iter_mut().for_each(|f| *f = true);
        StGpModel::new(d.kernel.clone(), inducing, self.data.times.clone(), d.sigma2, self.data.spatial_locations.clone())
    }

    fn project(&self, x: &mut [f64]) {
        let nc = 2 * self.n_free;
        for (i, v) in x[..nc].iter_mut().enumerate() {
            *v = v.clamp(self.lo[i % 2], self.hi[i % 2]);
        }
        x[nc..].iter_mut().for_each(|v| *v = v.clamp(-LOG_BOUND, LOG_BOUND));
    }

    fn eval(&self, x: &[f64]) -> Result<Eval> {
        let d = self.decode(x)?;
        let model = self.model(&d)?;
        let g = st_elbo_grad(&model, self.data, self.cfg.gradient.into())?;
        let nf = self.fixed.len();
        let mut grad: Vec<f64> = g.d_locations[nf..].iter().flatten().map(|v| v / self.n_obs).collect();
        if self.learn_hyper {
            grad.push(g.d_log_sigma2 / self.n_obs);
            grad.extend(g.d_log_params.iter().map(|v| v / self.n_obs));
        }
        // Quadratic penalty on free points closer than the minimum separation.
        let z = &model.inducing.locations;
        let mut penalty = 0.0;
        if self.min_sep > 0.0 {
            for i in nf..z.len() {
                for j in 0..i {
                    let d = dist2(z[i], z[j]).sqrt();
                    if d < self.min_sep {
                        let gap = self.min_sep - d;
                        penalty += SEPARATION_WEIGHT * gap * gap;
                        if d > 0.0 {
                            for k in 0..2 {
                                let u = (z[i][k] - z[j][k]) / d;
                                grad[2 * (i - nf) + k] += 2.0 * SEPARATION_WEIGHT * gap * u;
                                if j >= nf {
                                    grad[2 * (j - nf) + k] -= 2.0 * SEPARATION_WEIGHT * gap * u;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Eval { value: g.elbo / self.n_obs - penalty, grad, tracked: g.elbo })
    }
}

struct Restart {
    x: Vec<f64>,
    elbo: f64,
    trace: Vec<f64>,
    iterations: usize,
}

fn data_variance(data: &GridDataset) -> f64 {
    let vals: Vec<f64> = data.values.iter().zip(data.mask.iter()).filter(|(_, m)| **m).map(|(v, _)| *v).collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-12)
}

/// Jointly maximizes the spatiotemporal bound over the free sensor locations
/// and (optionally) the hyperparameters, then snaps to the grid.
///
/// `n_sensors` counts every sensor, including those in `fixed`. The kernel's
/// spatial lengthscales refer to coordinates normalized to the unit square.
pub fn mil_design(
    data: &GridDataset,
    kernel: &KernelSpec,
    n_sensors: usize,
    fixed: Option<&SensorDesign>,
    cfg: &OptimizerConfig,
) -> Result<(SensorDesign, FitResult)> {
    data.validate()?;
    cfg.validate()?;
    let grid = &data.spatial_locations;
    if n_sensors == 0 {
        return Err(Error::input("n_sensors must be >= 1"));
    }
    if n_sensors > grid.len() {
        return Err(Error::input(format!("n_sensors = {n_sensors} exceeds the {} grid points", grid.len())));
    }
    let fixed_raw: Vec<[f64; 2]> = fixed.map(|d| d.locations.clone()).unwrap_or_default();
    let fixed_idx = match fixed {
        Some(d) => {
            d.validate()?;
            d.grid_indices(grid)?
        }
        None => Vec::new(),
    };
    if fixed_raw.len() > n_sensors {
        return Err(Error::input("more fixed sensors than n_sensors"));
    }
    let n_free = n_sensors - fixed_raw.len();

    let norm = Normalizer::fit(grid);
    let offset = data.observed_mean()?;
    let nd = normalized(data, &norm, offset);
    let sigma2 = cfg.initial_noise_var.unwrap_or(0.1 * data_variance(&nd));
    let (lo, hi) = bounding_box(&nd.spatial_locations);
    let problem = Problem {
        data: &nd,
        kernel,
        fixed: fixed_raw.iter().map(|p| norm.forward(*p)).collect(),
        n_free,
        learn_hyper: cfg.learn_hyperparameters,
        sigma2,
        lo,
        hi,
        min_sep: cfg.min_separation,
        cfg,
        n_obs: nd.n_observed().max(1) as f64,
    };
    StGpModel::new(kernel.clone(), InducingSet::free(nd.spatial_locations[..1].to_vec()), nd.times.clone(), sigma2, nd.spatial_locations.clone())?;

    let runs: Vec<Result<Restart>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(r as u64);
            let init = kmeans(&nd.spatial_locations, n_free, &problem.fixed, seed, cfg.kmeans_iters)?;
            let x0 = problem.encode(&init);
            let out = adam_ascent(x0, cfg, true, false, |x| problem.eval(x), |x| problem.project(x))?;
            Ok(Restart { x: out.x, elbo: out.tracked, trace: out.trace, iterations: out.iterations })
        })
        .collect();
    let restart_elbos: Vec<Option<f64>> = runs.iter().map(|r| r.as_ref().ok().map(|r| r.elbo)).collect();
    let best = (0..runs.len())
        .filter(|&i| restart_elbos[i].is_some())
        .fold(None, |b: Option<usize>, i| match b {
            Some(b) if restart_elbos[b] >= restart_elbos[i] => Some(b),
            _ => Some(i),
        });
    let Some(best) = best else {
        let msgs: Vec<String> = runs.iter().enumerate().map(|(i, r)| format!("restart {i}: {}", r.as_ref().err().unwrap())).collect();
        return Err(Error::Optimization(format!("all restarts failed: {}", msgs.join("; "))));
    };
    let run = runs.into_iter().nth(best).unwrap().unwrap();
    let dec = problem.decode(&run.x)?;

    // Snap free points; contested grid points go to the larger leave-one-out contribution.
    let full_model = problem.model(&dec)?;
    let nf = problem.fixed.len();
    let contribution = |i: usize| -> f64 {
        let mut m = full_model.clone();
        m.inducing.locations.remove(nf + i);
        m.inducing.fixed.remove(nf + i);
        match st_elbo(&m, &nd) {
            Ok(e) => run.elbo - e,
            Err(_) => f64::INFINITY,
        }
    };
    let snapped = snap_to_grid(&dec.free, &nd.spatial_locations, &fixed_idx, contribution)?;

    let mut locations = fixed_raw.clone();
    locations.extend(snapped.iter().map(|&j| grid[j]));
    let mut flags = vec![true; fixed_raw.len()];
    flags.extend(vec![false; n_free]);
    let design = SensorDesign { strategy: "mil".into(), seed: cfg.seed, locations, fixed: flags };

    let mut fit = FitResult {
        kernel: dec.kernel,
        sigma2: dec.sigma2,
        offset,
        normalizer: norm,
        elbo: 0.0,
        pre_snap_elbo: run.elbo,
        elbo_trace: run.trace,
        restart_elbos,
        best_restart: best,
        iterations: run.iterations,
    };
    if cfg.refit_after_snap && cfg.learn_hyperparameters {
        let refit = fit_with_fixed_design(data, &fit.kernel, &design, &OptimizerConfig { initial_noise_var: Some(fit.sigma2), ..cfg.clone() })?;
        fit.kernel = refit.kernel;
        fit.sigma2 = refit.sigma2;
    }
    fit.elbo = st_elbo(&fit.model_for(data, &design.locations)?, &nd)?;
    Ok((design, fit))
}

/// Fits hyperparameters with every sensor of `design` held fixed.
pub fn fit_with_fixed_design(
    data: &GridDataset,
    kernel: &KernelSpec,
    design: &SensorDesign,
    cfg: &OptimizerConfig,
) -> Result<FitResult> {
    let all_fixed = SensorDesign { fixed: vec![true; design.len()], ..design.clone() };
    let cfg = OptimizerConfig { restarts: 1, ..cfg.clone() };
    Ok(mil_design(data, kernel, design.len(), Some(&all_fixed), &cfg)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize) -> Vec<[f64; 2]> {
        (0..n * n).map(|k| [(k % n) as f64 / (n - 1) as f64, (k / n) as f64 / (n - 1) as f64]).collect()
    }

    #[test]
    fn kmeans_with_all_points_recovers_them() {
        let g = lattice(3);
        let mut c = kmeans(&g, 9, &[], 4, 50).unwrap();
        c.sort_by(|a, b| a[1].total_cmp(&b[1]).then(a[0].total_cmp(&b[0])));
        assert_eq!(c, g);
    }

    #[test]
    fn kmeans_is_seeded() {
        let g = lattice(6);
        assert_eq!(kmeans(&g, 4, &[[0.5, 0.5]], 1, 50).unwrap(), kmeans(&g, 4, &[[0.5, 0.5]], 1, 50).unwrap());
    }

    #[test]
    fn snapping_resolves_collisions_by_contribution() {
        let g = lattice(3);
        let pts = [[0.01, 0.0], [0.02, 0.01], [0.9, 0.9]];
        let idx = snap_to_grid(&pts, &g, &[], |i| [1.0, 5.0, 0.0][i]).unwrap();
        assert_eq!(idx[1], 0);
        assert_eq!(idx[2], 8);
        assert!(idx[0] == 1 || idx[0] == 3);
        let idx = snap_to_grid(&[[0.0, 0.0]], &g, &[0], |_| 0.0).unwrap();
        assert_ne!(idx[0], 0);
    }
}
