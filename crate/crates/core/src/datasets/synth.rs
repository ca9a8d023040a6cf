use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{GridDataset, Metadata, Normalizer, Units};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::markov_gp::sample_prior;
use crate::sparse_vgp::InducingSet;
use crate::stsvgp::{build_inducing_chain, StGpModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// One draw from the separable GP given by the kernel.
    SeparableGp,
    /// Two draws whose spatial lengthscales differ by a factor of 5, blended
    /// across `x1 = 0.5` over a band of width 0.1.
    TwoRegime,
}

/// Lattice on the unit square and time axis for synthetic fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Number of spatial locations; the lattice has `ceil(sqrt(n))` columns
    /// filled row by row.
    pub n_space: usize,
    pub n_time: usize,
    #[serde(default = "one")]
    pub dt: f64,
    /// Standard deviation of the additive observation noise.
    #[serde(default)]
    pub noise_std: f64,
    /// Multiplies the sampled signal; zero leaves noise only.
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl GridConfig {
    pub fn new(n_space: usize, n_time: usize) -> Self {
        GridConfig { n_space, n_time, dt: 1.0, noise_std: 0.0, amplitude: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_space == 0 || self.n_time == 0 {
            return Err(Error::input("grid needs at least one location and one time"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::input("dt must be finite and > 0"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::input("noise_std and amplitude must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn locations(&self) -> Vec<[f64; 2]> {
        let nx = (self.n_space as f64).sqrt().ceil() as usize;
        let ny = self.n_space.div_ceil(nx);
        let coord = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        (0..self.n_space).map(|k| [coord(k % nx, nx), coord(k / nx, ny)]).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_time).map(|k| k as f64 * self.dt).collect()
    }
}

/// Exact draw of a zero-mean separable GP on `grid × times` through the
/// inducing chain with the full grid as inducing set.
fn sample_separable(kernel: &KernelSpec, grid: &[[f64; 2]], times: &[f64], seed: u64) -> Result<DMatrix<f64>> {
    let model = StGpModel::new(kernel.clone(), InducingSet::free(grid.to_vec()), times.to_vec(), 1.0, grid.to_vec())?;
    let chain = build_inducing_chain(&model)?;
    Ok(sample_prior(&chain, times.len(), seed)?.signal)
}

fn add_noise(values: &mut DMatrix<f64>, std: f64, rng: &mut ChaCha8Rng) {
    if std > 0.0 {
        for v in values.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v += std * e;
        }
    }
}

/// Synthetic field on the unit square. The kernel must be Separable; for
/// `TwoRegime` its spatial lengthscales are those of the short half.
pub fn synth_field(kind: FieldKind, cfg: &GridConfig, kernel: &KernelSpec, seed: u64) -> Result<GridDataset> {
    cfg.validate()?;
    kernel.validate()?;
    let (spatial, temporal) = match (kernel.spatial(), kernel.temporal()) {
        (Some(s), Some(t)) => (s, t),
        _ => return Err(Error::UnsupportedKernel("synthetic fields need a Separable kernel".into())),
    };
    let grid = cfg.locations();
    let times = cfg.times();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = match kind {
        FieldKind::SeparableGp => sample_separable(kernel, &grid, &times, rng.random())?,
        FieldKind::TwoRegime => {
            let short = sample_separable(kernel, &grid, &times, rng.random())?;
            let long_kernel = KernelSpec::separable(spatial.scale_lengthscales(5.0), temporal.clone());
            let long = sample_separable(&long_kernel, &grid, &times, rng.random())?;
            // Weight of the long-lengthscale field rises linearly across the band.
            let w: Vec<f64> = grid.iter().map(|p| ((p[0] - 0.45) / 0.1).clamp(0.0, 1.0)).collect();
            DMatrix::from_fn(times.len(), grid.len(), |t, j| {
                (1.0 - w[j]).sqrt() * short[(t, j)] + w[j].sqrt() * long[(t, j)]
            })
        }
    };
    values *= cfg.amplitude;
    add_noise(&mut values, cfg.noise_std, &mut rng);
    let metadata = Metadata {
        name: match kind {
            FieldKind::SeparableGp => "separable_gp".into(),
            FieldKind::TwoRegime => "two_regime".into(),
        },
        units: Units::default(),
        seed: Some(seed),
        generator: serde_json::json!({ "kind": kind, "grid": cfg, "kernel": kernel }),
    };
    GridDataset::new(grid, times, values, metadata)
}

/// Adds one draw of a separable Matérn-3/2 × Matérn-3/2 field with variance
/// `var`, spatial lengthscale `ell_s` on the unit-square-normalized
/// coordinates, and temporal lengthscale `ell_t` in time units.
pub fn inject_sim_error(ds: &GridDataset, ell_s: f64, ell_t: f64, var: f64, seed: u64) -> Result<GridDataset> {
    if !(var >= 0.0 && var.is_finite()) {
        return Err(Error::input("injected variance must be finite and >= 0"));
    }
    if var == 0.0 {
        return Ok(ds.clone());
    }
    ds.validate()?;
    let norm = Normalizer::fit(&ds.spatial_locations);
    let grid: Vec<[f64; 2]> = ds.spatial_locations.iter().map(|p| norm.forward(*p)).collect();
    let kernel = KernelSpec::separable(
        KernelSpec::matern32(var, &[ell_s, ell_s]),
        KernelSpec::matern32(1.0, &[ell_t]),
    );
    kernel.validate()?;
    let err = sample_separable(&kernel, &grid, &ds.times, seed)?;
    let mut out = ds.clone();
    out.values += err;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_layout() {
        let g = GridConfig::new(10, 3).locations();
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], [0.0, 0.0]);
        assert_eq!(g[3], [1.0, 0.0]);
        assert_eq!(g[4], [0.0, 0.5]);
    }

    #[test]
    fn zero_amplitude_is_noise_only() {
        let k = KernelSpec::separable(KernelSpec::matern32(1.0, &[0.3, 0.3]), KernelSpec::matern12(1.0, &[5.0]));
        let mut cfg = GridConfig::new(4, 3);
        cfg.amplitude = 0.0;
        let d = synth_field(FieldKind::SeparableGp, &cfg, &k, 1).unwrap();
        assert!(d.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn non_separable_kernel_is_rejected() {
        let k = KernelSpec::matern32(1.0, &[0.3, 0.3, 1.0]);
        let e = synth_field(FieldKind::SeparableGp, &GridConfig::new(4, 3), &k, 1).unwrap_err();
        assert!(matches!(e, Error::UnsupportedKernel(_)));
    }
}
