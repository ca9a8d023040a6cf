//! Gridded spatiotemporal datasets: storage format, synthetic generators,
//! simulator-error injection, and domain geometry.

mod geometry;
mod io;
mod synth;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov_gp::Observations;

pub use geometry::{convex_hull, hull_project, point_in_hull, DomainHull};
pub use io::{load_grid, save_grid, MANIFEST_FILE, VALUES_FILE};
pub use synth::{inject_sim_error, synth_field, FieldKind, GridConfig};

/// Descriptive metadata stored in the manifest next to the values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub name: String,
    #[serde(default)]
    pub units: Units,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Free-form description of how the data was produced.
    #[serde(default)]
    pub generator: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Units {
    pub value: String,
    pub time: String,
    pub space: String,
}

impl Default for Units {
    fn default() -> Self {
        Units { value: "unit".into(), time: "step".into(), space: "unit".into() }
    }
}

impl Metadata {
    pub fn named(name: &str) -> Self {
        Metadata {
            name: name.into(),
            units: Units::default(),
            seed: None,
            generator: serde_json::Value::Null,
        }
    }
}

/// Values on a fixed set of spatial locations at uniformly spaced times.
///
/// `values` and `mask` are `N_t × N_s` (time-major rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GridDataset {
    pub spatial_locations: Vec<[f64; 2]>,
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    pub metadata: Metadata,
}

/// Checks that `times` is strictly increasing and uniformly spaced; returns the
/// spacing (zero for a single instant).
pub fn uniform_spacing(times: &[f64]) -> Result<f64> {
    if times.is_empty() {
        return Err(Error::input("time grid is empty"));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::input("time grid has non-finite entries"));
    }
    if times.len() == 1 {
        return Ok(0.0);
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    if dt <= 0.0 {
        return Err(Error::input("times must be strictly increasing"));
    }
    for (k, w) in times.windows(2).enumerate() {
        let step = w[1] - w[0];
        if (step - dt).abs() > 1e-9 * dt {
            return Err(Error::input(format!(
                "times are not uniformly spaced at index {}: step {step} vs {dt}",
                k + 1
            )));
        }
    }
    Ok(dt)
}

impl GridDataset {
    /// Builds a dataset with every value observed.
    pub fn new(
        spatial_locations: Vec<[f64; 2]>,
        times: Vec<f64>,
        values: DMatrix<f64>,
        metadata: Metadata,
    ) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        let ds = GridDataset { spatial_locations, times, values, mask, metadata };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n_space(&self) -> usize {
        self.spatial_locations.len()
    }

    pub fn n_time(&self) -> usize {
        self.times.len()
    }

    /// Time step of the grid (zero for a single instant).
    pub fn dt(&self) -> Result<f64> {
        uniform_spacing(&self.times)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spatial_locations.is_empty() {
            return Err(Error::input("dataset has no spatial locations"));
        }
        if self.spatial_locations.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("spatial locations must be finite"));
        }
        uniform_spacing(&self.times)?;
        let shape = (self.n_time(), self.n_space());
        if self.values.shape() != shape || self.mask.shape() != shape {
            return Err(Error::input(format!(
                "values/mask must be {} x {} (times x locations)",
                shape.0, shape.1
            )));
        }
        if self.values.iter().zip(self.mask.iter()).any(|(v, m)| *m && !v.is_finite()) {
            return Err(Error::input("observed values must be finite"));
        }
        Ok(())
    }

    pub fn observations(&self) -> Observations {
        Observations { values: self.values.clone(), mask: self.mask.clone() }
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Mean of the observed values.
    pub fn observed_mean(&self) -> Result<f64> {
        let n = self.n_observed();
        if n == 0 {
            return Err(Error::input("dataset has no observed values"));
        }
        let s: f64 = self.values.iter().zip(self.mask.iter()).filter(|(_, m)| **m).map(|(v, _)| v).sum();
        Ok(s / n as f64)
    }

    /// Time steps `range.start..range.end` as a new dataset.
    pub fn time_slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.n_time() {
            return Err(Error::input(format!(
                "time range {}..{} is empty or exceeds {} steps",
                range.start,
                range.end,
                self.n_time()
            )));
        }
        let n = range.end - range.start;
        Ok(GridDataset {
            spatial_locations: self.spatial_locations.clone(),
            times: self.times[range.clone()].to_vec(),
            values: self.values.rows(range.start, n).into_owned(),
            mask: self.mask.rows(range.start, n).into_owned(),
            metadata: self.metadata.clone(),
        })
    }

    /// Keeps only the given location columns, in the given order.
    pub fn select_locations(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() || idx.iter().any(|&i| i >= self.n_space()) {
            return Err(Error::input("location indices empty or out of range"));
        }
        Ok(GridDataset {
            spatial_locations: idx.iter().map(|&i| self.spatial_locations[i]).collect(),
            times: self.times.clone(),
            values: self.values.select_columns(idx),
            mask: self.mask.select_columns(idx),
            metadata: self.metadata.clone(),
        })
    }

    /// Index of the grid location equal to `p` (within 1e-9), if any.
    pub fn location_index(&self, p: [f64; 2]) -> Option<usize> {
        find_location(&self.spatial_locations, p)
    }

    /// Axis-aligned bounding box `([min_x, min_y], [max_x, max_y])`.
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        bounding_box(&self.spatial_locations)
    }
}

pub(crate) fn find_location(grid: &[[f64; 2]], p: [f64; 2]) -> Option<usize> {
    grid.iter().position(|g| (g[0] - p[0]).abs() <= 1e-9 && (g[1] - p[1]).abs() <= 1e-9)
}

pub(crate) fn bounding_box(points: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// Affine map of the plane onto the unit square with a single isotropic scale
/// (the longer bounding-box side maps to length 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub origin: [f64; 2],
    pub scale: f64,
}

impl Normalizer {
    pub fn fit(points: &[[f64; 2]]) -> Self {
        let (lo, hi) = bounding_box(points);
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
        Normalizer { origin: lo, scale: if span > 0.0 { span } else { 1.0 } }
    }

    pub fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        [(p[0] - self.origin[0]) / self.scale, (p[1] - self.origin[1]) / self.scale]
    }

    pub fn inverse(&self, p: [f64; 2]) -> [f64; 2] {
        [p[0] * self.scale + self.origin[0], p[1] * self.scale + self.origin[1]]
    }
}
