use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mil::snap_to_grid;
use super::SensorDesign;
use crate::datasets::bounding_box;
use crate::error::{Error, Result};

fn check(grid: &[[f64; 2]], n: usize) -> Result<()> {
    if n == 0 || n > grid.len() {
        return Err(Error::input(format!("cannot place {n} sensors on {} grid points", grid.len())));
    }
    Ok(())
}

/// `n` distinct grid points drawn uniformly without replacement.
pub fn uniform_design(grid: &[[f64; 2]], n: usize, seed: u64) -> Result<SensorDesign> {
    check(grid, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locations = sample(&mut rng, grid.len(), n).iter().map(|i| grid[i]).collect();
    Ok(SensorDesign::new("uniform", seed, locations))
}

/// Standard Latin hypercube of `n` points in the box `[lo, hi]`: one point in
/// each of the `n` strata along every axis.
pub fn latin_hypercube(n: usize, lo: [f64; 2], hi: [f64; 2], seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms: Vec<Vec<usize>> = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        perms.push(p);
    }
    (0..n)
        .map(|i| {
            let mut p = [0.0; 2];
            for k in 0..2 {
                let u: f64 = rng.random();
                p[k] = lo[k] + (perms[k][i] as f64 + u) / n as f64 * (hi[k] - lo[k]);
            }
            p
        })
        .collect()
}

/// Latin hypercube over the grid's bounding box, snapped to the nearest grid
/// points; a point whose grid point is already used moves to the nearest unused one.
pub fn lhs_design(grid: &[[f64; 2]], n: usize, seed: u64) -> Result<SensorDesign> {
    check(grid, n)?;
    let (lo, hi) = bounding_box(grid);
    let pts = latin_hypercube(n, lo, hi, seed);
    // Earlier samples win contested grid points.
    let idx = snap_to_grid(&pts, grid, &[], |i| -(i as f64))?;
    Ok(SensorDesign::new("lhs", seed, idx.iter().map(|&j| grid[j]).collect()))
}
