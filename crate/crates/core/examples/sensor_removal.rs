//! Which sensors of an existing network can be switched off at the least loss?
//!
//! cargo run --release --example sensor_removal

use milsense::cli::default_kernel;
use milsense::datasets::{synth_field, FieldKind, GridConfig};
use milsense::design::{fit_with_fixed_design, sensor_removal, uniform_design, OptimizerConfig, REMOVAL_CAP};

fn main() -> milsense::Result<()> {
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(64, 96) };
    let data = synth_field(FieldKind::TwoRegime, &grid, &default_kernel(), 5)?;
    let network = uniform_design(&data.spatial_locations, 10, 2)?;
    let fit = fit_with_fixed_design(&data, &default_kernel(), &network, &OptimizerConfig::default())?;
    println!("full network bound: {:.2}", fit.elbo);

    for r in 1..=3 {
        let (kept, mut scores) = sensor_removal(&data, &fit, &network, r, REMOVAL_CAP)?;
        scores.sort_by(|a, b| b.elbo.total_cmp(&a.elbo));
        println!("remove {r}: {} subsets, best drops {:?} (bound {:.2}), worst drops {:?} (bound {:.2}), {} left",
            scores.len(), scores[0].removed, scores[0].elbo, scores.last().unwrap().removed, scores.last().unwrap().elbo, kept.len());
    }
    Ok(())
}
