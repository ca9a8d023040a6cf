//! MIL placement on the two-regime field, with one sensor fixed at an existing site.
//!
//! cargo run --release --example mil_design

use milsense::cli::default_kernel;
use milsense::datasets::{synth_field, FieldKind, GridConfig};
use milsense::design::{mil_design, OptimizerConfig, SensorDesign};

fn main() -> milsense::Result<()> {
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(100, 168) };
    let data = synth_field(FieldKind::TwoRegime, &grid, &default_kernel(), 7)?;
    let site = SensorDesign { strategy: "site".into(), seed: 0, locations: vec![data.spatial_locations[55]], fixed: vec![true] };

    let (design, fit) = mil_design(&data, &default_kernel(), 9, Some(&site), &OptimizerConfig::default())?;
    println!("bound {:.2} (before snapping {:.2}), restart {} of {:?}", fit.elbo, fit.pre_snap_elbo, fit.best_restart, fit.restart_elbos);
    println!("noise variance {:.4}, kernel {:?}", fit.sigma2, fit.kernel);
    for (p, fixed) in design.locations.iter().zip(&design.fixed) {
        println!("  ({:.3}, {:.3}){}", p[0], p[1], if *fixed { "  fixed" } else { "" });
    }
    // The short-lengthscale half (x1 < 0.5) tends to get more sensors.
    let left = design.locations.iter().filter(|p| p[0] < 0.5).count();
    println!("{left} of {} sensors in the rough half", design.len());
    Ok(())
}
