//! Maximum-entropy, IMSE and space-filling designs next to each other.
//!
//! cargo run --release --example classical_designs

use milsense::cli::default_kernel;
use milsense::datasets::{convex_hull, synth_field, FieldKind, GridConfig};
use milsense::design::{
    fit_with_fixed_design, imse_design, imse_objective, lhs_design, mes_design, uniform_design, utility, OptimizerConfig,
    SensorDesign, UtilityContext, UtilityKind,
};

fn main() -> milsense::Result<()> {
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(64, 96) };
    let data = synth_field(FieldKind::SeparableGp, &grid, &default_kernel(), 3)?;
    let cfg = OptimizerConfig { max_iters: 200, ..Default::default() };

    // Hyperparameters from a pilot uniform design.
    let pilot = uniform_design(&data.spatial_locations, 8, 0)?;
    let fit = fit_with_fixed_design(&data, &default_kernel(), &pilot, &cfg)?;
    let start = SensorDesign::new("start", 0, vec![data.spatial_locations[0]]);
    let hull = convex_hull(&data.spatial_locations)?;

    let designs = [
        mes_design(&data, &fit, 7, &start, &hull, &cfg)?,
        imse_design(&data, &fit, 7, &start, None, &cfg)?,
        uniform_design(&data.spatial_locations, 8, 1)?,
        lhs_design(&data.spatial_locations, 8, 1)?,
    ];
    let ctx = UtilityContext { kernel: fit.kernel.spatial().unwrap().clone(), sigma2: fit.sigma2, grid: data.spatial_locations.clone(), test: None };
    println!("{:8} {:>10} {:>10} {:>10}", "strategy", "imse", "logdet K", "D-opt");
    for d in &designs {
        println!(
            "{:8} {:>10.2} {:>10.2} {:>10.2}",
            d.strategy,
            imse_objective(&fit, &data.times, &d.locations, &data.spatial_locations)?,
            utility(UtilityKind::Mes, &ctx, d)?,
            utility(UtilityKind::DOpt, &ctx, d)?,
        );
    }
    Ok(())
}
