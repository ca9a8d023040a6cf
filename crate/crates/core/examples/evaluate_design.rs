//! Scoring a design on a held-out window and comparing two designs.
//!
//! cargo run --release --example evaluate_design

use milsense::cli::default_kernel;
use milsense::datasets::{synth_field, FieldKind, GridConfig};
use milsense::design::{lhs_design, uniform_design, OptimizerConfig};
use milsense::evalsuite::design_distance;
use milsense::experiment::{evaluate_baseline, evaluate_design, EvalOptions};
use milsense::stsvgp::CovarianceReuse;

fn main() -> milsense::Result<()> {
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(64, 192) };
    let data = synth_field(FieldKind::TwoRegime, &grid, &default_kernel(), 9)?;
    let (train, test) = (data.time_slice(0..96)?, data.time_slice(96..192)?);
    let uni = uniform_design(&train.spatial_locations, 8, 4)?;
    let lhs = lhs_design(&train.spatial_locations, 8, 4)?;

    let opts = EvalOptions { threshold: 0.5, ..Default::default() };
    let (fit, e) = evaluate_baseline(&train, &test, &default_kernel(), &uni, &OptimizerConfig::default(), opts)?;
    let r = &e.report;
    println!("uniform: rmse {:.4}, npll {:.4}, miscalibration {:.4}", r.rmse, r.npll, r.miscalibration_area);
    let worst = r.extreme_error_rate.iter().cloned().fold(0.0, f64::max);
    println!("  worst location exceeds |err| > {} in {:.0}% of steps", r.extreme_error_threshold, 100.0 * worst);

    // Same hyperparameters, averaged covariance reuse, other design.
    let e2 = evaluate_design(&train, &test, &lhs, &fit, EvalOptions { reuse: CovarianceReuse::Averaged, ..opts })?;
    println!("lhs:     rmse {:.4}, npll {:.4}", e2.report.rmse, e2.report.npll);

    let d = design_distance(&uni, &lhs)?;
    println!("matching distance {:.3}, most displaced {:?}", d.total, d.most_displaced);
    for (p, c) in r.calibration_curve.iter().step_by(3) {
        println!("  nominal {p:.2} -> empirical {c:.3}");
    }
    Ok(())
}
