//! MIL against uniform and Latin-hypercube designs on the two-regime field.
//!
//! cargo run --release --example design_benchmark

use std::time::Instant;

use milsense::cli::default_kernel;
use milsense::datasets::{synth_field, FieldKind, GridConfig};
use milsense::design::{lhs_design, mil_design, uniform_design, OptimizerConfig};
use milsense::experiment::{evaluate_baseline, evaluate_design, EvalOptions};

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}

fn std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn main() -> milsense::Result<()> {
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(100, 336) };
    let data = synth_field(FieldKind::TwoRegime, &grid, &default_kernel(), 7)?;
    let (train, test) = (data.time_slice(0..168)?, data.time_slice(168..336)?);
    let kernel = default_kernel();
    let opts = EvalOptions::default();
    let n = 9;

    let t = Instant::now();
    let mut mil = Vec::new();
    for seed in 0..3 {
        let cfg = OptimizerConfig { seed, ..Default::default() };
        let (design, fit) = mil_design(&train, &kernel, n, None, &cfg)?;
        let e = evaluate_design(&train, &test, &design, &fit, opts)?;
        println!("mil seed {seed}: rmse {:.4}, elbo {:.2}, {:?}", e.report.rmse, fit.elbo, design.locations);
        mil.push(e.report.rmse);
    }
    println!("mil took {:.1} s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let (mut uni, mut lhs) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let cfg = OptimizerConfig { seed, ..Default::default() };
        let d = uniform_design(&train.spatial_locations, n, seed)?;
        uni.push(evaluate_baseline(&train, &test, &kernel, &d, &cfg, opts)?.1.report.rmse);
        let d = lhs_design(&train.spatial_locations, n, seed)?;
        lhs.push(evaluate_baseline(&train, &test, &kernel, &d, &cfg, opts)?.1.report.rmse);
    }
    println!("baselines took {:.1} s", t.elapsed().as_secs_f64());
    for (name, v) in [("mil", &mil), ("uniform", &uni), ("lhs", &lhs)] {
        println!("{name:8} median rmse {:.4}  std {:.4}  {:?}", median(v), std(v), v.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>());
    }
    Ok(())
}
