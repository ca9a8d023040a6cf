//! How much does correlated simulator error in the training data hurt MIL designs?
//!
//! cargo run --release --example noise_ablation

use milsense::cli::default_kernel;
use milsense::datasets::{synth_field, FieldKind, GridConfig};
use milsense::design::OptimizerConfig;
use milsense::experiment::{ablate_noise, summarize_ablation, AblationCell, EvalOptions};

fn main() -> milsense::Result<()> {
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(64, 96) };
    let data = synth_field(FieldKind::SeparableGp, &grid, &default_kernel(), 9)?;
    let (train, test) = (data.time_slice(0..48)?, data.time_slice(48..96)?);
    let mut cells = Vec::new();
    for ell_s in [0.1, 1.0] {
        cells.extend([0.0, 0.25, 1.0].map(|var| AblationCell { ell_s, ell_t: 12.0, var }));
    }
    let cfg = OptimizerConfig { max_iters: 150, restarts: 1, ..Default::default() };

    let (golden, rows) = ablate_noise(&train, &test, &default_kernel(), 9, &cells, &(0..10).collect::<Vec<u64>>(), &cfg, EvalOptions::default())?;
    println!("golden fit: noise variance {:.4}, bound {:.2}", golden.sigma2, golden.elbo);
    println!("{:>6} {:>6} {:>10} {:>8} {:>10}", "ell_s", "var", "rmse", "sd", "npll");
    for s in summarize_ablation(&rows) {
        println!("{:>6} {:>6} {:>10.4} {:>8.4} {:>10.4}", s.ell_s, s.var, s.rmse_mean, s.rmse_std, s.npll_mean);
    }
    Ok(())
}
