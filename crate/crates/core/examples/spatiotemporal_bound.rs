//! The spatiotemporal bound costs O(N_t): doubling the time axis doubles the time.
//!
//! cargo run --release --example spatiotemporal_bound

use std::time::Instant;

use milsense::cli::default_kernel;
use milsense::datasets::{synth_field, FieldKind, GridConfig, Normalizer};
use milsense::sparse_vgp::InducingSet;
use milsense::stsvgp::{st_elbo, st_elbo_grad, st_fit_posterior, st_predict, GradientMethod, StGpModel};

fn main() -> milsense::Result<()> {
    let kernel = default_kernel();
    for nt in [250, 500, 1000, 2000] {
        let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(49, nt) };
        let data = synth_field(FieldKind::SeparableGp, &grid, &kernel, 1)?;
        let z = vec![[0.2, 0.2], [0.8, 0.2], [0.5, 0.5], [0.2, 0.8], [0.8, 0.8]];
        let model = StGpModel::for_dataset(kernel.clone(), InducingSet::free(z), 0.01, &data)?;
        let t = Instant::now();
        let elbo = st_elbo(&model, &data)?;
        let secs = t.elapsed().as_secs_f64();
        println!("N_t = {nt:5}: bound {elbo:12.2}  {:7.1} ms  {:.2} us per step", secs * 1e3, secs * 1e6 / nt as f64);
    }

    // Posterior and gradient on a small field.
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(25, 48) };
    let data = synth_field(FieldKind::SeparableGp, &grid, &kernel, 2)?;
    let norm = Normalizer::fit(&data.spatial_locations);
    let model = StGpModel::for_dataset(kernel.clone(), InducingSet::free(vec![[0.25, 0.25], [0.75, 0.75], [0.25, 0.75]]), 0.01, &data)?;
    let post = st_fit_posterior(&model, &data)?;
    let pred = st_predict(&model, &post, &[norm.forward([0.5, 0.5])])?;
    println!("prediction at the centre, t = 10: {:+.3} ± {:.3} (observed {:+.3})", pred.mean[(10, 0)], pred.var[(10, 0)].sqrt(), data.values[(10, 12)]);
    let g = st_elbo_grad(&model, &data, GradientMethod::Analytic)?;
    println!("d bound / d z: {:?}", g.d_locations.iter().map(|p| [(p[0] * 100.0).round() / 100.0, (p[1] * 100.0).round() / 100.0]).collect::<Vec<_>>());
    Ok(())
}
