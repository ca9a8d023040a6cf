//! Writing and reading the grid format, then driving the command line in-process.
//!
//! cargo run --release --example dataset_io

use milsense::cli::default_kernel;
use milsense::datasets::{inject_sim_error, load_grid, save_grid, synth_field, FieldKind, GridConfig};

fn main() -> milsense::Result<()> {
    let dir = std::env::temp_dir().join("milsense-dataset-io");
    let grid = GridConfig { noise_std: 0.1, ..GridConfig::new(36, 48) };
    let mut data = synth_field(FieldKind::TwoRegime, &grid, &default_kernel(), 1)?;
    data.mask[(5, 3)] = false;
    save_grid(&data, &dir.join("clean"))?;
    let back = load_grid(&dir.join("clean"))?;
    assert_eq!(back, data);
    println!("round trip ok: {} locations x {} times, {} observed", back.n_space(), back.n_time(), back.n_observed());

    let noisy = inject_sim_error(&data, 0.2, 6.0, 0.5, 3)?;
    save_grid(&noisy, &dir.join("noisy"))?;

    // The same run through the command-line entry point.
    let (input, out) = (dir.join("noisy"), dir.join("runs"));
    let args = [
        "milsense", "design", "--data", input.to_str().unwrap(), "--strategy", "lhs", "--n", "6", "--seed", "0,1",
        "--out", out.to_str().unwrap(),
    ];
    let code = milsense::cli::run(args.iter().map(std::ffi::OsString::from));
    println!("design exited with {code}; outputs under {}", out.display());
    Ok(())
}
