use milsense::datasets::{synth_field, FieldKind, GridConfig};
use milsense::design::{mil_design, uniform_design, OptimizerConfig, SensorDesign};
use milsense::experiment::{ablate_noise, evaluate_baseline, evaluate_design, summarize_ablation, AblationCell, EvalOptions};
use milsense::kernels::KernelSpec;

fn kernel() -> KernelSpec {
    KernelSpec::separable(KernelSpec::matern32(1.0, &[0.3, 0.3]), KernelSpec::matern32(1.0, &[4.0]))
}

fn split() -> (milsense::datasets::GridDataset, milsense::datasets::GridDataset) {
    let cfg = GridConfig { noise_std: 0.1, ..GridConfig::new(25, 32) };
    let d = synth_field(FieldKind::SeparableGp, &cfg, &kernel(), 8).unwrap();
    (d.time_slice(0..16).unwrap(), d.time_slice(16..32).unwrap())
}

fn quick() -> OptimizerConfig {
    OptimizerConfig { max_iters: 40, restarts: 1, ..OptimizerConfig::default() }
}

#[test]
fn zero_variance_cell_reproduces_a_clean_run() {
    let (train, test) = split();
    let cells = [
        AblationCell { ell_s: 0.1, ell_t: 2.0, var: 0.0 },
        AblationCell { ell_s: 0.1, ell_t: 2.0, var: 0.5 },
    ];
    let (golden, rows) = ablate_noise(&train, &test, &kernel(), 4, &cells, &[0, 1], &quick(), EvalOptions::default()).unwrap();
    assert_eq!(rows.len(), 4);
    for seed in [0, 1] {
        let frozen = OptimizerConfig { learn_hyperparameters: false, initial_noise_var: Some(golden.sigma2), seed, ..quick() };
        let (design, _) = mil_design(&train, &golden.kernel, 4, None, &frozen).unwrap();
        let clean = evaluate_design(&train, &test, &design, &golden, EvalOptions::default()).unwrap();
        let row = rows.iter().find(|r| r.var == 0.0 && r.seed == seed).unwrap();
        assert!((row.rmse - clean.report.rmse).abs() < 1e-9);
        assert!((row.npll - clean.report.npll).abs() < 1e-9);
    }
    let summary = summarize_ablation(&rows);
    assert_eq!(summary.len(), 2);
    assert_eq!(summary[0].var, 0.0);
    assert_eq!(summary[0].n, 2);
}

#[test]
fn full_coverage_beats_a_single_sensor() {
    let (train, test) = split();
    let all = SensorDesign::new("all", 0, train.spatial_locations.clone());
    let one = uniform_design(&train.spatial_locations, 1, 0).unwrap();
    let (fit, full) = evaluate_baseline(&train, &test, &kernel(), &all, &quick(), EvalOptions::default()).unwrap();
    let sparse = evaluate_design(&train, &test, &one, &fit, EvalOptions::default()).unwrap();
    assert!(full.report.rmse < sparse.report.rmse);
    assert_eq!(full.rmse_per_location.len(), 25);
    assert!(full.var.iter().all(|v| *v > fit.sigma2));
}
