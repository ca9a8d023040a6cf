use milsense::datasets::{
    convex_hull, hull_project, inject_sim_error, load_grid, point_in_hull, save_grid, synth_field, FieldKind, GridConfig,
    GridDataset, Metadata, MANIFEST_FILE, VALUES_FILE,
};
use milsense::kernels::KernelSpec;
use milsense::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::fs;

fn kernel(ell_s: f64) -> KernelSpec {
    KernelSpec::separable(KernelSpec::matern32(1.0, &[ell_s, ell_s]), KernelSpec::matern32(1.0, &[3.0]))
}

#[test]
fn hand_written_grid_loads() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), r#"{"name": "tiny", "units": {"value": "degC", "time": "h", "space": "km"}}"#).unwrap();
    fs::write(
        dir.path().join(VALUES_FILE),
        "t,x1,x2,y,mask\n0,0,0,1.5,1\n0,2,0,-1,1\n3,0,0,0,0\n3,2,0,2.25,1\n",
    )
    .unwrap();
    let ds = load_grid(dir.path()).unwrap();
    assert_eq!(ds.spatial_locations, vec![[0.0, 0.0], [2.0, 0.0]]);
    assert_eq!(ds.times, vec![0.0, 3.0]);
    assert_eq!(ds.values, DMatrix::from_row_slice(2, 2, &[1.5, -1.0, 0.0, 2.25]));
    assert_eq!(ds.mask, DMatrix::from_row_slice(2, 2, &[true, true, false, true]));
    assert_eq!(ds.metadata.units.value, "degC");
    assert_eq!(ds.dt().unwrap(), 3.0);
}

#[test]
fn unknown_manifest_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), r#"{"name": "x", "colour": "red"}"#).unwrap();
    fs::write(dir.path().join(VALUES_FILE), "t,x1,x2,y,mask\n0,0,0,1,1\n").unwrap();
    let e = load_grid(dir.path()).unwrap_err();
    assert!(matches!(e, Error::Parse { .. }));
    assert!(e.to_string().contains("colour"), "{e}");
}

#[test]
fn irregular_times_report_the_offending_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), r#"{"name": "x"}"#).unwrap();
    fs::write(dir.path().join(VALUES_FILE), "t,x1,x2,y,mask\n0,0,0,1,1\n1,0,0,1,1\n3,0,0,1,1\n").unwrap();
    match load_grid(dir.path()).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 4),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn synthetic_fields_are_reproducible() {
    let cfg = GridConfig { noise_std: 0.1, ..GridConfig::new(12, 9) };
    let a = synth_field(FieldKind::TwoRegime, &cfg, &kernel(0.2), 5).unwrap();
    assert_eq!(a, synth_field(FieldKind::TwoRegime, &cfg, &kernel(0.2), 5).unwrap());
    assert_ne!(a.values, synth_field(FieldKind::TwoRegime, &cfg, &kernel(0.2), 6).unwrap().values);
    assert_eq!(a.metadata.seed, Some(5));
}

#[test]
fn separable_draws_have_the_prior_variance() {
    let cfg = GridConfig::new(9, 20);
    let (mut s, mut n) = (0.0, 0.0);
    for seed in 0..300 {
        let d = synth_field(FieldKind::SeparableGp, &cfg, &kernel(0.3), seed).unwrap();
        s += d.values.iter().map(|v| v * v).sum::<f64>();
        n += d.values.len() as f64;
    }
    let var = s / n;
    assert!((var - 1.0).abs() < 0.12, "{var}");
}

#[test]
fn two_regime_correlation_rises_across_the_band() {
    let cfg = GridConfig::new(100, 20);
    let corr = |a: usize, b: usize| {
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for seed in 0..30 {
            let d = synth_field(FieldKind::TwoRegime, &cfg, &kernel(0.1), seed).unwrap();
            for k in 0..d.n_time() {
                let (x, y) = (d.values[(k, a)], d.values[(k, b)]);
                sab += x * y;
                saa += x * x;
                sbb += y * y;
            }
        }
        sab / (saa * sbb).sqrt()
    };
    // Horizontal neighbours 1/9 apart at the left and right edges.
    let (left, right) = (corr(40, 41), corr(48, 49));
    assert!(left < 0.65 && right > 0.85, "left {left}, right {right}");
}

#[test]
fn injected_error_variance() {
    let cfg = GridConfig::new(9, 200);
    let clean = synth_field(FieldKind::SeparableGp, &cfg, &kernel(0.3), 1).unwrap();
    let same = inject_sim_error(&clean, 0.1, 1.0, 0.0, 3).unwrap();
    assert!(same.values.iter().zip(clean.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let (mut s, mut n) = (0.0, 0.0);
    for seed in 0..40 {
        let noisy = inject_sim_error(&clean, 0.1, 1.0, 1.0, seed).unwrap();
        let diff = noisy.values - &clean.values;
        s += diff.iter().map(|v| v * v).sum::<f64>();
        n += diff.len() as f64;
    }
    let var = s / n;
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

#[test]
fn slicing_and_selection() {
    let cfg = GridConfig::new(6, 10);
    let d = synth_field(FieldKind::SeparableGp, &cfg, &kernel(0.3), 2).unwrap();
    let s = d.time_slice(3..7).unwrap();
    assert_eq!(s.times, d.times[3..7].to_vec());
    assert_eq!(s.values, d.values.rows(3, 4).into_owned());
    let l = d.select_locations(&[4, 1]).unwrap();
    assert_eq!(l.spatial_locations, vec![d.spatial_locations[4], d.spatial_locations[1]]);
    assert_eq!(l.values.column(0), d.values.column(4));
    assert!(d.time_slice(4..4).is_err());
}

#[test]
fn grid_points_lie_in_their_hull() {
    let g = GridConfig::new(30, 1).locations();
    let hull = convex_hull(&g).unwrap();
    assert!(g.iter().all(|p| point_in_hull(&hull, *p, 1e-12)));
    assert!(!point_in_hull(&hull, [1.5, 0.5], 1e-12));
    assert!(matches!(convex_hull(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]), Err(Error::DegenerateGeometry(_))));
}

fn pentagon() -> milsense::datasets::DomainHull {
    convex_hull(&[[0.0, 0.0], [2.0, 0.0], [2.5, 1.5], [1.0, 2.5], [-0.5, 1.0], [1.0, 1.0]]).unwrap()
}

fn d(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn dataset_strategy() -> impl Strategy<Value = GridDataset> {
    (1usize..5, 1usize..5, any::<u64>()).prop_flat_map(|(ns, nt, seed)| {
        (
            prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), ns),
            prop::collection::vec(-1e6f64..1e6, ns * nt),
            prop::collection::vec(any::<bool>(), ns * nt),
            0.01f64..100.0,
            -50.0f64..50.0,
        )
            .prop_map(move |(locs, vals, mask, dt, t0)| {
                let mut locs: Vec<[f64; 2]> = locs.iter().map(|(a, b)| [*a, *b]).collect();
                for (i, p) in locs.iter_mut().enumerate() {
                    p[0] += 1e4 * i as f64;
                }
                let mut meta = Metadata::named("prop");
                meta.seed = Some(seed);
                let mut ds = GridDataset::new(
                    locs,
                    (0..nt).map(|k| t0 + k as f64 * dt).collect(),
                    DMatrix::from_row_slice(nt, ns, &vals),
                    meta,
                )
                .unwrap();
                ds.mask = DMatrix::from_row_slice(nt, ns, &mask);
                ds
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn save_then_load_is_identity(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        save_grid(&ds, dir.path()).unwrap();
        let back = load_grid(dir.path()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn projection_is_idempotent_and_non_expansive(a in (-3.0f64..4.0, -3.0f64..4.0), b in (-3.0f64..4.0, -3.0f64..4.0)) {
        let h = pentagon();
        let (a, b) = ([a.0, a.1], [b.0, b.1]);
        let (pa, pb) = (hull_project(&h, a), hull_project(&h, b));
        prop_assert!(point_in_hull(&h, pa, 1e-12));
        prop_assert_eq!(hull_project(&h, pa), pa);
        prop_assert!(d(pa, pb) <= d(a, b) + 1e-12);
    }

    #[test]
    fn projection_is_the_closest_boundary_point(a in (-3.0f64..4.0, -3.0f64..4.0)) {
        let h = pentagon();
        let a = [a.0, a.1];
        prop_assume!(!point_in_hull(&h, a, 0.0));
        let p = hull_project(&h, a);
        let v = &h.vertices;
        let mut best = f64::INFINITY;
        for i in 0..v.len() {
            let (s, e) = (v[i], v[(i + 1) % v.len()]);
            for k in 0..=2000 {
                let t = k as f64 / 2000.0;
                best = best.min(d(a, [s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1])]));
            }
        }
        prop_assert!(d(a, p) <= best + 1e-12);
        prop_assert!(d(a, p) >= best - 2e-3);
    }
}
