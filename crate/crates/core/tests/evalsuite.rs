use milsense::design::SensorDesign;
use milsense::evalsuite::{calibration, default_levels, design_distance, extreme_error_rate, npll, point_set_distance, rmse, EvalReport};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

fn random_case(seed: u64, r: usize, c: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0));
    let var = DMatrix::from_fn(r, c, |_, _| rng.random_range(0.05..2.0));
    let truth = DMatrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0));
    let mut mask = DMatrix::from_fn(r, c, |_, _| rng.random_range(0.0..1.0) < 0.8);
    mask[(0, 0)] = true;
    (mean, var, truth, mask)
}

#[test]
fn metrics_match_naive_loops() {
    let (mean, var, truth, mask) = random_case(1, 7, 5);
    let (mut n, mut se, mut nll) = (0.0, 0.0, 0.0);
    for i in 0..7 {
        for j in 0..5 {
            if mask[(i, j)] {
                let e = truth[(i, j)] - mean[(i, j)];
                n += 1.0;
                se += e * e;
                nll += 0.5 * (2.0 * std::f64::consts::PI * var[(i, j)]).ln() + e * e / (2.0 * var[(i, j)]);
            }
        }
    }
    assert!((rmse(&mean, &truth, Some(&mask)).unwrap() - (se / n).sqrt()).abs() < 1e-14);
    assert!((npll(&mean, &var, &truth, Some(&mask)).unwrap() - nll / n).abs() < 1e-13);

    let rates = extreme_error_rate(&mean, &truth, Some(&mask), 1.0).unwrap();
    for j in 0..5 {
        let obs: Vec<usize> = (0..7).filter(|&i| mask[(i, j)]).collect();
        let big = obs.iter().filter(|&&i| (truth[(i, j)] - mean[(i, j)]).abs() > 1.0).count();
        let want = if obs.is_empty() { 0.0 } else { big as f64 / obs.len() as f64 };
        assert_eq!(rates[j], want);
    }
}

#[test]
fn npll_prefers_the_better_forecast() {
    let (mean, var, truth, _) = random_case(2, 6, 6);
    let closer = &mean + (&truth - &mean) * 0.5;
    assert!(npll(&closer, &var, &truth, None).unwrap() < npll(&mean, &var, &truth, None).unwrap());
    // With the errors fixed, the variance equal to the squared error is the best choice.
    let e2 = (&truth - &mean).map(|v| v * v + 1e-9);
    assert!(npll(&mean, &e2, &truth, None).unwrap() < npll(&mean, &(&e2 * 4.0), &truth, None).unwrap());
    assert!(npll(&mean, &e2, &truth, None).unwrap() < npll(&mean, &(&e2 * 0.25), &truth, None).unwrap());
}

#[test]
fn quantile_truths_are_calibrated() {
    let n = 2000;
    let std_normal = Normal::standard();
    let mean = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin());
    let var = DMatrix::from_fn(n, 1, |i, _| 0.5 + (i % 7) as f64 * 0.1);
    let mut q: Vec<f64> = (0..n).map(|i| std_normal.inverse_cdf((i as f64 + 0.5) / n as f64)).collect();
    q.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let truth = DMatrix::from_fn(n, 1, |i, _| mean[(i, 0)] + var[(i, 0)].sqrt() * q[i]);
    let cal = calibration(&mean, &var, &truth, None, &default_levels()).unwrap();
    assert!(cal.miscalibration_area <= 0.02, "{}", cal.miscalibration_area);
    // Doubling the spread overcovers at every level.
    let wide = calibration(&mean, &(&var * 4.0), &truth, None, &default_levels()).unwrap();
    assert!(wide.curve.iter().all(|(p, e)| e > p));
    assert!(wide.miscalibration_area > 0.1);
}

#[test]
fn report_bundles_the_metrics() {
    let (mean, var, truth, mask) = random_case(4, 5, 4);
    let r = EvalReport::compute(&mean, &var, &truth, Some(&mask), 0.5).unwrap();
    assert_eq!(r.rmse, rmse(&mean, &truth, Some(&mask)).unwrap());
    assert_eq!(r.extreme_error_rate.len(), 4);
    assert_eq!(r.calibration_curve.len(), 19);
    assert!(r.calibration_csv().starts_with("nominal,empirical\n"));
}

fn brute_force(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut perm: Vec<usize> = (0..b.len()).collect();
    let mut best = f64::INFINITY;
    fn rec(k: usize, perm: &mut Vec<usize>, a: &[[f64; 2]], b: &[[f64; 2]], best: &mut f64) {
        if k == perm.len() {
            let t: f64 = (0..a.len()).map(|i| ((a[i][0] - b[perm[i]][0]).powi(2) + (a[i][1] - b[perm[i]][1]).powi(2)).sqrt()).sum();
            *best = best.min(t);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            rec(k + 1, perm, a, b, best);
            perm.swap(k, i);
        }
    }
    rec(0, &mut perm, a, b, &mut best);
    best
}

fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect()
}

#[test]
fn five_point_matching_is_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (a, b) = (points(&mut rng, 5), points(&mut rng, 5));
        let d = point_set_distance(&a, &b).unwrap();
        assert!((d.total - brute_force(&a, &b)).abs() < 1e-12);
        let mut cols: Vec<usize> = d.matching.iter().map(|m| m.1).collect();
        cols.sort_unstable();
        assert_eq!(cols, vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn uneven_designs_report_the_leftover_point() {
    let a = SensorDesign::new("a", 0, vec![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]]);
    let b = SensorDesign::new("b", 0, vec![[1.0, 0.1], [0.0, 0.1]]);
    let d = design_distance(&a, &b).unwrap();
    assert_eq!(d.unmatched, Some((0, 2)));
    assert_eq!(d.matching, vec![(0, 1), (1, 0)]);
    assert!((d.total - 0.2).abs() < 1e-12);
    let c = SensorDesign::new("c", 0, vec![[0.0, 0.0]]);
    assert!(design_distance(&a, &c).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_ignore_entry_order(seed in 0u64..10_000, r in 1usize..6, c in 1usize..6) {
        let (mean, var, truth, mask) = random_case(seed, r, c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let mut order: Vec<usize> = (0..r * c).collect();
        order.shuffle(&mut rng);
        let flat = |m: &DMatrix<f64>| DMatrix::from_fn(r * c, 1, |k, _| m[order[k]]);
        let fmask = DMatrix::from_fn(r * c, 1, |k, _| mask[order[k]]);
        let (pm, pv, pt) = (flat(&mean), flat(&var), flat(&truth));
        prop_assert!((rmse(&mean, &truth, Some(&mask)).unwrap() - rmse(&pm, &pt, Some(&fmask)).unwrap()).abs() < 1e-12);
        prop_assert!((npll(&mean, &var, &truth, Some(&mask)).unwrap() - npll(&pm, &pv, &pt, Some(&fmask)).unwrap()).abs() < 1e-12);
        let a = calibration(&mean, &var, &truth, Some(&mask), &default_levels()).unwrap();
        let b = calibration(&pm, &pv, &pt, Some(&fmask), &default_levels()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn matching_distance_is_a_metric(seed in 0u64..10_000, n in 1usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (points(&mut rng, n), points(&mut rng, n), points(&mut rng, n));
        let d = |x: &[[f64; 2]], y: &[[f64; 2]]| point_set_distance(x, y).unwrap().total;
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-12);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        prop_assert!(d(&a, &a) == 0.0);
        let mut shuffled = a.clone();
        shuffled.shuffle(&mut rng);
        prop_assert!(d(&a, &shuffled) < 1e-15);
    }
}
