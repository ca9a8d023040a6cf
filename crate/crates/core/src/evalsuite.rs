//! Prediction metrics and design comparison.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::SensorDesign;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Summary of a prediction against held-out truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rmse: f64,
    /// Mean negative log predictive density per observation (nats).
    pub npll: f64,
    pub miscalibration_area: f64,
    /// Per location, the fraction of time steps whose absolute error exceeds the threshold.
    pub extreme_error_rate: Vec<f64>,
    pub extreme_error_threshold: f64,
    /// `(nominal, empirical)` central-interval coverage.
    pub calibration_curve: Vec<(f64, f64)>,
}

impl EvalReport {
    /// Evaluates predictive marginals against `truth` over the entries where `mask` is set.
    pub fn compute(
        mean: &DMatrix<f64>,
        var: &DMatrix<f64>,
        truth: &DMatrix<f64>,
        mask: Option<&DMatrix<bool>>,
        threshold: f64,
    ) -> Result<Self> {
        let cal = calibration(mean, var, truth, mask, &default_levels())?;
        Ok(EvalReport {
            rmse: rmse(mean, truth, mask)?,
            npll: npll(mean, var, truth, mask)?,
            miscalibration_area: cal.miscalibration_area,
            extreme_error_rate: extreme_error_rate(mean, truth, mask, threshold)?,
            extreme_error_threshold: threshold,
            calibration_curve: cal.curve,
        })
    }

    /// Calibration curve as `nominal,empirical` CSV.
    pub fn calibration_csv(&self) -> String {
        let mut s = String::from("nominal,empirical\n");
        for (p, e) in &self.calibration_curve {
            s.push_str(&format!("{p},{e}\n"));
        }
        s
    }
}

fn check_shapes(a: &DMatrix<f64>, b: &DMatrix<f64>, mask: Option<&DMatrix<bool>>) -> Result<()> {
    if a.shape() != b.shape() || mask.is_some_and(|m| m.shape() != a.shape()) {
        return Err(Error::input("prediction, truth and mask shapes differ"));
    }
    Ok(())
}

fn entries<'a>(
    a: &'a DMatrix<f64>,
    mask: Option<&'a DMatrix<bool>>,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    let (r, c) = a.shape();
    (0..c).flat_map(move |j| (0..r).map(move |i| (i, j))).filter(move |&(i, j)| mask.is_none_or(|m| m[(i, j)]))
}

pub fn rmse(pred: &DMatrix<f64>, truth: &DMatrix<f64>, mask: Option<&DMatrix<bool>>) -> Result<f64> {
    check_shapes(pred, truth, mask)?;
    let (mut n, mut s) = (0usize, 0.0);
    for (i, j) in entries(pred, mask) {
        s += (pred[(i, j)] - truth[(i, j)]).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(Error::input("no observed entries to compare"));
    }
    Ok((s / n as f64).sqrt())
}

fn check_var(var: &DMatrix<f64>, mask: Option<&DMatrix<bool>>) -> Result<()> {
    if entries(var, mask).any(|(i, j)| !(var[(i, j)] > 0.0 && var[(i, j)].is_finite())) {
        return Err(Error::input("predictive variances must be finite and > 0"));
    }
    Ok(())
}

pub fn npll(
    mean: &DMatrix<f64>,
    var: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
) -> Result<f64> {
    check_shapes(mean, truth, mask)?;
    check_shapes(var, truth, mask)?;
    check_var(var, mask)?;
    let (mut n, mut s) = (0usize, 0.0);
    for (i, j) in entries(mean, mask) {
        let v = var[(i, j)];
        s += 0.5 * (LN_2PI + v.ln() + (truth[(i, j)] - mean[(i, j)]).powi(2) / v);
        n += 1;
    }
    if n == 0 {
        return Err(Error::input("no observed entries to compare"));
    }
    Ok(s / n as f64)
}

/// Nominal levels 0.05, 0.10, ..., 0.95.
pub fn default_levels() -> Vec<f64> {
    (1..=19).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub curve: Vec<(f64, f64)>,
    /// Trapezoidal area between the curve and the diagonal over the levels.
    pub miscalibration_area: f64,
}

/// Empirical coverage of central Gaussian credible intervals.
pub fn calibration(
    mean: &DMatrix<f64>,
    var: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
    levels: &[f64],
) -> Result<Calibration> {
    check_shapes(mean, truth, mask)?;
    check_shapes(var, truth, mask)?;
    check_var(var, mask)?;
    if levels.is_empty() || levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("levels must be strictly increasing inside (0, 1)"));
    }
    let std_normal = Normal::standard();
    let z: Vec<f64> = levels.iter().map(|p| std_normal.inverse_cdf(0.5 + 0.5 * p)).collect();
    let mut hits = vec![0usize; levels.len()];
    let mut n = 0usize;
    for (i, j) in entries(mean, mask) {
        let u = (truth[(i, j)] - mean[(i, j)]).abs() / var[(i, j)].sqrt();
        for (h, zk) in hits.iter_mut().zip(&z) {
            if u <= *zk {
                *h += 1;
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::input("no observed entries to compare"));
    }
    let curve: Vec<(f64, f64)> = levels.iter().zip(&hits).map(|(p, h)| (*p, *h as f64 / n as f64)).collect();
    let gap: Vec<f64> = curve.iter().map(|(p, e)| (e - p).abs()).collect();
    let area = (1..curve.len()).map(|k| 0.5 * (gap[k] + gap[k - 1]) * (curve[k].0 - curve[k - 1].0)).sum();
    Ok(Calibration { curve, miscalibration_area: area })
}

/// Per location (column), the fraction of observed steps with `|error| > threshold`.
/// Locations without observations report 0.
pub fn extreme_error_rate(
    pred: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
    threshold: f64,
) -> Result<Vec<f64>> {
    check_shapes(pred, truth, mask)?;
    if !(threshold > 0.0) {
        return Err(Error::input("threshold must be > 0"));
    }
    let mut any = false;
    let out = (0..pred.ncols())
        .map(|j| {
            let (mut n, mut k) = (0usize, 0usize);
            for i in 0..pred.nrows() {
                if mask.is_none_or(|m| m[(i, j)]) {
                    n += 1;
                    if (pred[(i, j)] - truth[(i, j)]).abs() > threshold {
                        k += 1;
                    }
                }
            }
            any |= n > 0;
            if n == 0 { 0.0 } else { k as f64 / n as f64 }
        })
        .collect();
    if !any {
        return Err(Error::input("no observed entries to compare"));
    }
    Ok(out)
}

/// Minimum-cost assignment of each row to a distinct column (`rows ≤ cols`),
/// by the Hungarian algorithm with potentials. Returns the column of each row.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.shape();
    if n > m {
        return Err(Error::input("assignment needs rows <= columns"));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::input("assignment costs must be finite"));
    }
    // 1-based arrays; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

/// Optimal matching between two designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDistance {
    /// Sum of Euclidean distances over matched pairs.
    pub total: f64,
    /// `(index in first, index in second)` pairs.
    pub matching: Vec<(usize, usize)>,
    /// When sizes differ by one: `(which design, index)` of the point left over.
    pub unmatched: Option<(usize, usize)>,
    /// Matched pair with the largest distance: `(i, j, distance)`.
    pub most_displaced: Option<(usize, usize, f64)>,
}

pub fn design_distance(d1: &SensorDesign, d2: &SensorDesign) -> Result<DesignDistance> {
    point_set_distance(&d1.locations, &d2.locations)
}

pub fn point_set_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<DesignDistance> {
    if a.is_empty() || b.is_empty() || a.len().abs_diff(b.len()) > 1 {
        return Err(Error::input(format!(
            "designs must be non-empty and differ in size by at most one, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let swap = a.len() > b.len();
    let (rows, cols) = if swap { (b, a) } else { (a, b) };
    let dist = |p: [f64; 2], q: [f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let cost = DMatrix::from_fn(rows.len(), cols.len(), |i, j| dist(rows[i], cols[j]));
    let assign = hungarian(&cost)?;
    let mut matching: Vec<(usize, usize)> =
        assign.iter().enumerate().map(|(i, &j)| if swap { (j, i) } else { (i, j) }).collect();
    matching.sort_unstable();
    let unmatched = (rows.len() < cols.len()).then(|| {
        let j = (0..cols.len()).find(|j| !assign.contains(j)).expect("one column is free");
        (if swap { 0 } else { 1 }, j)
    });
    let mut total = 0.0;
    let mut most: Option<(usize, usize, f64)> = None;
    for &(i, j) in &matching {
        let d = dist(a[i], b[j]);
        total += d;
        if most.is_none_or(|m| d > m.2) {
            most = Some((i, j, d));
        }
    }
    Ok(DesignDistance { total, matching, unmatched, most_displaced: most })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_of_plus_minus_one() {
        let p = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert_eq!(rmse(&p, &DMatrix::zeros(1, 2), None).unwrap(), 1.0);
    }

    #[test]
    fn npll_reference_values() {
        let m = DMatrix::zeros(1, 1);
        let v = DMatrix::from_element(1, 1, 1.0);
        assert!((npll(&m, &v, &m, None).unwrap() - 0.5 * LN_2PI).abs() < 1e-15);
        let s: f64 = 0.7;
        let v = DMatrix::from_element(1, 1, s * s);
        let t = DMatrix::from_element(1, 1, s);
        let want = 0.5 * (LN_2PI + (s * s).ln()) + 0.5;
        assert!((npll(&m, &v, &t, None).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn overconfident_truths_cover_everything() {
        let m = DMatrix::zeros(2, 3);
        let v = DMatrix::from_element(2, 3, 1.0);
        let c = calibration(&m, &v, &m, None, &default_levels()).unwrap();
        assert!(c.curve.iter().all(|(_, e)| *e == 1.0));
        // ∫_{0.05}^{0.95} (1 − p) dp
        assert!((c.miscalibration_area - 0.45).abs() < 1e-12);
    }

    #[test]
    fn masked_entries_are_ignored() {
        let p = DMatrix::from_row_slice(1, 2, &[1.0, 100.0]);
        let mask = DMatrix::from_row_slice(1, 2, &[true, false]);
        assert_eq!(rmse(&p, &DMatrix::zeros(1, 2), Some(&mask)).unwrap(), 1.0);
        let none = DMatrix::from_element(1, 2, false);
        assert!(rmse(&p, &p, Some(&none)).is_err());
    }

    #[test]
    fn extreme_rates() {
        let t = DMatrix::zeros(4, 2);
        assert_eq!(extreme_error_rate(&t, &t, None, 1.0).unwrap(), vec![0.0, 0.0]);
        let p = DMatrix::from_element(4, 2, 2.0);
        assert_eq!(extreme_error_rate(&p, &t, None, 1.0).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn swapped_pair_has_zero_distance() {
        let a = [[0.0, 0.0], [1.0, 1.0], [0.5, 0.2]];
        let b = [[1.0, 1.0], [0.0, 0.0], [0.5, 0.2]];
        let d = point_set_distance(&a, &b).unwrap();
        assert_eq!(d.total, 0.0);
        assert_eq!(d.matching, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn extra_point_is_reported() {
        let a = [[0.0, 0.0], [1.0, 1.0]];
        let b = [[1.0, 1.0], [5.0, 5.0], [0.1, 0.0]];
        let d = point_set_distance(&a, &b).unwrap();
        assert_eq!(d.unmatched, Some((1, 1)));
        assert!((d.total - 0.1).abs() < 1e-15);
        let d = point_set_distance(&b, &a).unwrap();
        assert_eq!(d.unmatched, Some((0, 1)));
        assert!(point_set_distance(&a, &[[0.0, 0.0]; 4]).is_err());
    }
}
