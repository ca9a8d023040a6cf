use crate::error::{Error, Result};

use super::OptimizerConfig;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
/// Accepted-iteration window for the convergence test.
const WINDOW: usize = 50;

/// Objective value, gradient, and the quantity recorded in the trace.
pub(crate) struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub tracked: f64,
}

pub(crate) struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub tracked: f64,
    /// Tracked quantity after each accepted iteration, starting at `x0`.
    pub trace: Vec<f64>,
    pub iterates: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// Cosine decay from `lr_start` to `lr_end` over `max_iters`.
pub(crate) fn learning_rate(cfg: &OptimizerConfig, k: usize) -> f64 {
    let frac = (k as f64 / cfg.max_iters.max(1) as f64).min(1.0);
    cfg.lr_end + 0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Adam ascent. With `monotone`, a proposal that lowers either the objective
/// or the tracked quantity is rejected, the momentum is reset to the current
/// gradient, and the step scale is halved.
pub(crate) fn adam_ascent(
    x0: Vec<f64>,
    cfg: &OptimizerConfig,
    monotone: bool,
    record_iterates: bool,
    mut f: impl FnMut(&[f64]) -> Result<Eval>,
    project: impl Fn(&mut [f64]),
) -> Result<Ascent> {
    let n = x0.len();
    let mut x = x0;
    project(&mut x);
    let mut cur = f(&x)?;
    if !cur.value.is_finite() {
        return Err(Error::Optimization("objective is not finite at the starting point".into()));
    }
    let mut out = Ascent {
        x: x.clone(),
        value: cur.value,
        tracked: cur.tracked,
        trace: vec![cur.tracked],
        iterates: if record_iterates { vec![x.clone()] } else { Vec::new() },
        iterations: 0,
    };
    if n == 0 {
        return Ok(out);
    }
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut t = 0i32;
    let mut scale = 1.0;
    let mut pending = true;
    for k in 0..cfg.max_iters {
        out.iterations = k + 1;
        if pending {
            t += 1;
            for i in 0..n {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * cur.grad[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * cur.grad[i] * cur.grad[i];
            }
            pending = false;
        }
        let lr = learning_rate(cfg, k) * scale;
        let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        let mut prop: Vec<f64> =
            (0..n).map(|i| x[i] + lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS)).collect();
        project(&mut prop);
        if record_iterates {
            out.iterates.push(prop.clone());
        }
        let next = match f(&prop) {
            Ok(e) if e.value.is_finite() && e.grad.iter().all(|g| g.is_finite()) => Some(e),
            _ => None,
        };
        let accept = match &next {
            Some(e) => !monotone || (e.value >= cur.value && e.tracked >= cur.tracked),
            None => false,
        };
        if accept {
            x = prop;
            cur = next.unwrap();
            out.trace.push(cur.tracked);
            pending = true;
            scale = (scale * 2.0).min(1.0);
            let len = out.trace.len();
            if len > WINDOW {
                let old = out.trace[len - 1 - WINDOW];
                if (cur.tracked - old).abs() <= cfg.tolerance * cur.tracked.abs().max(1.0) {
                    break;
                }
            }
        } else {
            // Stale momentum may not point uphill; restart it from the current
            // gradient so that a small enough step always improves.
            let c1 = 1.0 - BETA1.powi(t);
            m.iter_mut().zip(&cur.grad).for_each(|(mi, g)| *mi = g * c1);
            scale *= 0.5;
            if scale < 1e-8 {
                break;
            }
        }
    }
    out.x = x;
    out.value = cur.value;
    out.tracked = cur.tracked;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn climbs_a_concave_quadratic() {
        let cfg = OptimizerConfig { max_iters: 2000, lr_start: 0.1, ..OptimizerConfig::default() };
        let r = adam_ascent(
            vec![2.0, -1.0],
            &cfg,
            true,
            false,
            |x| {
                let value = -(x[0] - 0.5).powi(2) - 2.0 * (x[1] + 0.25).powi(2);
                Ok(Eval { value, grad: vec![-2.0 * (x[0] - 0.5), -4.0 * (x[1] + 0.25)], tracked: value })
            },
            |_| {},
        )
        .unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-3 && (r.x[1] + 0.25).abs() < 1e-3, "{:?} {} {}", r.x, r.iterations, r.trace.len());
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let cfg = OptimizerConfig::default();
        assert!((learning_rate(&cfg, 0) - 0.05).abs() < 1e-15);
        assert!((learning_rate(&cfg, cfg.max_iters) - 0.001).abs() < 1e-15);
    }
}
