//! Exact state-space (SDE) form of temporal kernels.
//!
//! Matérn-ν leaves use the companion-form SDE with `λ = √(2ν)/ℓ`. The
//! quasi-periodic leaf couples a Matérn-3/2 SDE with a 2-D rotation at
//! frequency `2π/period`: `F = F₃₂ ⊗ I₂ + I₂ ⊗ [[0, -ω], [ω, 0]]`, so that
//! `H e^{Fτ} P∞ Hᵀ = κ₃₂(τ) cos(ωτ)`. Sums stack block-diagonally.

use nalgebra::DMatrix;

use super::{HyperParams, KernelSpec};
use crate::error::{Error, Result};
use crate::linalg::{solve_lyapunov, symmetrized};

/// Linear time-invariant SDE `dx = F x dt + L dβ`, `f = H x`, `E[dβ dβᵀ] = Qc dt`.
#[derive(Debug, Clone)]
pub struct LtiSde {
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub qc: DMatrix<f64>,
    /// 1 × d measurement row.
    pub h: DMatrix<f64>,
    /// Stationary state covariance.
    pub pinf: DMatrix<f64>,
}

impl LtiSde {
    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// Max-abs entry of `F P∞ + P∞ Fᵀ + L Qc Lᵀ`.
    pub fn lyapunov_residual(&self) -> f64 {
        let r = &self.f * &self.pinf + &self.pinf * self.f.transpose() + &self.l * &self.qc * self.l.transpose();
        r.amax()
    }

    /// `H P∞ Hᵀ`, the kernel variance at lag zero.
    pub fn variance(&self) -> f64 {
        (&self.h * &self.pinf * self.h.transpose())[(0, 0)]
    }
}

/// An SDE together with its discretization over one step.
#[derive(Debug, Clone)]
pub struct DiscreteSde {
    pub sde: LtiSde,
    /// Transition `A = expm(F dt)`.
    pub a: DMatrix<f64>,
    /// Process noise `Q = P∞ − A P∞ Aᵀ`.
    pub q: DMatrix<f64>,
}

struct Continuous {
    f: DMatrix<f64>,
    l: DMatrix<f64>,
    qc: DMatrix<f64>,
    h: DMatrix<f64>,
    /// ∂F/∂log θ per parameter.
    df: Vec<DMatrix<f64>>,
    /// ∂(L Qc Lᵀ)/∂log θ per parameter.
    dw: Vec<DMatrix<f64>>,
}

fn unsupported(spec: &KernelSpec) -> Error {
    let name = match spec {
        KernelSpec::Product(_) => "Product",
        KernelSpec::Separable { .. } => "Separable",
        _ => "kernel",
    };
    Error::UnsupportedKernel(format!("{name} has no exact state-space form"))
}

fn continuous(spec: &KernelSpec) -> Result<Continuous> {
    match spec {
        KernelSpec::Matern12(hp) => Ok(matern_sde(1, hp)),
        KernelSpec::Matern32(hp) => Ok(matern_sde(2, hp)),
        KernelSpec::Matern52(hp) => Ok(matern_sde(3, hp)),
        KernelSpec::QuasiPeriodicMatern32(hp) => Ok(quasi_periodic_sde(hp)),
        KernelSpec::Sum(children) => {
            let parts = children.iter().map(continuous).collect::<Result<Vec<_>>>()?;
            Ok(stack(parts))
        }
        _ => Err(unsupported(spec)),
    }
}

fn check_temporal(spec: &KernelSpec) -> Result<()> {
    spec.validate()?;
    if spec.input_dim() != 1 {
        return Err(Error::input("state-space conversion needs a 1-D temporal kernel"));
    }
    Ok(())
}

fn matern_sde(order: usize, hp: &HyperParams) -> Continuous {
    let s2 = hp.variance;
    let ell = hp.lengthscales[0];
    let mut f = DMatrix::zeros(order, order);
    let mut df_ell = DMatrix::zeros(order, order);
    for i in 0..order - 1 {
        f[(i, i + 1)] = 1.0;
    }
    // Last row holds -binom(order, j) λ^{order-j}; d/dlogℓ multiplies each by -(order-j).
    let (lam, q) = match order {
        1 => {
            let lam = 1.0 / ell;
            (lam, 2.0 * s2 * lam)
        }
        2 => {
            let lam = 3f64.sqrt() / ell;
            (lam, 4.0 * s2 * lam.powi(3))
        }
        _ => {
            let lam = 5f64.sqrt() / ell;
            (lam, 16.0 / 3.0 * s2 * lam.powi(5))
        }
    };
    for j in 0..order {
        let p = (order - j) as i32;
        let c = binomial(order, j) * lam.powi(p);
        f[(order - 1, j)] = -c;
        df_ell[(order - 1, j)] = c * p as f64;
    }
    let mut l = DMatrix::zeros(order, 1);
    l[(order - 1, 0)] = 1.0;
    let qc = DMatrix::from_element(1, 1, q);
    let mut h = DMatrix::zeros(1, order);
    h[(0, 0)] = 1.0;
    let w = &l * &qc * l.transpose();
    let dw_ell = &w * -((2 * order - 1) as f64);
    Continuous {
        df: vec![DMatrix::zeros(order, order), df_ell],
        dw: vec![w.clone(), dw_ell],
        f,
        l,
        qc,
        h,
    }
}

fn quasi_periodic_sde(hp: &HyperParams) -> Continuous {
    let base = matern_sde(2, hp);
    let omega = 2.0 * std::f64::consts::PI / hp.period.unwrap_or(1.0);
    let i2 = DMatrix::<f64>::identity(2, 2);
    let rot = DMatrix::from_row_slice(2, 2, &[0.0, -omega, omega, 0.0]);
    let f = base.f.kronecker(&i2) + i2.kronecker(&rot);
    let l = base.l.kronecker(&i2);
    let qc = base.qc.kronecker(&i2);
    let h = base.h.kronecker(&DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    let mut df: Vec<DMatrix<f64>> = base.df.iter().map(|d| d.kronecker(&i2)).collect();
    df.push(i2.kronecker(&(-rot)));
    let mut dw: Vec<DMatrix<f64>> = base.dw.iter().map(|d| d.kronecker(&i2)).collect();
    dw.push(DMatrix::zeros(4, 4));
    Continuous { f, l, qc, h, df, dw }
}

fn stack(parts: Vec<Continuous>) -> Continuous {
    let d: usize = parts.iter().map(|p| p.f.nrows()).sum();
    let nl: usize = parts.iter().map(|p| p.l.ncols()).sum();
    let mut out = Continuous {
        f: DMatrix::zeros(d, d),
        l: DMatrix::zeros(d, nl),
        qc: DMatrix::zeros(nl, nl),
        h: DMatrix::zeros(1, d),
        df: Vec::new(),
        dw: Vec::new(),
    };
    let (mut o, mut ol) = (0, 0);
    for p in parts {
        let (k, kl) = (p.f.nrows(), p.l.ncols());
        out.f.view_mut((o, o), (k, k)).copy_from(&p.f);
        out.l.view_mut((o, ol), (k, kl)).copy_from(&p.l);
        out.qc.view_mut((ol, ol), (kl, kl)).copy_from(&p.qc);
        out.h.view_mut((0, o), (1, k)).copy_from(&p.h);
        for (df, dw) in p.df.iter().zip(&p.dw) {
            let mut big_f = DMatrix::zeros(d, d);
            big_f.view_mut((o, o), (k, k)).copy_from(df);
            let mut big_w = DMatrix::zeros(d, d);
            big_w.view_mut((o, o), (k, k)).copy_from(dw);
            out.df.push(big_f);
            out.dw.push(big_w);
        }
        o += k;
        ol += kl;
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Converts a temporal kernel to its state-space form and discretizes it over `dt`.
pub fn to_state_space(spec: &KernelSpec, dt: f64) -> Result<DiscreteSde> {
    check_temporal(spec)?;
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::input(format!("time step must be finite and >= 0, got {dt}")));
    }
    let c = continuous(spec)?;
    let w = &c.l * &c.qc * c.l.transpose();
    let pinf = solve_lyapunov(&c.f, &w)?;
    let d = c.f.nrows();
    let (a, q) = if dt == 0.0 {
        (DMatrix::identity(d, d), DMatrix::zeros(d, d))
    } else {
        let a = (&c.f * dt).exp();
        let q = symmetrized(&pinf - &a * &pinf * a.transpose());
        (a, q)
    };
    Ok(DiscreteSde { sde: LtiSde { f: c.f, l: c.l, qc: c.qc, h: c.h, pinf }, a, q })
}

/// Discretization plus derivatives with respect to the kernel's log-parameters.
#[derive(Debug, Clone)]
pub(crate) struct DiscreteGrad {
    pub a: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub pinf: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub da: Vec<DMatrix<f64>>,
    pub dq: Vec<DMatrix<f64>>,
    pub dpinf: Vec<DMatrix<f64>>,
}

pub(crate) fn discretize_with_grad(spec: &KernelSpec, dt: f64) -> Result<DiscreteGrad> {
    let base = to_state_space(spec, dt)?;
    let c = continuous(spec)?;
    let d = c.f.nrows();
    let DiscreteSde { sde, a, q } = base;
    let pinf = sde.pinf;
    let mut da = Vec::with_capacity(c.df.len());
    let mut dq = Vec::with_capacity(c.df.len());
    let mut dpinf = Vec::with_capacity(c.df.len());
    for (df, dw) in c.df.iter().zip(&c.dw) {
        // F dP + dP Fᵀ + (dF P + P dFᵀ + dW) = 0
        let rhs = df * &pinf + &pinf * df.transpose() + dw;
        let dp = solve_lyapunov(&c.f, &rhs)?;
        let dai = if dt == 0.0 {
            DMatrix::zeros(d, d)
        } else {
            // Fréchet derivative of expm via the block-triangular identity.
            let mut blk = DMatrix::zeros(2 * d, 2 * d);
            blk.view_mut((0, 0), (d, d)).copy_from(&(&c.f * dt));
            blk.view_mut((d, d), (d, d)).copy_from(&(&c.f * dt));
            blk.view_mut((0, d), (d, d)).copy_from(&(df * dt));
            blk.exp().view((0, d), (d, d)).into_owned()
        };
        let dqi = if dt == 0.0 {
            DMatrix::zeros(d, d)
        } else {
            symmetrized(
                &dp - &dai * &pinf * a.transpose() - &a * &dp * a.transpose() - &a * &pinf * dai.transpose(),
            )
        };
        da.push(dai);
        dq.push(dqi);
        dpinf.push(dp);
    }
    Ok(DiscreteGrad { a, q, pinf, h: sde.h, da, dq, dpinf })
}
