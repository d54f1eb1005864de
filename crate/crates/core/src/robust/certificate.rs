//! Data-computable bound on the true-cost gap between the minmax input and
//! the clean-data optimum.
//!
//! Weights enter as `Q = q I` with arbitrary positive definite `R` and
//! reference `r_f`: the normal matrix becomes `K2'K2 + R/q`, its inverse is
//! bounded through `lambda_min(R/q)`, and the reference adds `|r_f|` terms.
//! With `q = 1`, `R = I`, `r_f = 0` every expression reduces to the plain
//! unit-weight chain.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::predictor::{check_small_noise, PredictorState};

use super::nominal_input;

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    /// Bound on `|u_hat* - u*|`.
    pub f: f64,
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    /// Bound on `c(u_check) - c(u*)`.
    pub c3: f64,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub u_hat_star: DVector<f64>,
    pub g_hat_star_norm: f64,
    pub certified: bool,
}

pub fn suboptimality_certificate(state: &PredictorState, delta: f64) -> Result<Certificate> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise bound must be >= 0, got {delta}")));
    }
    let d = state.data();
    let q = state.q();
    let ny = q.nrows();
    let qs = q[(0, 0)];
    if (&q - DMatrix::identity(ny, ny) * qs).amax() > 1e-12 * qs.abs().max(1.0) || qs <= 0.0 {
        return Err(Error::Unsupported("certificate needs an output weight of the form q I with q > 0".into()));
    }
    let w = state.r() / qs;
    let w_min = linalg::min_eigenvalue(&w);
    let r_f = state.r_f();

    let k1 = state.k1();
    let k2 = state.k2();
    let u_hat_star = nominal_input(state)?;
    let b0 = state.b_hat(&DVector::zeros(state.n_future_inputs()));
    let g_norm = (state.h_pinv() * state.b_hat(&u_hat_star)).norm();
    if g_norm == 0.0 {
        return Err(Error::Degenerate("g_hat(u_hat*) = 0, eta is undefined".into()));
    }

    let pinv = linalg::spectral_norm(state.h_pinv());
    let lh = d.l_h as f64;
    let sqrt_lp = ((d.p * d.l_p) as f64).sqrt();
    let y_norm = state.y_p_norm().max(state.y_f_norm());
    let k21 = k2.transpose() * &k1;
    let normal_inv = linalg::spd_inverse(&(k2.transpose() * &k2 + &w), "K2'K2 + R/q")?;
    let v = k2.transpose() * (&k1 * &b0 - &r_f);

    let f1 = 2.0 * lh * pinv * (1.0 + 4.0 * y_norm * pinv) * delta;
    let f2 = (2.0 * linalg::spectral_norm(&k1) + f1) * f1;
    let f3 = sqrt_lp * linalg::spectral_norm(&k21) * delta + (b0.norm() + sqrt_lp * delta) * f2 + r_f.norm() * f1;
    let f = linalg::spectral_norm(&normal_inv) * f3 + (v.norm() + f3) * f2 / (w_min * w_min);
    let eta = 1.0 + pinv * f / g_norm;

    let sigma = state.sigma_min();
    let c1 = if delta == 0.0 {
        0.0
    } else {
        2.0 / sigma * (sqrt_lp + eta * lh * g_norm) * delta
    };
    let c2 = (state.y_f_norm() + lh * delta) * c1 + eta * lh * g_norm * delta;
    let c3 = qs * (8.0 * c2 * c2 + 4.0 * (state.y_f_norm() * g_norm * eta + r_f.norm()) * c2);

    Ok(Certificate {
        f1,
        f2,
        f3,
        f,
        eta,
        c1,
        c2,
        c3,
        k1,
        k2,
        u_hat_star,
        g_hat_star_norm: g_norm,
        certified: d.p == 1 && check_small_noise(state, delta),
    })
}
