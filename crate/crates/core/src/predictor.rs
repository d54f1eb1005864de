//! Least-squares behavioral predictor `g = H^+ b(u_f)`, `y_f = Y_f g`, with the
//! data-computable error bounds on `g` and `y_f`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, SeededRng, StateSpace};
use crate::page::{self, BehavioralData, RecentTrajectory};

/// Predictor data that does not depend on the candidate future input.
#[derive(Debug, Clone)]
pub struct PredictorState {
    data: BehavioralData,
    recent: RecentTrajectory,
    h_pinv: DMatrix<f64>,
    sigma_min_h: f64,
    y_f_norm: f64,
    y_p_norm: f64,
}

impl PredictorState {
    pub fn data(&self) -> &BehavioralData {
        &self.data
    }
    pub fn recent(&self) -> &RecentTrajectory {
        &self.recent
    }
    pub fn h_pinv(&self) -> &DMatrix<f64> {
        &self.h_pinv
    }
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min_h
    }
    /// Spectral norm of `Y_f`.
    pub fn y_f_norm(&self) -> f64 {
        self.y_f_norm
    }
    pub fn y_p_norm(&self) -> f64 {
        self.y_p_norm
    }
    pub fn delta(&self) -> f64 {
        self.data.delta
    }
    pub fn n_future_inputs(&self) -> usize {
        self.data.m * self.data.l_f
    }
    pub fn n_future_outputs(&self) -> usize {
        self.data.p * self.data.l_f
    }

    /// `b(u_f) = [u_p; y_p; u_f]`.
    pub fn b_hat(&self, u_f: &DVector<f64>) -> DVector<f64> {
        linalg::vstack_vec(&[&self.recent.u_p, &self.recent.y_p, u_f])
    }

    /// `K1 = Y_f H^+`.
    pub fn k1(&self) -> DMatrix<f64> {
        &self.data.y_f * &self.h_pinv
    }

    /// Columns of `K1` acting on `u_f`.
    pub fn k2(&self) -> DMatrix<f64> {
        let k1 = self.k1();
        let nu = self.n_future_inputs();
        k1.columns(k1.ncols() - nu, nu).into_owned()
    }

    pub fn q(&self) -> DMatrix<f64> {
        self.recent.q_or_identity(self.n_future_outputs())
    }
    pub fn r(&self) -> DMatrix<f64> {
        self.recent.r_or_identity(self.n_future_inputs())
    }
    pub fn r_f(&self) -> DVector<f64> {
        self.recent.reference_or_zero(self.n_future_outputs())
    }

    /// Same data, a different recent window.
    pub fn with_recent(&self, recent: RecentTrajectory) -> Result<Self> {
        recent.validate_for(&self.data)?;
        Ok(Self { recent, ..self.clone() })
    }

    /// Regulation cost `|y - r_f|_Q^2 + |u_f|_R^2` of a predicted output.
    pub fn cost(&self, y_f: &DVector<f64>, u_f: &DVector<f64>) -> f64 {
        let e = y_f - self.r_f();
        linalg::quad_form(&self.q(), &e) + linalg::quad_form(&self.r(), u_f)
    }
}

/// Output of [`predict`] for one candidate future input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub g_hat: DVector<f64>,
    pub y_f_hat: DVector<f64>,
    pub c_uf: f64,
    pub g_ball_radius: f64,
    pub y_f_error_bound: f64,
    /// Small-noise condition holds and the system is single-output.
    pub certified: bool,
}

pub fn build_predictor(data: BehavioralData, recent: RecentTrajectory) -> Result<PredictorState> {
    recent.validate_for(&data)?;
    let h_pinv = linalg::pseudo_inverse(&data.h, linalg::PINV_TOL);
    let sigma_min_h = linalg::sigma_min(&data.h);
    let y_f_norm = linalg::spectral_norm(&data.y_f);
    let y_p_norm = linalg::spectral_norm(&data.y_p);
    Ok(PredictorState {
        data,
        recent,
        h_pinv,
        sigma_min_h,
        y_f_norm,
        y_p_norm,
    })
}

/// `2 / sigma_min * (sqrt(l_p) + l_h |g|)`; infinite when `sigma_min = 0`.
pub fn bound_factor(sigma_min: f64, l_p: usize, l_h: usize, g_norm: f64) -> f64 {
    if sigma_min <= 0.0 {
        return f64::INFINITY;
    }
    2.0 / sigma_min * ((l_p as f64).sqrt() + l_h as f64 * g_norm)
}

/// `a * delta` with the convention `inf * 0 = 0`.
pub(crate) fn times_delta(a: f64, delta: f64) -> f64 {
    if delta == 0.0 {
        0.0
    } else {
        a * delta
    }
}

pub fn predict(state: &PredictorState, u_f: &DVector<f64>) -> Result<Prediction> {
    let nu = state.n_future_inputs();
    if u_f.len() != nu {
        return Err(Error::dim("future input u_f", nu, u_f.len()));
    }
    let d = &state.data;
    let g_hat = &state.h_pinv * state.b_hat(u_f);
    let y_f_hat = &d.y_f * &g_hat;
    let g_norm = g_hat.norm();
    let c_uf = bound_factor(state.sigma_min_h, d.l_p, d.l_h, g_norm);
    let g_ball_radius = times_delta(c_uf, d.delta);
    let y_f_error_bound = times_delta(c_uf * state.y_f_norm + d.l_h as f64 * (g_norm + c_uf), d.delta);
    Ok(Prediction {
        g_hat,
        y_f_hat,
        c_uf,
        g_ball_radius,
        y_f_error_bound,
        certified: d.p == 1 && check_small_noise(state, d.delta),
    })
}

/// `delta < sigma_min(H) / (2 l_h)`.
pub fn check_small_noise(state: &PredictorState, delta: f64) -> bool {
    delta < state.sigma_min_h / (2.0 * state.data.l_h as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankReport {
    pub sigma_min_clean: f64,
    pub full_row_rank: bool,
}

/// Builds the noiseless stacked matrix for `l_p` from a fresh historical
/// experiment (`4L + 1` blocks, unit-variance inputs) and reports its
/// smallest singular value and numerical full-row-rankness.
pub fn verify_rank_phenomena(sys: &StateSpace, l: usize, l_p: usize, seed: u64) -> Result<RankReport> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let traj = lti::generate_historical(sys, l, 4 * l + 1, 1.0, &mut rng)?;
    let data = page::behavioral_from_signals(traj.inputs(), traj.outputs(), l_p, l - l_p, 0.0)?;
    Ok(RankReport {
        sigma_min_clean: linalg::sigma_min(&data.h),
        full_row_rank: linalg::is_full_row_rank(&data.h, linalg::RANK_TOL),
    })
}
