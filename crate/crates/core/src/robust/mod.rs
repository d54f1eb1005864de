//! Minmax robust regulation: worst-case noise realization for a fixed input,
//! closed-form input update against it, the alternating loop, and the
//! suboptimality certificate.

mod certificate;
mod inner;
mod outer;

pub use certificate::{suboptimality_certificate, Certificate};
pub use inner::{inner_objective, inner_worst_case, is_inner_feasible};
pub use outer::{outer_objective, outer_step, perturbed_gains};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, StateSpace};
use crate::page::BehavioralData;
use crate::predictor::PredictorState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Inner multi-start count, the zero-perturbation start included.
    pub starts: usize,
    pub max_ascent_iters: usize,
    pub grad_tol: f64,
    pub feas_tol: f64,
    /// Alternation stops when successive inputs differ by less than this.
    pub term_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_ascent_iters: 100,
            grad_tol: 1e-8,
            feas_tol: 1e-8,
            term_tol: 1e-4,
            max_iters: 50,
            seed: 0,
        }
    }
}

/// Noise-realization variables of the inner problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub d_y_p: DMatrix<f64>,
    pub d_y_f: DMatrix<f64>,
    pub d_yp: DVector<f64>,
}

impl Perturbation {
    pub fn zero(data: &BehavioralData) -> Self {
        Self {
            d_y_p: DMatrix::zeros(data.y_p.nrows(), data.l_h),
            d_y_f: DMatrix::zeros(data.y_f.nrows(), data.l_h),
            d_yp: DVector::zeros(data.y_p.nrows()),
        }
    }

    /// Largest entry in absolute value over all three parts.
    pub fn max_abs(&self) -> f64 {
        linalg::max_abs(&self.d_y_p)
            .max(linalg::max_abs(&self.d_y_f))
            .max(self.d_yp.amax())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub u_f: DVector<f64>,
    pub perturbation: Perturbation,
    pub g_tilde: DVector<f64>,
    pub y_f_tilde: DVector<f64>,
    pub c_worst: f64,
    /// The `|y - r_f|_Q^2` part of `c_worst`.
    pub output_cost: f64,
    /// Objective at the zero-perturbation point `g = g_hat(u_f)`.
    pub start_value: f64,
    pub starts_feasible: usize,
}

/// Minimizer of `|k1b0 + K2 u - r_f|_Q^2 + |u|_R^2`.
pub(crate) fn quadratic_minimizer(
    k1b0: &DVector<f64>,
    k2: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let normal = k2.transpose() * q * k2 + r;
    let rhs = -(k2.transpose() * q * (k1b0 - r_f));
    linalg::spd_solve(&normal, &rhs, "K2'QK2 + R")
}

/// Certainty-equivalent input `-(K2'QK2 + R)^-1 K2'Q(K1 b(0) - r_f)`.
pub fn nominal_input(state: &PredictorState) -> Result<DVector<f64>> {
    let b0 = state.b_hat(&DVector::zeros(state.n_future_inputs()));
    quadratic_minimizer(&(state.k1() * b0), &state.k2(), &state.q(), &state.r(), &state.r_f())
}

/// Cost of applying `u_f` (stacked, `m * l_f`) to the true system from state
/// `x_start`: `|y - r_f|_Q^2 + |u_f|_R^2`.
pub fn true_cost(
    sys: &StateSpace,
    x_start: &DVector<f64>,
    u_f: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    r_f: &DVector<f64>,
) -> Result<f64> {
    let y = true_outputs(sys, x_start, u_f)?;
    if y.len() != r_f.len() || q.nrows() != y.len() {
        return Err(Error::dim("reference r_f", y.len(), r_f.len()));
    }
    let e = y - r_f;
    Ok(linalg::quad_form(q, &e) + linalg::quad_form(r, u_f))
}

/// Clean future outputs, stacked time-major.
pub fn true_outputs(sys: &StateSpace, x_start: &DVector<f64>, u_f: &DVector<f64>) -> Result<DVector<f64>> {
    let m = sys.n_inputs();
    if u_f.len() % m != 0 {
        return Err(Error::dim("future input u_f", m * (u_f.len() / m + 1), u_f.len()));
    }
    let u = DMatrix::from_column_slice(m, u_f.len() / m, u_f.as_slice());
    let y = lti::simulate(sys, x_start, &u)?;
    Ok(DVector::from_column_slice(y.as_slice()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub u_f: DVector<f64>,
    pub c_worst: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternateResult {
    pub u_check: DVector<f64>,
    pub c_worst: f64,
    /// Number of inner/outer rounds performed.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub inner: InnerSolution,
}

/// Alternates the inner worst case and the outer input update, starting from
/// the certainty-equivalent input.
pub fn alternate_solve(state: &PredictorState, opts: &SolverOptions) -> Result<AlternateResult> {
    let mut u = nominal_input(state)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iters {
        iterations = k;
        let inner = inner_worst_case(state, &u, opts)?;
        trace.push(TraceEntry {
            u_f: u.clone(),
            c_worst: inner.c_worst,
        });
        let next = outer_step(state, &inner)?;
        let change = (&next - &u).norm();
        u = next;
        if change < opts.term_tol {
            converged = true;
            break;
        }
    }
    let mut inner = inner_worst_case(state, &u, opts)?;
    if !converged {
        let best = trace
            .iter()
            .min_by(|a, b| a.c_worst.total_cmp(&b.c_worst))
            .filter(|b| b.c_worst < inner.c_worst)
            .cloned();
        if let Some(b) = best {
            u = b.u_f;
            inner = inner_worst_case(state, &u, opts)?;
        }
    }
    trace.push(TraceEntry {
        u_f: u.clone(),
        c_worst: inner.c_worst,
    });
    Ok(AlternateResult {
        u_check: u,
        c_worst: inner.c_worst,
        iterations,
        converged,
        trace,
        inner,
    })
}
