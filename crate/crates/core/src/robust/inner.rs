//! Inner maximization over the noise realization for a fixed future input.
//!
//! The input rows of the stacked constraint carry no noise, so `g = g0 + N z`
//! with `N` an orthonormal null-space basis of `[U_p; U_f]`. For fixed `g` the
//! worst `Delta_Yf` is a sign pattern, and the `Delta_Yp` / `Delta_yp` pair is
//! feasible iff `|Y_p g - y_p|_j <= delta (1 + |g|_1)` for every row. What is
//! left is a projected ascent over `z` in a ball, with the row conditions
//! linearized through `sign(g)` (an inner approximation, since
//! `sign(g)'g' <= |g'|_1` for every `g'`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{InnerSolution, Perturbation, SolverOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::seeded_rng;
use crate::predictor::{bound_factor, PredictorState};
use crate::qp;

/// Largest `n = p * l_f` for which a non-diagonal `Q` gets exhaustive vertex
/// enumeration.
const VERTEX_ENUM_MAX: usize = 12;
const PROJ_ITERS: usize = 60;

struct Halfspace {
    a: DVector<f64>,
    b: f64,
}

struct Problem<'a> {
    y_f: &'a DMatrix<f64>,
    y_p: &'a DMatrix<f64>,
    y_p_recent: &'a DVector<f64>,
    q: DMatrix<f64>,
    q_diag: bool,
    r_f: DVector<f64>,
    u_cost: f64,
    delta: f64,
    g_hat: DVector<f64>,
    g0: DVector<f64>,
    basis: DMatrix<f64>,
    rho_z: f64,
}

struct Point {
    z: DVector<f64>,
    g: DVector<f64>,
    y: DVector<f64>,
    s: DVector<f64>,
    value: f64,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Problem<'_> {
    fn g_of(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.g0 + &self.basis * z
    }

    /// Worst sign pattern for `y = a + w s` over `s` in `[-1, 1]^n`.
    fn worst_signs(&self, a: &DVector<f64>, w: f64) -> DVector<f64> {
        let n = a.len();
        if self.q_diag || w == 0.0 {
            return a.map(|v| if v < 0.0 { -1.0 } else { 1.0 });
        }
        let value = |s: &DVector<f64>| linalg::quad_form(&self.q, &(a + s * w));
        if n <= VERTEX_ENUM_MAX {
            let mut best = (f64::NEG_INFINITY, DVector::zeros(n));
            for mask in 0u32..(1 << n) {
                let s = DVector::from_fn(n, |i, _| if mask & (1 << i) != 0 { -1.0 } else { 1.0 });
                let v = value(&s);
                if v > best.0 {
                    best = (v, s);
                }
            }
            return best.1;
        }
        let mut s = (&self.q * a).map(|v| if v < 0.0 { -1.0 } else { 1.0 });
        let mut cur = value(&s);
        loop {
            let mut improved = false;
            for i in 0..n {
                s[i] = -s[i];
                let v = value(&s);
                if v > cur {
                    cur = v;
                    improved = true;
                } else {
                    s[i] = -s[i];
                }
            }
            if !improved {
                return s;
            }
        }
    }

    fn eval(&self, z: DVector<f64>) -> Point {
        let g = self.g_of(&z);
        let a = self.y_f * &g - &self.r_f;
        let w = self.delta * g.lp_norm(1);
        let s = self.worst_signs(&a, w);
        let y = a + &s * w;
        let value = linalg::quad_form(&self.q, &y) + self.u_cost;
        Point { z, g, y, s, value }
    }

    fn grad_z(&self, p: &Point) -> DVector<f64> {
        let qy = &self.q * &p.y;
        let sigma = p.g.map(sign);
        let grad_g = self.y_f.transpose() * &qy * 2.0 + sigma * (2.0 * self.delta * p.s.dot(&qy));
        self.basis.transpose() * grad_g
    }

    /// Largest violation of the row conditions `|c_j| <= delta (1 + |g|_1)`.
    fn row_violation(&self, g: &DVector<f64>) -> f64 {
        let c = self.y_p * g - self.y_p_recent;
        let cap = self.delta * (1.0 + g.lp_norm(1));
        c.amax() - cap
    }

    fn is_feasible(&self, p: &Point, tol: f64) -> bool {
        p.z.norm() <= self.rho_z * (1.0 + 1e-12) + tol && self.row_violation(&p.g) <= tol
    }

    /// Row conditions linearized through `sign(g(z_lin))`.
    fn halfspaces(&self, z_lin: &DVector<f64>) -> Vec<Halfspace> {
        let g = self.g_of(z_lin);
        let sigma = g.map(sign);
        let nt_sigma = self.basis.transpose() * &sigma * self.delta;
        let cap = self.delta * (1.0 + sigma.dot(&self.g0));
        let c0 = self.y_p * &self.g0 - self.y_p_recent;
        let ap = self.y_p * &self.basis;
        let mut out = Vec::with_capacity(2 * c0.len());
        for j in 0..c0.len() {
            let aj = ap.row(j).transpose();
            out.push(Halfspace {
                a: &aj - &nt_sigma,
                b: cap - c0[j],
            });
            out.push(Halfspace {
                a: -aj - &nt_sigma,
                b: cap + c0[j],
            });
        }
        out
    }

    fn project_ball(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = w.norm();
        if n > self.rho_z {
            w * (self.rho_z / n)
        } else {
            w.clone()
        }
    }

    /// Projection onto the ball intersected with `hs`. For a ball multiplier
    /// `lambda` the minimizer is the polyhedral projection of
    /// `w / (1 + lambda)`, whose norm is nonincreasing in `lambda`; the root
    /// is bracketed and the feasible end of the bracket returned. Falls back
    /// to `anchor` (assumed feasible) if the polyhedral step fails.
    fn project(&self, w: &DVector<f64>, hs: &[Halfspace], anchor: &DVector<f64>) -> DVector<f64> {
        let first = self.project_ball(w);
        if hs.iter().all(|h| h.a.dot(&first) <= h.b) {
            return first;
        }
        let n = w.len();
        let mut cons = qp::Constraints::none(n);
        for h in hs {
            cons.push(&-&h.a, -h.b);
        }
        let eye = DMatrix::identity(n, n);
        let poly = |lambda: f64| -> Option<DVector<f64>> {
            qp::solve(&eye, &(-w / (1.0 + lambda)), &cons, 1e-13).ok().map(|s| s.x)
        };
        let Some(z0) = poly(0.0) else { return anchor.clone() };
        let rho = self.rho_z;
        if z0.norm() <= rho {
            return z0;
        }
        let (mut lo, mut f_lo) = (0.0, z0.norm() - rho);
        let mut hi = 1.0;
        let (mut z_hi, mut f_hi) = loop {
            let Some(z) = poly(hi) else { return anchor.clone() };
            let f = z.norm() - rho;
            if f <= 0.0 {
                break (z, f);
            }
            if hi > 1e12 {
                return anchor.clone();
            }
            (lo, f_lo) = (hi, f);
            hi *= 4.0;
        };
        // Illinois false position on the norm.
        let mut side = 0;
        for _ in 0..PROJ_ITERS {
            if -f_hi <= 1e-12 * rho {
                break;
            }
            let mid = hi - f_hi * (hi - lo) / (f_hi - f_lo);
            let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
            let Some(z) = poly(mid) else { break };
            let f = z.norm() - rho;
            if f <= 0.0 {
                (hi, f_hi, z_hi) = (mid, f, z);
                if side == -1 {
                    f_lo *= 0.5;
                }
                side = -1;
            } else {
                (lo, f_lo) = (mid, f);
                if side == 1 {
                    f_hi *= 0.5;
                }
                side = 1;
            }
        }
        z_hi
    }

    /// Best effort at a feasible point near `z` when no feasible anchor is
    /// known: polyhedral projection followed by scaling into the ball.
    fn repair(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = z.len();
        let mut cons = qp::Constraints::none(n);
        for h in self.halfspaces(z) {
            cons.push(&-&h.a, -h.b);
        }
        match qp::solve(&DMatrix::identity(n, n), &-z, &cons, 1e-13) {
            Ok(s) => self.project_ball(&s.x),
            Err(_) => z.clone(),
        }
    }

    /// Projected gradient ascent with halving backtracking; only points that
    /// satisfy the exact constraints and improve the objective are accepted.
    fn ascend(&self, start: Point, opts: &SolverOptions) -> Point {
        let mut cur = start;
        for _ in 0..opts.max_ascent_iters {
            let grad = self.grad_z(&cur);
            let gn = grad.norm();
            if gn < opts.grad_tol {
                break;
            }
            let hs = self.halfspaces(&cur.z);
            let mut t = f64::max(1.0, 2.0 * self.rho_z / gn);
            let mut accepted = None;
            for _ in 0..40 {
                let cand = self.project(&(&cur.z + &grad * t), &hs, &cur.z);
                if (&cand - &cur.z).norm() <= 1e-15 * (1.0 + cur.z.norm()) {
                    break;
                }
                let p = self.eval(cand);
                if p.value > cur.value && self.is_feasible(&p, opts.feas_tol) {
                    accepted = Some(p);
                    break;
                }
                t *= 0.5;
            }
            match accepted {
                Some(p) => {
                    let gain = p.value - cur.value;
                    cur = p;
                    if gain <= 1e-13 * cur.value.abs() {
                        break;
                    }
                }
                None => break,
            }
        }
        cur
    }

    /// Noise realization attaining the objective at `g`.
    fn reconstruct(&self, p: &Point) -> Perturbation {
        let g1 = p.g.lp_norm(1);
        let sigma = p.g.map(sign);
        let d_y_f = DMatrix::from_fn(p.y.len(), p.g.len(), |i, k| self.delta * p.s[i] * sigma[k]);
        let c = self.y_p * &p.g - self.y_p_recent;
        let d_yp = c.map(|v| v.clamp(-self.delta, self.delta));
        let d_y_p = DMatrix::from_fn(c.len(), p.g.len(), |j, k| {
            if g1 > 0.0 {
                (d_yp[j] - c[j]) / g1 * sigma[k]
            } else {
                0.0
            }
        });
        Perturbation { d_y_p, d_y_f, d_yp }
    }
}

/// `|(Y_f + D_Yf) g - r_f|_Q^2 + |u_f|_R^2`.
pub fn inner_objective(state: &PredictorState, u_f: &DVector<f64>, g: &DVector<f64>, pert: &Perturbation) -> f64 {
    let y = (&state.data().y_f + &pert.d_y_f) * g;
    state.cost(&y, u_f)
}

/// Checks every constraint of the inner problem at `(g, pert)` within `tol`.
pub fn is_inner_feasible(
    state: &PredictorState,
    u_f: &DVector<f64>,
    g: &DVector<f64>,
    pert: &Perturbation,
    tol: f64,
) -> bool {
    let d = state.data();
    let delta = d.delta;
    if pert.max_abs() > delta + tol {
        return false;
    }
    let rec = state.recent();
    let res_up = &d.u_p * g - &rec.u_p;
    let res_uf = &d.u_f * g - u_f;
    let res_yp = (&d.y_p + &pert.d_y_p) * g - &rec.y_p - &pert.d_yp;
    let scale = 1.0 + g.norm() * (1.0 + linalg::max_abs(&d.h));
    if res_up.amax().max(res_uf.amax()).max(res_yp.amax()) > tol * scale {
        return false;
    }
    let g_hat = state.h_pinv() * state.b_hat(u_f);
    let radius = crate::predictor::times_delta(
        bound_factor(state.sigma_min(), d.l_p, d.l_h, g_hat.norm()),
        delta,
    );
    (g - g_hat).norm() <= radius * (1.0 + 1e-12) + tol
}

/// Multi-start local maximization of the inner problem at `u_f`. The
/// zero-perturbation point `g = g_hat(u_f)` is always among the starts.
pub fn inner_worst_case(state: &PredictorState, u_f: &DVector<f64>, opts: &SolverOptions) -> Result<InnerSolution> {
    let nu = state.n_future_inputs();
    if u_f.len() != nu {
        return Err(Error::dim("future input u_f", nu, u_f.len()));
    }
    let d = state.data();
    let delta = d.delta;
    let g_hat = state.h_pinv() * state.b_hat(u_f);
    let u_cost = linalg::quad_form(&state.r(), u_f);
    let q = state.q();
    let r_f = state.r_f();

    if delta == 0.0 {
        let y = &d.y_f * &g_hat;
        let output_cost = linalg::quad_form(&q, &(&y - &r_f));
        return Ok(InnerSolution {
            u_f: u_f.clone(),
            perturbation: Perturbation::zero(d),
            g_tilde: g_hat,
            y_f_tilde: y,
            c_worst: output_cost + u_cost,
            output_cost,
            start_value: output_cost + u_cost,
            starts_feasible: 1,
        });
    }
    if state.sigma_min() <= 0.0 {
        return Err(Error::RankCollapse { sigma_min: state.sigma_min() });
    }

    let u_rows = linalg::vstack(&[&d.u_p, &d.u_f]);
    let u_rhs = linalg::vstack_vec(&[&state.recent().u_p, u_f]);
    let g0 = &g_hat + linalg::pseudo_inverse(&u_rows, linalg::PINV_TOL) * (&u_rhs - &u_rows * &g_hat);
    let basis = linalg::null_space(&u_rows, linalg::RANK_TOL);
    let rho = bound_factor(state.sigma_min(), d.l_p, d.l_h, g_hat.norm()) * delta;
    let offset = (&g0 - &g_hat).norm_squared();
    if offset > rho * rho * (1.0 + 1e-12) {
        return Err(Error::NoFeasiblePoint("input rows cannot be matched inside the coefficient ball".into()));
    }
    let prob = Problem {
        y_f: &d.y_f,
        y_p: &d.y_p,
        y_p_recent: &state.recent().y_p,
        q_diag: linalg::is_diagonal(&q),
        q,
        r_f,
        u_cost,
        delta,
        g_hat,
        g0,
        basis,
        rho_z: (rho * rho - offset).max(0.0).sqrt(),
    };

    let dim = prob.basis.ncols();
    let zero = prob.eval(DVector::zeros(dim));
    let start_value = zero.value;
    let base = if prob.is_feasible(&zero, opts.feas_tol) {
        zero
    } else {
        let repaired = prob.eval(prob.repair(&zero.z));
        if !prob.is_feasible(&repaired, opts.feas_tol) {
            return Err(Error::NoFeasiblePoint(format!(
                "recent outputs are inconsistent with the data by {:.3e} beyond the noise bound",
                prob.row_violation(&prob.g_hat)
            )));
        }
        repaired
    };

    let mut starts = vec![prob.eval(base.z.clone())];
    if dim > 0 && opts.starts > 1 {
        let hs = prob.halfspaces(&base.z);
        let grad = prob.grad_z(&base);
        if grad.norm() > 0.0 {
            let w = &base.z + &grad * (prob.rho_z / grad.norm());
            starts.push(prob.eval(prob.project(&w, &hs, &base.z)));
        }
        let mut rng = seeded_rng(opts.seed);
        while starts.len() < opts.starts {
            let dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let radius = prob.rho_z * rng.random::<f64>().powf(1.0 / dim as f64);
            let w = &dir * (radius / dir.norm().max(f64::MIN_POSITIVE));
            starts.push(prob.eval(prob.project(&w, &hs, &base.z)));
        }
    }

    let mut feasible = 0;
    let mut best: Option<Point> = None;
    for s in starts {
        if !prob.is_feasible(&s, opts.feas_tol) {
            continue;
        }
        feasible += 1;
        let p = prob.ascend(s, opts);
        if best.as_ref().map_or(true, |b| p.value > b.value) {
            best = Some(p);
        }
    }
    let best = best.expect("the base start is feasible");
    let perturbation = prob.reconstruct(&best);
    let output_cost = best.value - prob.u_cost;
    Ok(InnerSolution {
        u_f: u_f.clone(),
        perturbation,
        g_tilde: best.g,
        y_f_tilde: best.y + &prob.r_f,
        c_worst: best.value,
        output_cost,
        start_value,
        starts_feasible: feasible,
    })
}
