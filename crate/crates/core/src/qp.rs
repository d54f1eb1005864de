//! Dense strictly convex QP by the Goldfarb-Idnani dual active-set method:
//!
//! ```text
//! min 0.5 x'Gx + a'x   s.t.   c_j'x >= d_j
//! ```
//!
//! The projected matrices are recomputed from scratch at every step, which is
//! plenty for the handful of variables used here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Indices of the constraints active at the solution.
    pub active: Vec<usize>,
    /// Multipliers of the active constraints, same order as `active`.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
}

/// Inequality constraints `c_j' x >= d_j`, one row of `c` per constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl Constraints {
    pub fn none(n: usize) -> Self {
        Self {
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn push(&mut self, row: &DVector<f64>, rhs: f64) {
        let n = self.c.ncols();
        let k = self.c.nrows();
        let mut c = DMatrix::zeros(k + 1, n);
        c.rows_mut(0, k).copy_from(&self.c);
        c.set_row(k, &row.transpose());
        self.c = c;
        self.d = self.d.push(rhs);
    }

    /// Most negative slack `c_j'x - d_j`, or `+inf` without constraints.
    pub fn min_slack(&self, x: &DVector<f64>) -> f64 {
        (&self.c * x - &self.d).iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn solve(g: &DMatrix<f64>, a: &DVector<f64>, cons: &Constraints, tol: f64) -> Result<QpSolution> {
    let n = a.len();
    if g.shape() != (n, n) {
        return Err(Error::dim("QP Hessian", n, g.nrows()));
    }
    if cons.c.ncols() != n {
        return Err(Error::dim("QP constraint columns", n, cons.c.ncols()));
    }
    let sym = (g + g.transpose()) * 0.5;
    let chol = sym.clone().cholesky().ok_or(Error::NotPositiveDefinite("QP Hessian"))?;
    let g_inv = chol.inverse();

    let mut x = -(&g_inv * a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let max_iter = 50 * (cons.len() + n) + 100;

    for iter in 0..max_iter {
        let xn = x.norm();
        let scale = |j: usize| 1.0 + cons.c.row(j).norm() * (1.0 + xn) + cons.d[j].abs();
        let slack = &cons.c * &x - &cons.d;
        let violated = (0..cons.len())
            .filter(|j| !active.contains(j))
            .filter(|&j| slack[j] < -tol * scale(j))
            .min_by(|&i, &j| (slack[i] / scale(i)).total_cmp(&(slack[j] / scale(j))));
        let Some(p) = violated else {
            let objective = 0.5 * (x.transpose() * &sym * &x)[(0, 0)] + a.dot(&x);
            return Ok(QpSolution {
                x,
                objective,
                active,
                multipliers: u,
                iterations: iter,
            });
        };
        let np = cons.c.row(p).transpose();
        let mut u_p = 0.0;

        loop {
            let (z, r) = step_directions(&g_inv, &cons.c, &active, &np);
            // Dual step: largest move keeping active multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 0.0 {
                    let t = u[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }
            let s_p = np.dot(&x) - cons.d[p];
            let zn = z.dot(&np);
            let t2 = if z.norm() <= 1e-12 * (1.0 + np.norm()) || zn <= 0.0 {
                f64::INFINITY
            } else {
                -s_p / zn
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Infeasible(format!("constraint {p} cannot be satisfied with the active set")));
            }
            for (k, uk) in u.iter_mut().enumerate() {
                *uk -= t * r[k];
            }
            u_p += t;
            if t2.is_finite() {
                x += &z * t;
            }
            if t == t2 {
                active.push(p);
                u.push(u_p);
                break;
            }
            let k = drop.expect("finite dual step has a blocking index");
            active.remove(k);
            u.remove(k);
        }
    }
    Err(Error::Infeasible("active-set iteration limit reached".into()))
}

/// `z = H n` (primal direction) and `r = N* n` (dual direction) for the
/// current active set.
fn step_directions(
    g_inv: &DMatrix<f64>,
    c: &DMatrix<f64>,
    active: &[usize],
    np: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    if active.is_empty() {
        return (g_inv * np, DVector::zeros(0));
    }
    let nmat = DMatrix::from_columns(&active.iter().map(|&j| c.row(j).transpose()).collect::<Vec<_>>());
    let gn = g_inv * &nmat;
    let m = nmat.transpose() * &gn;
    let rhs = gn.transpose() * np;
    let r = m
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .unwrap_or_else(|| crate::linalg::pseudo_inverse(&m, 1e-14) * &rhs);
    let z = g_inv * np - &gn * &r;
    (z, r)
}
