//! Per-output decomposition of multi-output data and safe minmax regulation
//! with output boxes tightened by the certified prediction-error radii.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::page::{self, RecentTrajectory};
use crate::predictor::{build_predictor, check_small_noise, predict, PredictorState};
use crate::qp;
use crate::robust::{inner_worst_case, perturbed_gains, InnerSolution, SolverOptions, TraceEntry};

/// Recent window and weights for all outputs. Each subsystem uses the last
/// `l_p^i` samples of the window.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoRecent {
    /// `m x T_r` past inputs.
    pub u: DMatrix<f64>,
    /// `p x T_r` past (noisy) outputs.
    pub y: DMatrix<f64>,
    /// Per-output references, `l_f` each; zero when unset.
    pub r_f: Option<Vec<DVector<f64>>>,
    /// Per-output weights, `l_f x l_f` each; identity when unset.
    pub q: Option<Vec<DMatrix<f64>>>,
    /// Shared input weight, `m l_f x m l_f`; identity when unset.
    pub r: Option<DMatrix<f64>>,
}

/// One single-output predictor per output channel, sharing the input data.
#[derive(Debug, Clone)]
pub struct SubsystemBundle {
    subsystems: Vec<PredictorState>,
    m: usize,
    l_f: usize,
}

impl SubsystemBundle {
    pub fn len(&self) -> usize {
        self.subsystems.len()
    }
    pub fn is_empty(&self) -> bool {
        self.subsystems.is_empty()
    }
    pub fn subsystem(&self, i: usize) -> &PredictorState {
        &self.subsystems[i]
    }
    pub fn subsystems(&self) -> &[PredictorState] {
        &self.subsystems
    }
    pub fn l_f(&self) -> usize {
        self.l_f
    }
    pub fn n_future_inputs(&self) -> usize {
        self.m * self.l_f
    }
    pub fn r(&self) -> DMatrix<f64> {
        self.subsystems[0].r()
    }

    /// Assumption 4 on every subsystem.
    pub fn small_noise_ok(&self) -> bool {
        self.subsystems.iter().all(|s| check_small_noise(s, s.delta()))
    }

    /// Nominal predicted outputs, one `l_f` vector per output.
    pub fn predict(&self, u_f: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        self.subsystems.iter().map(|s| Ok(predict(s, u_f)?.y_f_hat)).collect()
    }

    /// Nominal cost `sum_i |y^i - r^i|_{Q^i}^2 + |u_f|_R^2`.
    pub fn nominal_cost(&self, u_f: &DVector<f64>) -> Result<f64> {
        let mut c = linalg::quad_form(&self.r(), u_f);
        for s in &self.subsystems {
            let y = predict(s, u_f)?.y_f_hat;
            c += linalg::quad_form(&s.q(), &(y - s.r_f()));
        }
        Ok(c)
    }
}

/// Builds one single-output behavioral dataset per output from the raw
/// signals, each with its own `L^i = l_p^i + l_f`.
pub fn decompose(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    l_p: &[usize],
    l_f: usize,
    delta: f64,
    recent: &MimoRecent,
) -> Result<SubsystemBundle> {
    let p = y.nrows();
    let m = u.nrows();
    if l_p.len() != p {
        return Err(Error::dim("per-output l_p", p, l_p.len()));
    }
    if y.ncols() != u.ncols() {
        return Err(Error::dim("output samples", u.ncols(), y.ncols()));
    }
    if recent.u.nrows() != m || recent.y.nrows() != p || recent.u.ncols() != recent.y.ncols() {
        return Err(Error::InvalidArgument("recent window must be m x T_r and p x T_r".into()));
    }
    let mut subsystems = Vec::with_capacity(p);
    for i in 0..p {
        let lp = l_p[i];
        let t_r = recent.u.ncols();
        if t_r < lp {
            return Err(Error::TooShort { needed: lp, got: t_r });
        }
        let yi = y.rows(i, 1).into_owned();
        let data = page::behavioral_from_signals(u, &yi, lp, l_f, delta)?;
        let ur = recent.u.columns(t_r - lp, lp).into_owned();
        let yr = recent.y.view((i, t_r - lp), (1, lp)).into_owned();
        let mut rec = page::split_recent(&ur, &yr, lp)?;
        if let Some(r_f) = &recent.r_f {
            rec = rec.with_reference(r_f.get(i).cloned().ok_or(Error::dim("per-output references", p, r_f.len()))?);
        }
        let q = match &recent.q {
            Some(q) => q.get(i).cloned().ok_or(Error::dim("per-output weights", p, q.len()))?,
            None => DMatrix::identity(l_f, l_f),
        };
        let r = recent.r.clone().unwrap_or_else(|| DMatrix::identity(m * l_f, m * l_f));
        rec = RecentTrajectory { q: Some(q), r: Some(r), ..rec };
        subsystems.push(build_predictor(data, rec)?);
    }
    Ok(SubsystemBundle { subsystems, m, l_f })
}

/// Certified radius of the prediction error of output `i` at `u_f`.
pub fn output_error_radius(bundle: &SubsystemBundle, i: usize, u_f: &DVector<f64>) -> Result<f64> {
    Ok(predict(bundle.subsystem(i), u_f)?.y_f_error_bound)
}

fn all_radii(bundle: &SubsystemBundle, u_f: &DVector<f64>) -> Result<Vec<f64>> {
    (0..bundle.len()).map(|i| output_error_radius(bundle, i, u_f)).collect()
}

/// Elementwise bounds on the future outputs (per output, `l_f` each) and on
/// the stacked future input. Infinite entries are unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraint {
    pub y_minus: Vec<DVector<f64>>,
    pub y_plus: Vec<DVector<f64>>,
    pub u_minus: DVector<f64>,
    pub u_plus: DVector<f64>,
}

impl BoxConstraint {
    pub fn unbounded(p: usize, l_f: usize, n_inputs: usize) -> Self {
        Self {
            y_minus: vec![DVector::from_element(l_f, f64::NEG_INFINITY); p],
            y_plus: vec![DVector::from_element(l_f, f64::INFINITY); p],
            u_minus: DVector::from_element(n_inputs, f64::NEG_INFINITY),
            u_plus: DVector::from_element(n_inputs, f64::INFINITY),
        }
    }

    fn validate(&self, p: usize, l_f: usize, nu: usize) -> Result<()> {
        if self.y_minus.len() != p || self.y_plus.len() != p {
            return Err(Error::dim("output box count", p, self.y_minus.len().min(self.y_plus.len())));
        }
        for (lo, hi) in self.y_minus.iter().zip(&self.y_plus) {
            if lo.len() != l_f || hi.len() != l_f {
                return Err(Error::dim("output box length", l_f, lo.len().min(hi.len())));
            }
            if lo.iter().zip(hi.iter()).any(|(a, b)| a > b || a.is_nan() || b.is_nan()) {
                return Err(Error::InvalidArgument("output box has y_minus > y_plus".into()));
            }
        }
        if self.u_minus.len() != nu || self.u_plus.len() != nu {
            return Err(Error::dim("input box length", nu, self.u_minus.len().min(self.u_plus.len())));
        }
        if self.u_minus.iter().zip(self.u_plus.iter()).any(|(a, b)| a > b || a.is_nan() || b.is_nan()) {
            return Err(Error::InvalidArgument("input box has u_minus > u_plus".into()));
        }
        Ok(())
    }
}

/// `[y_minus^i + r_i, y_plus^i - r_i]` per output; crossed bounds are
/// infeasible.
pub fn tighten_box(bx: &BoxConstraint, radii: &[f64]) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    if radii.len() != bx.y_minus.len() {
        return Err(Error::dim("radii", bx.y_minus.len(), radii.len()));
    }
    if radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::InvalidArgument("radii must be >= 0".into()));
    }
    let lo: Vec<_> = bx.y_minus.iter().zip(radii).map(|(v, r)| v.add_scalar(*r)).collect();
    let hi: Vec<_> = bx.y_plus.iter().zip(radii).map(|(v, r)| v.add_scalar(-r)).collect();
    for (i, (l, h)) in lo.iter().zip(&hi).enumerate() {
        if let Some(t) = (0..l.len()).find(|&t| l[t] > h[t]) {
            return Err(Error::Infeasible(format!(
                "tightened bounds of output {i} cross at step {t}: [{}, {}]",
                l[t], h[t]
            )));
        }
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SddmcResult {
    pub u_check: DVector<f64>,
    pub c_worst: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Radii used in the constraints of the last QP.
    pub radii: Vec<f64>,
    /// Radii evaluated at `u_check`.
    pub radii_at_solution: Vec<f64>,
    /// Per output and step: distance of the error ball around the prediction
    /// from the nearest finite original bound (`+inf` if unbounded).
    pub margins: Vec<DVector<f64>>,
    /// Assumption 4 on every subsystem, the radii used cover the radii at the
    /// solution, and every margin is nonnegative.
    pub certified: bool,
    pub trace: Vec<TraceEntry>,
}

type Gains = (DMatrix<f64>, DMatrix<f64>, DVector<f64>);

fn nominal_gains(s: &PredictorState) -> Gains {
    let b0 = s.b_hat(&DVector::zeros(s.n_future_inputs()));
    (s.k1(), s.k2(), b0)
}

/// `min sum_i |K1 b0 + K2 u - r|_Q^2 + |u|_R^2` over the input box and the
/// nominal predictions inside `[lo, hi]`.
fn constrained_step(
    bundle: &SubsystemBundle,
    objective: &[Gains],
    bx: &BoxConstraint,
    lo: &[DVector<f64>],
    hi: &[DVector<f64>],
    tol: f64,
) -> Result<DVector<f64>> {
    let nu = bundle.n_future_inputs();
    let mut g = bundle.r();
    let mut a = DVector::zeros(nu);
    for (s, (k1, k2, b0)) in bundle.subsystems.iter().zip(objective) {
        let q = s.q();
        g += k2.transpose() * &q * k2;
        a += k2.transpose() * &q * (k1 * b0 - s.r_f());
    }
    let mut cons = qp::Constraints::none(nu);
    for k in 0..nu {
        let e = DVector::from_fn(nu, |j, _| if j == k { 1.0 } else { 0.0 });
        if bx.u_minus[k].is_finite() {
            cons.push(&e, bx.u_minus[k]);
        }
        if bx.u_plus[k].is_finite() {
            cons.push(&-&e, -bx.u_plus[k]);
        }
    }
    for (i, s) in bundle.subsystems.iter().enumerate() {
        let (k1, k2, b0) = nominal_gains(s);
        let free = k1 * b0;
        for t in 0..bundle.l_f {
            let row = k2.row(t).transpose();
            if lo[i][t].is_finite() {
                cons.push(&row, lo[i][t] - free[t]);
            }
            if hi[i][t].is_finite() {
                cons.push(&-&row, free[t] - hi[i][t]);
            }
        }
    }
    Ok(qp::solve(&(g * 2.0), &(a * 2.0), &cons, tol)?.x)
}

fn inner_all(bundle: &SubsystemBundle, u: &DVector<f64>, opts: &SolverOptions) -> Result<(Vec<InnerSolution>, f64)> {
    let inners = bundle
        .subsystems
        .iter()
        .map(|s| inner_worst_case(s, u, opts))
        .collect::<Result<Vec<_>>>()?;
    let c = inners.iter().map(|s| s.output_cost).sum::<f64>() + linalg::quad_form(&bundle.r(), u);
    Ok((inners, c))
}

fn margins(
    bundle: &SubsystemBundle,
    bx: &BoxConstraint,
    u: &DVector<f64>,
    radii: &[f64],
) -> Result<Vec<DVector<f64>>> {
    let preds = bundle.predict(u)?;
    Ok(preds
        .iter()
        .enumerate()
        .map(|(i, y)| {
            DVector::from_fn(y.len(), |t, _| {
                let below = y[t] - radii[i] - bx.y_minus[i][t];
                let above = bx.y_plus[i][t] - y[t] - radii[i];
                let below = if bx.y_minus[i][t].is_finite() { below } else { f64::INFINITY };
                let above = if bx.y_plus[i][t].is_finite() { above } else { f64::INFINITY };
                below.min(above)
            })
        })
        .collect())
}

fn elementwise_max(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x = x.max(*y);
    }
}

/// Flags a geometric blow-up of `|u|`: the per-round growth ratio stays above
/// `1 + MIN_EXCESS` while its excess over 1 stops shrinking.
#[derive(Default)]
struct GrowthMonitor {
    last_norm: Option<f64>,
    last_excess: Option<f64>,
    streak: usize,
}

impl GrowthMonitor {
    const MIN_EXCESS: f64 = 0.1;
    const STALL: f64 = 0.9;
    const ROUNDS: usize = 3;

    fn push(&mut self, norm: f64) -> bool {
        let prev = self.last_norm.replace(norm);
        let Some(prev) = prev.filter(|&p| p > 0.0) else {
            return false;
        };
        let excess = norm / prev - 1.0;
        let stalled = self
            .last_excess
            .replace(excess)
            .is_some_and(|e| excess > Self::MIN_EXCESS && excess > Self::STALL * e);
        self.streak = if stalled { self.streak + 1 } else { 0 };
        self.streak >= Self::ROUNDS || !norm.is_finite()
    }
}

/// Alternating minmax with output boxes. The radii in the constraints are the
/// running maximum of the radii at every iterate, and convergence also
/// requires the radii at the final input to be covered.
pub fn sddmc_solve(bundle: &SubsystemBundle, bx: &BoxConstraint, opts: &SolverOptions) -> Result<SddmcResult> {
    if bundle.is_empty() {
        return Err(Error::InvalidArgument("no subsystems".into()));
    }
    let nu = bundle.n_future_inputs();
    bx.validate(bundle.len(), bundle.l_f, nu)?;
    let qp_tol = 1e-12;
    let nominal: Vec<Gains> = bundle.subsystems.iter().map(nominal_gains).collect();
    let unbounded = BoxConstraint::unbounded(bundle.len(), bundle.l_f, nu);
    let free: Vec<_> = unbounded.y_minus.clone();
    let free_hi: Vec<_> = unbounded.y_plus.clone();
    let u_free = constrained_step(bundle, &nominal, &unbounded, &free, &free_hi, qp_tol)?;

    let mut radii = all_radii(bundle, &u_free)?;
    let (lo, hi) = tighten_box(bx, &radii)?;
    let mut u = constrained_step(bundle, &nominal, bx, &lo, &hi, qp_tol)?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut growth = GrowthMonitor::default();
    for k in 1..=opts.max_iters {
        iterations = k;
        if growth.push(u.norm()) {
            return Err(Error::Infeasible(format!(
                "output error radii grow with the input without bound (|u| = {:.3e} after {} rounds)",
                u.norm(),
                k - 1
            )));
        }
        let (inners, c) = inner_all(bundle, &u, opts)?;
        trace.push(TraceEntry { u_f: u.clone(), c_worst: c });
        elementwise_max(&mut radii, &all_radii(bundle, &u)?);
        let gains = bundle
            .subsystems
            .iter()
            .zip(&inners)
            .map(|(s, inner)| perturbed_gains(s, &inner.perturbation))
            .collect::<Result<Vec<_>>>()?;
        let (lo, hi) = tighten_box(bx, &radii)?;
        let next = constrained_step(bundle, &gains, bx, &lo, &hi, qp_tol)?;
        let change = (&next - &u).norm();
        u = next;
        if change < opts.term_tol {
            let at = all_radii(bundle, &u)?;
            if at.iter().zip(&radii).all(|(a, r)| a <= r) {
                converged = true;
                break;
            }
            elementwise_max(&mut radii, &at);
        }
    }

    let (_, c_worst) = inner_all(bundle, &u, opts)?;
    trace.push(TraceEntry { u_f: u.clone(), c_worst });
    let radii_at_solution = all_radii(bundle, &u)?;
    let margins = margins(bundle, bx, &u, &radii_at_solution)?;
    let covered = radii_at_solution.iter().zip(&radii).all(|(a, r)| a <= r);
    let feasible = margins.iter().all(|m| m.iter().all(|&v| v >= -1e-9));
    Ok(SddmcResult {
        u_check: u,
        c_worst,
        iterations,
        converged,
        radii,
        radii_at_solution,
        margins,
        certified: bundle.small_noise_ok() && covered && feasible,
        trace,
    })
}

/// Certainty-equivalent constrained input: nominal predictor treated as exact
/// (zero radii).
pub fn nominal_constrained_input(bundle: &SubsystemBundle, bx: &BoxConstraint) -> Result<DVector<f64>> {
    bx.validate(bundle.len(), bundle.l_f, bundle.n_future_inputs())?;
    let nominal: Vec<Gains> = bundle.subsystems.iter().map(nominal_gains).collect();
    constrained_step(bundle, &nominal, bx, &bx.y_minus, &bx.y_plus, 1e-12)
}
