//! Test-side oracles: random systems and brute-force solutions of the toy
//! minmax problems, computed without going through the solver internals.

#![allow(dead_code)]

use beheco::lti::{self, seeded_rng, StateSpace};
use beheco::page::{self, BehavioralData, RecentTrajectory};
use beheco::predictor::{build_predictor, PredictorState};
use beheco::presets;
use beheco::robust::Perturbation;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector<R: Rng>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random observable SISO system of order `n` with spectral radius `rho`.
pub fn random_siso<R: Rng>(n: usize, rho: f64, rng: &mut R) -> StateSpace {
    loop {
        let a = normal_matrix(n, n, rng);
        let radius = a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        if radius < 1e-3 {
            continue;
        }
        let sys = StateSpace::new(a * (rho / radius), normal_matrix(n, 1, rng), normal_matrix(1, n, rng), DMatrix::zeros(1, 1))
            .unwrap();
        let obs = sys.observability_matrix(n);
        let s = obs.clone().svd(false, false).singular_values;
        if sys.observability_index() == Some(n) && s.min() > 1e-3 * s.max() {
            return sys;
        }
    }
}

/// Plain SVD pseudo-inverse with a relative cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let cut = 1e-12 * svd.singular_values.max();
    svd.pseudo_inverse(cut).unwrap()
}

pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.min()
}

/// Orthonormal basis of `{v : m v = 0}` from the eigenvectors of `m'm`.
pub fn kernel(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.transpose() * m);
    let scale = eig.eigenvalues.amax().max(1.0);
    let cols: Vec<_> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    DMatrix::from_columns(&cols)
}

/// Every sign vector in `{-1, 1}^n`.
pub fn vertices(n: usize) -> Vec<DVector<f64>> {
    (0u32..1 << n)
        .map(|mask| DVector::from_fn(n, |i, _| if mask & (1 << i) != 0 { -1.0 } else { 1.0 }))
        .collect()
}

/// Single-input single-output toy with `l_p = l_f = 1`: the predictor and the
/// future input are random, the data matrix has `l_h` columns.
pub fn toy_instance(l_h: usize, delta: f64, seed: u64) -> (PredictorState, DVector<f64>) {
    let mut rng = seeded_rng(seed);
    let u_page = normal_matrix(2, l_h, &mut rng);
    let y_page = normal_matrix(2, l_h, &mut rng);
    let data = page::split_historical(&u_page, &y_page, 1, 1, 1, delta).unwrap();
    let recent = RecentTrajectory::new(normal_vector(1, &mut rng), normal_vector(1, &mut rng))
        .with_weights(DMatrix::identity(1, 1), DMatrix::identity(1, 1) * 0.5)
        .with_reference(normal_vector(1, &mut rng));
    let u_f = normal_vector(1, &mut rng);
    (build_predictor(data, recent).unwrap(), u_f)
}

struct ToyView<'a> {
    d: &'a BehavioralData,
    q: f64,
    r_f: f64,
    u_cost: f64,
    y_p_recent: f64,
    ys_f: Vec<DVector<f64>>,
    ys_p: Vec<DVector<f64>>,
}

impl ToyView<'_> {
    /// Worst objective over the `Delta_Yf` vertices if the `Delta_Yp`,
    /// `Delta_yp` pair can be chosen feasibly at `g`, else `None`.
    fn value(&self, g: &DVector<f64>) -> Option<f64> {
        let delta = self.d.delta;
        let c = (&self.d.y_p * g)[0] - self.y_p_recent;
        let (lo, hi) = self.ys_p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            let v = delta * s.dot(g);
            (lo.min(v), hi.max(v))
        });
        // c + Delta_Yp g must reach [-delta, delta].
        if c + hi < -delta - 1e-12 || c + lo > delta + 1e-12 {
            return None;
        }
        let y0 = (&self.d.y_f * g)[0];
        let worst = self
            .ys_f
            .iter()
            .map(|s| {
                let e = y0 + delta * s.dot(g) - self.r_f;
                self.q * e * e
            })
            .fold(f64::NEG_INFINITY, f64::max);
        Some(worst + self.u_cost)
    }
}

/// Brute-force maximum of the inner problem on a toy instance: dense grid over
/// the coefficient ball intersected with the input rows, then repeated local
/// grid refinement around the best cells.
pub fn brute_force_inner(state: &PredictorState, u_f: &DVector<f64>) -> f64 {
    let d = state.data();
    let rec = state.recent();
    let h = &d.h;
    let b = DVector::from_row_slice(&[rec.u_p[0], rec.y_p[0], u_f[0]]);
    let g_hat = pinv(h) * &b;
    let c = 2.0 / sigma_min(h) * ((d.l_p as f64).sqrt() + d.l_h as f64 * g_hat.norm());
    let rho = c * d.delta;
    let n = kernel(&nalgebra::stack![d.u_p; d.u_f]);
    let view = ToyView {
        d,
        q: state.q()[(0, 0)],
        r_f: state.r_f()[0],
        u_cost: state.r()[(0, 0)] * u_f[0] * u_f[0],
        y_p_recent: rec.y_p[0],
        ys_f: vertices(d.l_h),
        ys_p: vertices(d.l_h),
    };
    let dim = n.ncols();
    let eval = |z: &[f64]| -> Option<f64> {
        let z = DVector::from_column_slice(z);
        if z.norm() > rho {
            return None;
        }
        view.value(&(&g_hat + &n * z))
    };
    let grid = |center: &[f64], half: f64, steps: usize| -> Vec<(f64, Vec<f64>)> {
        let mut out = Vec::new();
        let axis: Vec<f64> = (0..=steps).map(|k| -half + 2.0 * half * k as f64 / steps as f64).collect();
        let mut idx = vec![0usize; dim];
        loop {
            let z: Vec<f64> = (0..dim).map(|i| center[i] + axis[idx[i]]).collect();
            if let Some(v) = eval(&z) {
                out.push((v, z));
            }
            let mut k = 0;
            while k < dim {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == dim {
                return out;
            }
        }
    };
    let (coarse, fine) = if dim == 1 { (20_000, 2_000) } else { (400, 80) };
    let mut pts = grid(&vec![0.0; dim], rho, coarse);
    let mut best = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut cell = 2.0 * rho / coarse as f64;
    for _ in 0..6 {
        pts.sort_by(|a, b| b.0.total_cmp(&a.0));
        let seeds: Vec<Vec<f64>> = pts.iter().take(8).map(|p| p.1.clone()).collect();
        let half = 2.0 * cell;
        pts = seeds.iter().flat_map(|s| grid(s, half, fine)).collect();
        best = pts.iter().map(|p| p.0).fold(best, f64::max);
        cell = 2.0 * half / fine as f64;
    }
    best
}

/// Outer objective on the perturbed toy data, evaluated from scratch.
pub fn toy_outer_objective(state: &PredictorState, pert: &Perturbation, u: f64) -> f64 {
    let d = state.data();
    let rec = state.recent();
    let h = nalgebra::stack![d.u_p; &d.y_p + &pert.d_y_p; d.u_f];
    let k = (&d.y_f + &pert.d_y_f) * pinv(&h);
    let b = DVector::from_row_slice(&[rec.u_p[0], rec.y_p[0] + pert.d_yp[0], u]);
    let e = (k * b)[0] - state.r_f()[0];
    state.q()[(0, 0)] * e * e + state.r()[(0, 0)] * u * u
}

/// Grid minimum of the toy outer objective over `u`, refined around the best
/// cell.
pub fn brute_force_outer(state: &PredictorState, pert: &Perturbation) -> f64 {
    let f = |u: f64| toy_outer_objective(state, pert, u);
    let (mut lo, mut hi) = (-1e3, 1e3);
    let mut best = f64::INFINITY;
    for _ in 0..8 {
        let steps = 10_000;
        let h = (hi - lo) / steps as f64;
        let (mut arg, mut val) = (lo, f64::INFINITY);
        for k in 0..=steps {
            let u = lo + h * k as f64;
            let v = f(u);
            if v < val {
                val = v;
                arg = u;
            }
        }
        best = best.min(val);
        lo = arg - 2.0 * h;
        hi = arg + 2.0 * h;
    }
    best
}

/// Clean and noisy predictors of the SISO benchmark on `L = 6` Page data
/// (`l_p = l_f = 3`) from 160 samples, the noisy one with a noisy recent
/// window; also returns the state at the start of the horizon.
pub fn siso_pair(delta: f64, seed: u64) -> (PredictorState, PredictorState, DVector<f64>) {
    let sys = presets::siso_benchmark();
    let traj = lti::generate_historical(&sys, 8, 20, 2.0, &mut seeded_rng(1)).unwrap();
    let mut rng = seeded_rng(seed);
    let y = lti::add_noise_with(traj.outputs(), delta, &mut rng);
    let recent = RecentTrajectory::new(
        DVector::from_row_slice(&presets::SISO_RECENT_U),
        DVector::from_row_slice(&presets::SISO_RECENT_Y),
    )
    .with_weights(DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 10.0);
    let noisy_recent = recent.with_y_p(lti::add_noise_vec(&recent.y_p, delta, &mut rng));
    let clean = page::behavioral_from_signals(traj.inputs(), traj.outputs(), 3, 3, 0.0).unwrap();
    let noisy = page::behavioral_from_signals(traj.inputs(), &y, 3, 3, delta).unwrap();
    let x1 = presets::siso_recent_initial_state();
    let x4 = sys
        .propagate(&x1, &DMatrix::from_row_slice(1, 3, &presets::SISO_RECENT_U))
        .unwrap();
    (
        build_predictor(clean, recent).unwrap(),
        build_predictor(noisy, noisy_recent).unwrap(),
        x4,
    )
}

pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}
