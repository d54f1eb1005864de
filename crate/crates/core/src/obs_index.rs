//! Data-driven observability-index identification and the amplitude-scaling
//! heuristic for deciding whether the noiseless stacked matrix is full rank.

use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, StateSpace};
use crate::page;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObsIndexReport {
    /// `None` when no `k <= L - 1` triggered the stopping rule, or it
    /// triggered already at `k = 1`.
    pub l_o: Option<usize>,
    pub sigma_min_by_k: Vec<(usize, f64)>,
    pub threshold_used: f64,
}

impl ObsIndexReport {
    pub fn is_conclusive(&self) -> bool {
        self.l_o.is_some()
    }
}

/// Grows `l_p = k` from 1 and stops at the first `k` with
/// `sigma_min(H_k) <= l_h * delta`, returning `l_o = k - 1`. A relative floor
/// of [`linalg::RANK_TOL`] on `sigma_min / sigma_max` also counts as rank
/// deficient so that noiseless data stops on round-off.
pub fn identify_observability_index(
    u_page: &DMatrix<f64>,
    y_page: &DMatrix<f64>,
    m: usize,
    p: usize,
    delta: f64,
) -> Result<ObsIndexReport> {
    if m == 0 || u_page.nrows() % m != 0 {
        return Err(Error::InvalidArgument("input Page rows must be a multiple of m".into()));
    }
    let l = u_page.nrows() / m;
    if l < 2 {
        return Err(Error::InvalidArgument("block length must be at least 2".into()));
    }
    let l_h = u_page.ncols();
    let threshold = l_h as f64 * delta;
    let mut trace = Vec::new();
    let mut l_o = None;
    for k in 1..l {
        let data = page::split_historical(u_page, y_page, m, p, k, delta)?;
        let s = linalg::singular_values(&data.h);
        let smin = if data.h.nrows() > data.h.ncols() { 0.0 } else { s.last().copied().unwrap_or(0.0) };
        let smax = s.first().copied().unwrap_or(0.0);
        trace.push((k, smin));
        if smin <= threshold || smin <= linalg::RANK_TOL * smax {
            l_o = (k > 1).then_some(k - 1);
            break;
        }
    }
    Ok(ObsIndexReport {
        l_o,
        sigma_min_by_k: trace,
        threshold_used: threshold,
    })
}

/// Fits `sigma ~ b * alpha` through the origin and accepts when the relative
/// residual is below `linearity_tol` and `b > 0`.
pub fn scaling_heuristic(points: &[(f64, f64)], linearity_tol: f64) -> Result<bool> {
    let mut alphas: Vec<f64> = points.iter().map(|p| p.0).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    if alphas.len() < 3 {
        return Err(Error::InvalidArgument("scaling heuristic needs at least 3 distinct alphas".into()));
    }
    let saa: f64 = points.iter().map(|(a, _)| a * a).sum();
    let sas: f64 = points.iter().map(|(a, s)| a * s).sum();
    let slope = sas / saa;
    let res: f64 = points.iter().map(|(a, s)| (s - slope * a).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = points.iter().map(|(_, s)| s * s).sum::<f64>().sqrt();
    if scale == 0.0 {
        return Ok(false);
    }
    Ok(slope > 0.0 && res / scale < linearity_tol)
}

/// `(alpha, sigma_min(H(alpha)))` for experiments replayed from rest with the
/// scaled input `alpha * u` and fresh bounded noise.
pub fn sigma_min_vs_alpha<R: Rng + ?Sized>(
    sys: &StateSpace,
    u: &DMatrix<f64>,
    alphas: &[f64],
    l_p: usize,
    l_f: usize,
    delta: f64,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    alphas
        .iter()
        .map(|&a| {
            let ua = u * a;
            let y = lti::simulate(sys, &nalgebra::DVector::zeros(sys.n_states()), &ua)?;
            let y = lti::add_noise_with(&y, delta, rng);
            let data = page::behavioral_from_signals(&ua, &y, l_p, l_f, delta)?;
            Ok((a, linalg::sigma_min(&data.h)))
        })
        .collect()
}
