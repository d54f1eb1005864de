//! JSON problem files for the subcommands.

use beheco::experiment::{ROOM_BLOCK, SISO_BLOCK};
use beheco::lti::{self, matrix_from_rows, seeded_rng, StateSpace};
use beheco::mimo::{BoxConstraint, MimoRecent};
use beheco::page::RecentTrajectory;
use beheco::robust::SolverOptions;
use beheco::{presets, Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Named(String),
    Matrices(StateSpace),
}

impl SystemSpec {
    pub fn build(&self) -> Result<StateSpace> {
        match self {
            SystemSpec::Named(n) if n == "siso" || n == "siso-eq18" => Ok(presets::siso_benchmark()),
            SystemSpec::Named(n) if n == "room-temp" => Ok(presets::room_temperature()),
            SystemSpec::Named(n) => Err(Error::InvalidArgument(format!("unknown system preset {n:?}"))),
            SystemSpec::Matrices(s) => Ok(s.clone()),
        }
    }
}

/// Historical data: measured signals as given, or a simulated experiment with
/// noise added at the problem's `delta`.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Signals {
        /// One row per input channel.
        u: Vec<Vec<f64>>,
        /// One row per output channel.
        y: Vec<Vec<f64>>,
    },
    Simulate {
        system: SystemSpec,
        block: Option<usize>,
        blocks: usize,
        input_std: f64,
        #[serde(default)]
        seed: u64,
        /// Seed of the measurement noise; `seed + 1` when unset.
        noise_seed: Option<u64>,
    },
}

impl DataSource {
    /// `(u, y)` as `m x T` and `p x T`.
    pub fn signals(&self, delta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        match self {
            DataSource::Signals { u, y } => {
                let u = matrix_from_rows(u, "input signals")?;
                let y = matrix_from_rows(y, "output signals")?;
                if u.ncols() != y.ncols() {
                    return Err(Error::InvalidArgument("input and output signals differ in length".into()));
                }
                Ok((u, y))
            }
            DataSource::Simulate {
                system,
                block,
                blocks,
                input_std,
                seed,
                noise_seed,
            } => {
                let sys = system.build()?;
                let l = block.unwrap_or(match system {
                    SystemSpec::Named(n) if n == "room-temp" => ROOM_BLOCK,
                    _ => SISO_BLOCK,
                });
                let traj = lti::generate_historical(&sys, l, *blocks, *input_std, &mut seeded_rng(*seed))?;
                let y = lti::add_noise_with(traj.outputs(), delta, &mut seeded_rng(noise_seed.unwrap_or(seed + 1)));
                Ok((traj.inputs().clone(), y))
            }
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct IdentifyProblem {
    pub data: DataSource,
    pub delta: f64,
    /// Page block length `L`.
    pub block: usize,
    /// Identify each output channel separately.
    #[serde(default)]
    pub per_output: bool,
}

#[derive(Debug, Deserialize)]
pub struct Window {
    pub u_p: Vec<f64>,
    pub y_p: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
pub struct Weights {
    pub q: Option<Vec<Vec<f64>>>,
    pub r: Option<Vec<Vec<f64>>>,
    pub r_f: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
pub struct PredictProblem {
    pub data: DataSource,
    pub delta: f64,
    pub l_p: usize,
    pub l_f: usize,
    pub recent: Window,
    pub u_f: Vec<f64>,
}

#[derive(Debug, Deserialize)]
pub struct RegulateProblem {
    pub data: DataSource,
    pub delta: f64,
    pub l_p: usize,
    pub l_f: usize,
    pub recent: Window,
    #[serde(default)]
    pub weights: Weights,
    #[serde(default)]
    pub solver: SolverOptions,
}

pub fn recent_trajectory(w: &Window, weights: &Weights) -> Result<RecentTrajectory> {
    let mut rec = RecentTrajectory::new(DVector::from_vec(w.u_p.clone()), DVector::from_vec(w.y_p.clone()));
    if let Some(q) = &weights.q {
        rec.q = Some(matrix_from_rows(q, "weight Q")?);
    }
    if let Some(r) = &weights.r {
        rec.r = Some(matrix_from_rows(r, "weight R")?);
    }
    if let Some(r_f) = &weights.r_f {
        rec = rec.with_reference(DVector::from_vec(r_f.clone()));
    }
    Ok(rec)
}

#[derive(Debug, Deserialize)]
pub struct MimoWindow {
    /// `m x T_r`.
    pub u: Vec<Vec<f64>>,
    /// `p x T_r`.
    pub y: Vec<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
pub struct MimoWeights {
    /// One `l_f x l_f` matrix per output.
    pub q: Option<Vec<Vec<Vec<f64>>>>,
    pub r: Option<Vec<Vec<f64>>>,
    /// One `l_f` reference per output.
    pub r_f: Option<Vec<Vec<f64>>>,
}

/// Bounds with `null` for "unbounded".
#[derive(Debug, Deserialize)]
pub struct Bounds {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

impl Bounds {
    fn vectors(&self, n: usize, what: &'static str) -> Result<(DVector<f64>, DVector<f64>)> {
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                got: self.lower.len().min(self.upper.len()),
            });
        }
        let lo = DVector::from_iterator(n, self.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)));
        let hi = DVector::from_iterator(n, self.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)));
        Ok((lo, hi))
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct Constraints {
    pub u_box: Option<Bounds>,
    /// One entry per output, `l_f` bounds each.
    pub y_box: Option<Vec<Bounds>>,
}

impl Constraints {
    pub fn to_box(&self, p: usize, l_f: usize, nu: usize) -> Result<BoxConstraint> {
        let mut bx = BoxConstraint::unbounded(p, l_f, nu);
        if let Some(u) = &self.u_box {
            (bx.u_minus, bx.u_plus) = u.vectors(nu, "input box")?;
        }
        if let Some(ys) = &self.y_box {
            if ys.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "output boxes",
                    expected: p,
                    got: ys.len(),
                });
            }
            for (i, b) in ys.iter().enumerate() {
                (bx.y_minus[i], bx.y_plus[i]) = b.vectors(l_f, "output box")?;
            }
        }
        Ok(bx)
    }
}

#[derive(Debug, Deserialize)]
pub struct SddmcProblem {
    pub data: DataSource,
    pub delta: f64,
    /// Past horizon per output.
    pub l_p: Vec<usize>,
    pub l_f: usize,
    pub recent: MimoWindow,
    #[serde(default)]
    pub weights: MimoWeights,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub solver: SolverOptions,
}

pub fn mimo_recent(w: &MimoWindow, weights: &MimoWeights) -> Result<MimoRecent> {
    let vecs = |v: &Vec<Vec<f64>>| v.iter().map(|x| DVector::from_vec(x.clone())).collect::<Vec<_>>();
    Ok(MimoRecent {
        u: matrix_from_rows(&w.u, "recent inputs")?,
        y: matrix_from_rows(&w.y, "recent outputs")?,
        r_f: weights.r_f.as_ref().map(vecs),
        q: weights
            .q
            .as_ref()
            .map(|qs| qs.iter().map(|q| matrix_from_rows(q, "weight Q")).collect::<Result<Vec<_>>>())
            .transpose()?,
        r: weights.r.as_ref().map(|r| matrix_from_rows(r, "weight R")).transpose()?,
    })
}
