//! Seeded Monte Carlo runs of the two benchmark problems and the CSV writer.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{self, seeded_rng, StateSpace};
use crate::mimo::{self, BoxConstraint, MimoRecent, SubsystemBundle};
use crate::obs_index::identify_observability_index;
use crate::page::{self, RecentTrajectory};
use crate::predictor::{build_predictor, check_small_noise, PredictorState};
use crate::presets;
use crate::robust::{self, SolverOptions};

pub const CSV_HEADER: [&str; 8] = [
    "delta",
    "seed",
    "c_check",
    "c_star",
    "c_worst",
    "rel_subopt",
    "iterations",
    "assumption4_ok",
];

pub const DEFAULT_DELTAS: [f64; 5] = [1e-4, 1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "siso", alias = "siso-eq18")]
    Siso,
    #[serde(rename = "room-temp")]
    RoomTemp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub deltas: Vec<f64>,
    pub trials: usize,
    /// Trial `k` uses seed `seed_base + k` for its noise and multi-start.
    pub seed_base: u64,
    /// Seed of the historical input sequence, shared by every trial.
    pub data_seed: u64,
    /// Noise level at which the observability indices are identified once
    /// per run; `None` picks the preset's own level.
    pub identification_delta: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Siso,
            deltas: DEFAULT_DELTAS.to_vec(),
            trials: 50,
            seed_base: 0,
            data_seed: 1,
            identification_delta: None,
            solver: SolverOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn identification_delta(&self) -> f64 {
        self.identification_delta.unwrap_or(match self.preset {
            Preset::Siso => 1e-3,
            Preset::RoomTemp => 1e-2,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidArgument("deltas must be a nonempty list of finite values > 0".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidArgument("trials must be >= 1".into()));
        }
        if self.identification_delta.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::InvalidArgument("identification_delta must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub delta: f64,
    pub seed: u64,
    /// True cost of the minmax input.
    pub c_check: f64,
    /// True cost of the clean-data optimum.
    pub c_star: f64,
    pub c_worst: f64,
    pub rel_subopt: f64,
    pub iterations: usize,
    pub assumption4_ok: bool,
    pub converged: bool,
    /// Suboptimality certificate, SISO only.
    pub certificate: Option<f64>,
    /// True `y_1(t) - 5` for `t = 1..4`, room preset only.
    pub constraint_margins: Option<Vec<f64>>,
    /// Whether the certainty-equivalent constrained input violated the
    /// output constraint on the true system, room preset only.
    pub comparator_violation: Option<bool>,
    /// Solver failure message; all numeric fields are NaN when set.
    pub failure: Option<String>,
}

impl TrialRecord {
    fn failed(delta: f64, seed: u64, err: &Error) -> Self {
        Self {
            delta,
            seed,
            c_check: f64::NAN,
            c_star: f64::NAN,
            c_worst: f64::NAN,
            rel_subopt: f64::NAN,
            iterations: 0,
            assumption4_ok: false,
            converged: false,
            certificate: None,
            constraint_margins: None,
            comparator_violation: None,
            failure: Some(err.to_string()),
        }
    }

    pub fn is_failed(&self) -> bool {
        self.failure.is_some()
    }

    /// Any true constraint margin below `-tol`.
    pub fn violates(&self, tol: f64) -> bool {
        self.constraint_margins.as_ref().is_some_and(|m| m.iter().any(|&v| v < -tol))
    }
}

/// `(c_check - c_star) / c_check`, zero when `c_check` is zero.
pub fn relative_suboptimality(c_check: f64, c_star: f64) -> f64 {
    if c_check > 0.0 {
        (c_check - c_star) / c_check
    } else {
        0.0
    }
}

/// Runs every `(delta, trial)` pair of the config in delta-major order.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    match cfg.preset {
        Preset::Siso => run_siso_experiment(cfg),
        Preset::RoomTemp => run_room_temp_experiment(cfg),
    }
}

pub fn write_csv<W: Write>(records: &[TrialRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in records {
        out.write_record([
            r.delta.to_string(),
            r.seed.to_string(),
            r.c_check.to_string(),
            r.c_star.to_string(),
            r.c_worst.to_string(),
            r.rel_subopt.to_string(),
            r.iterations.to_string(),
            r.assumption4_ok.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Errors that mean "no answer for this noise level" are recorded on the
/// trial; anything else aborts the run.
fn record_or_abort(delta: f64, seed: u64, res: Result<TrialRecord>) -> Result<TrialRecord> {
    match res {
        Ok(r) => Ok(r),
        Err(e @ (Error::Infeasible(_) | Error::NoFeasiblePoint(_) | Error::RankCollapse { .. } | Error::Degenerate(_))) => {
            Ok(TrialRecord::failed(delta, seed, &e))
        }
        Err(e) => Err(e),
    }
}

/// Identifies the index of every output channel separately on one noisy copy
/// of the historical outputs.
fn identify_per_output(history: &lti::Trajectory, l: usize, delta: f64, seed: u64) -> Result<Vec<usize>> {
    let y = lti::add_noise_with(history.outputs(), delta, &mut seeded_rng(seed));
    let up = page::page_matrix(history.inputs(), l)?;
    (0..y.nrows())
        .map(|i| {
            let yi = page::page_matrix(&y.rows(i, 1).into_owned(), l)?;
            identify_observability_index(&up, &yi, history.n_inputs(), 1, delta)?
                .l_o
                .ok_or_else(|| Error::Degenerate(format!("observability index of output {i} is inconclusive")))
        })
        .collect()
}

/// Historical data and identified past horizon of the SISO benchmark.
#[derive(Debug, Clone)]
pub struct SisoSetup {
    pub sys: StateSpace,
    pub history: lti::Trajectory,
    pub l_p: usize,
    pub l_f: usize,
    pub clean: PredictorState,
    /// Clean-data optimum and its true cost.
    pub u_star: DVector<f64>,
    pub c_star: f64,
    /// State at the start of the control horizon.
    pub x_start: DVector<f64>,
}

pub const SISO_BLOCK: usize = 8;
pub const SISO_BLOCKS: usize = 20;
pub const SISO_INPUT_STD: f64 = 2.0;
pub const SISO_HORIZON: usize = 3;

fn siso_recent(l_p: usize) -> Result<RecentTrajectory> {
    let n = presets::SISO_RECENT_U.len();
    if l_p > n {
        return Err(Error::TooShort { needed: l_p, got: n });
    }
    let u = DVector::from_row_slice(&presets::SISO_RECENT_U[n - l_p..]);
    let y = DVector::from_row_slice(&presets::SISO_RECENT_Y[n - l_p..]);
    Ok(RecentTrajectory::new(u, y).with_weights(
        DMatrix::identity(SISO_HORIZON, SISO_HORIZON),
        DMatrix::identity(SISO_HORIZON, SISO_HORIZON) * 10.0,
    ))
}

pub fn siso_setup(cfg: &ExperimentConfig) -> Result<SisoSetup> {
    let sys = presets::siso_benchmark();
    let history = lti::generate_historical(&sys, SISO_BLOCK, SISO_BLOCKS, SISO_INPUT_STD, &mut seeded_rng(cfg.data_seed))?;
    let l_p = identify_per_output(&history, SISO_BLOCK, cfg.identification_delta(), cfg.data_seed ^ 0x1d)?[0];
    let l_f = SISO_HORIZON;
    let clean_data = page::behavioral_from_signals(history.inputs(), history.outputs(), l_p, l_f, 0.0)?;
    let clean = build_predictor(clean_data, siso_recent(l_p)?)?;
    let u_star = robust::nominal_input(&clean)?;
    let x1 = presets::siso_recent_initial_state();
    let x_start = sys.propagate(&x1, &DMatrix::from_row_slice(1, 3, &presets::SISO_RECENT_U))?;
    let c_star = robust::true_cost(&sys, &x_start, &u_star, &clean.q(), &clean.r(), &clean.r_f())?;
    Ok(SisoSetup {
        sys,
        history,
        l_p,
        l_f,
        clean,
        u_star,
        c_star,
        x_start,
    })
}

/// Noisy predictor of one SISO trial: fresh noise on the historical outputs
/// and on the recent window.
pub fn siso_trial_state(setup: &SisoSetup, delta: f64, seed: u64) -> Result<PredictorState> {
    let mut rng = seeded_rng(seed);
    let y = lti::add_noise_with(setup.history.outputs(), delta, &mut rng);
    let data = page::behavioral_from_signals(setup.history.inputs(), &y, setup.l_p, setup.l_f, delta)?;
    let recent = setup.clean.recent();
    let noisy_recent = recent.with_y_p(lti::add_noise_vec(&recent.y_p, delta, &mut rng));
    build_predictor(data, noisy_recent)
}

fn siso_trial(setup: &SisoSetup, delta: f64, seed: u64, opts: &SolverOptions) -> Result<TrialRecord> {
    let state = siso_trial_state(setup, delta, seed)?;
    let res = robust::alternate_solve(&state, &SolverOptions { seed, ..*opts })?;
    let c_check = robust::true_cost(&setup.sys, &setup.x_start, &res.u_check, &state.q(), &state.r(), &state.r_f())?;
    let certificate = robust::suboptimality_certificate(&state, delta).ok().map(|c| c.c3);
    Ok(TrialRecord {
        delta,
        seed,
        c_check,
        c_star: setup.c_star,
        c_worst: res.c_worst,
        rel_subopt: relative_suboptimality(c_check, setup.c_star),
        iterations: res.iterations,
        assumption4_ok: check_small_noise(&state, delta),
        converged: res.converged,
        certificate,
        constraint_margins: None,
        comparator_violation: None,
        failure: None,
    })
}

pub fn run_siso_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let setup = siso_setup(cfg)?;
    let mut out = Vec::with_capacity(cfg.deltas.len() * cfg.trials);
    for &delta in &cfg.deltas {
        for k in 0..cfg.trials as u64 {
            let seed = cfg.seed_base + k;
            out.push(record_or_abort(delta, seed, siso_trial(&setup, delta, seed, &cfg.solver))?);
        }
    }
    Ok(out)
}

pub const ROOM_BLOCK: usize = 8;
pub const ROOM_BLOCKS: usize = 35;
pub const ROOM_INPUT_STD: f64 = 1e3;
pub const ROOM_HORIZON: usize = 5;
pub const ROOM_LOWER_BOUND: f64 = 5.0;
pub const ROOM_REFERENCE: f64 = 10.0;

/// Output 1 at least [`ROOM_LOWER_BOUND`] for `t = 1..4`, everything else free.
pub fn room_box() -> BoxConstraint {
    let mut bx = BoxConstraint::unbounded(2, ROOM_HORIZON, ROOM_HORIZON);
    for t in 1..ROOM_HORIZON {
        bx.y_minus[0][t] = ROOM_LOWER_BOUND;
    }
    bx
}

fn room_recent(y: DMatrix<f64>) -> MimoRecent {
    MimoRecent {
        u: DMatrix::zeros(1, y.ncols()),
        y,
        r_f: Some(vec![DVector::from_element(ROOM_HORIZON, ROOM_REFERENCE); 2]),
        q: None,
        r: Some(DMatrix::identity(ROOM_HORIZON, ROOM_HORIZON) * 10.0),
    }
}

#[derive(Debug, Clone)]
pub struct RoomSetup {
    pub sys: StateSpace,
    pub history: lti::Trajectory,
    /// Identified per-output past horizons used by every trial.
    pub l_p: Vec<usize>,
    pub u_star: DVector<f64>,
    pub c_star: f64,
}

/// True cost of a room-preset input from rest, outputs stacked time-major.
pub fn room_true_cost(sys: &StateSpace, u_f: &DVector<f64>) -> Result<f64> {
    let n = 2 * ROOM_HORIZON;
    robust::true_cost(
        sys,
        &DVector::zeros(3),
        u_f,
        &DMatrix::identity(n, n),
        &(DMatrix::identity(ROOM_HORIZON, ROOM_HORIZON) * 10.0),
        &DVector::from_element(n, ROOM_REFERENCE),
    )
}

/// True `y_1(t) - bound` for `t = 1..4` from rest.
pub fn room_true_margins(sys: &StateSpace, u_f: &DVector<f64>) -> Result<Vec<f64>> {
    let y = robust::true_outputs(sys, &DVector::zeros(3), u_f)?;
    Ok((1..ROOM_HORIZON).map(|t| y[2 * t] - ROOM_LOWER_BOUND).collect())
}

pub fn room_setup(cfg: &ExperimentConfig) -> Result<RoomSetup> {
    let sys = presets::room_temperature();
    let history = lti::generate_historical(&sys, ROOM_BLOCK, ROOM_BLOCKS, ROOM_INPUT_STD, &mut seeded_rng(cfg.data_seed))?;
    let l_p = identify_per_output(&history, ROOM_BLOCK, cfg.identification_delta(), cfg.data_seed ^ 0x1d)?;
    // Clean optimum from exact per-output predictors at the true indices.
    let l_true = (0..2)
        .map(|i| {
            sys.output_subsystem(i)?
                .observability_index()
                .ok_or_else(|| Error::Degenerate(format!("output {i} is not observable")))
        })
        .collect::<Result<Vec<_>>>()?;
    let t_r = *l_true.iter().max().unwrap_or(&1);
    let clean = mimo::decompose(
        history.inputs(),
        history.outputs(),
        &l_true,
        ROOM_HORIZON,
        0.0,
        &room_recent(DMatrix::zeros(2, t_r)),
    )?;
    let u_star = mimo::nominal_constrained_input(&clean, &room_box())?;
    let c_star = room_true_cost(&sys, &u_star)?;
    Ok(RoomSetup {
        sys,
        history,
        l_p,
        u_star,
        c_star,
    })
}

/// Noisy per-output predictors of one room trial: fresh noise on the
/// historical outputs and on the recent window at rest.
pub fn room_trial_bundle(setup: &RoomSetup, delta: f64, seed: u64) -> Result<SubsystemBundle> {
    let mut rng = seeded_rng(seed);
    let y = lti::add_noise_with(setup.history.outputs(), delta, &mut rng);
    let t_r = *setup.l_p.iter().max().unwrap_or(&1);
    let recent = lti::add_noise_with(&DMatrix::zeros(2, t_r), delta, &mut rng);
    mimo::decompose(setup.history.inputs(), &y, &setup.l_p, ROOM_HORIZON, delta, &room_recent(recent))
}

fn room_trial(setup: &RoomSetup, delta: f64, seed: u64, opts: &SolverOptions) -> Result<TrialRecord> {
    let bundle = room_trial_bundle(setup, delta, seed)?;
    let bx = room_box();
    let res = mimo::sddmc_solve(&bundle, &bx, &SolverOptions { seed, ..*opts })?;
    let c_check = room_true_cost(&setup.sys, &res.u_check)?;
    let comparator = mimo::nominal_constrained_input(&bundle, &bx)?;
    let comparator_violation = room_true_margins(&setup.sys, &comparator)?.iter().any(|&m| m < -1e-9);
    Ok(TrialRecord {
        delta,
        seed,
        c_check,
        c_star: setup.c_star,
        c_worst: res.c_worst,
        rel_subopt: relative_suboptimality(c_check, setup.c_star),
        iterations: res.iterations,
        assumption4_ok: bundle.small_noise_ok(),
        converged: res.converged,
        certificate: None,
        constraint_margins: Some(room_true_margins(&setup.sys, &res.u_check)?),
        comparator_violation: Some(comparator_violation),
        failure: None,
    })
}

pub fn run_room_temp_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let setup = room_setup(cfg)?;
    let mut out = Vec::with_capacity(cfg.deltas.len() * cfg.trials);
    for &delta in &cfg.deltas {
        for k in 0..cfg.trials as u64 {
            let seed = cfg.seed_base + k;
            out.push(record_or_abort(delta, seed, room_trial(&setup, delta, seed, &cfg.solver))?);
        }
    }
    Ok(out)
}
