use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beheco::experiment::{self, ExperimentConfig};
use beheco::mimo;
use beheco::obs_index::identify_observability_index;
use beheco::page;
use beheco::predictor::{build_predictor, predict};
use beheco::robust::{self, suboptimality_certificate};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

mod problem;

use problem::*;

#[derive(Parser)]
#[command(name = "beheco", version, about = "Behavioral prediction and robust regulation from noisy data")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Io {
    /// JSON problem or experiment file.
    #[arg(long)]
    config: PathBuf,
    /// Output file (JSON, or CSV for sweep).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Observability index from historical data.
    Identify(Io),
    /// Output prediction with its certified error bound.
    Predict(Io),
    /// Minmax robust regulation.
    Regulate(Io),
    /// Safe minmax regulation with output and input boxes.
    Sddmc(Io),
    /// Seeded experiment over a noise grid, one CSV row per trial.
    Sweep(Io),
}

enum Failure {
    Infeasible(String),
    Error(String),
}

impl From<beheco::Error> for Failure {
    fn from(e: beheco::Error) -> Self {
        if e.is_infeasible() {
            Failure::Infeasible(e.to_string())
        } else {
            Failure::Error(e.to_string())
        }
    }
}

fn read<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Error(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Error(format!("{}: {e}", path.display())))
}

fn finite_or_null(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn identify(io: &Io) -> Result<(), Failure> {
    let p: IdentifyProblem = read(&io.config)?;
    let (u, y) = p.data.signals(p.delta)?;
    let up = page::page_matrix(&u, p.block)?;
    let report = if p.per_output {
        let reports = (0..y.nrows())
            .map(|i| {
                let yi = page::page_matrix(&y.rows(i, 1).into_owned(), p.block)?;
                identify_observability_index(&up, &yi, u.nrows(), 1, p.delta)
            })
            .collect::<beheco::Result<Vec<_>>>()?;
        serde_json::to_value(reports)
    } else {
        let yp = page::page_matrix(&y, p.block)?;
        serde_json::to_value(identify_observability_index(&up, &yp, u.nrows(), y.nrows(), p.delta)?)
    };
    write_json(&io.out, &report.map_err(|e| Failure::Error(e.to_string()))?)
}

fn predict_cmd(io: &Io) -> Result<(), Failure> {
    let p: PredictProblem = read(&io.config)?;
    let (u, y) = p.data.signals(p.delta)?;
    let data = page::behavioral_from_signals(&u, &y, p.l_p, p.l_f, p.delta)?;
    let state = build_predictor(data, recent_trajectory(&p.recent, &Weights::default())?)?;
    let pred = predict(&state, &nalgebra::DVector::from_vec(p.u_f))?;
    write_json(
        &io.out,
        &json!({
            "y_f_hat": pred.y_f_hat.as_slice(),
            "g_hat": pred.g_hat.as_slice(),
            "c_uf": finite_or_null(pred.c_uf),
            "g_ball_radius": finite_or_null(pred.g_ball_radius),
            "y_f_error_bound": finite_or_null(pred.y_f_error_bound),
            "sigma_min": state.sigma_min(),
            "certified": pred.certified,
        }),
    )
}

fn trace_json(trace: &[robust::TraceEntry]) -> serde_json::Value {
    trace
        .iter()
        .map(|t| json!({ "u_f": t.u_f.as_slice(), "c_worst": t.c_worst }))
        .collect()
}

fn regulate(io: &Io) -> Result<(), Failure> {
    let p: RegulateProblem = read(&io.config)?;
    let (u, y) = p.data.signals(p.delta)?;
    let data = page::behavioral_from_signals(&u, &y, p.l_p, p.l_f, p.delta)?;
    let state = build_predictor(data, recent_trajectory(&p.recent, &p.weights)?)?;
    let res = robust::alternate_solve(&state, &p.solver)?;
    let certificate = match suboptimality_certificate(&state, p.delta) {
        Ok(c) => json!({
            "c1": c.c1, "c2": c.c2, "c3": c.c3, "eta": c.eta, "f": c.f,
            "u_hat_star": c.u_hat_star.as_slice(),
            "certified": c.certified,
        }),
        Err(e) => json!({ "unavailable": e.to_string() }),
    };
    write_json(
        &io.out,
        &json!({
            "u_check": res.u_check.as_slice(),
            "c_worst": res.c_worst,
            "iterations": res.iterations,
            "converged": res.converged,
            "certificate": certificate,
            "trace": trace_json(&res.trace),
        }),
    )
}

fn sddmc(io: &Io) -> Result<(), Failure> {
    let p: SddmcProblem = read(&io.config)?;
    let (u, y) = p.data.signals(p.delta)?;
    let recent = mimo_recent(&p.recent, &p.weights)?;
    let bundle = mimo::decompose(&u, &y, &p.l_p, p.l_f, p.delta, &recent)?;
    let bx = p.constraints.to_box(bundle.len(), p.l_f, bundle.n_future_inputs())?;
    let res = mimo::sddmc_solve(&bundle, &bx, &p.solver)?;
    let margins: Vec<Vec<Option<f64>>> = res
        .margins
        .iter()
        .map(|m| m.iter().copied().map(finite_or_null).collect())
        .collect();
    write_json(
        &io.out,
        &json!({
            "u_check": res.u_check.as_slice(),
            "c_worst": res.c_worst,
            "iterations": res.iterations,
            "converged": res.converged,
            "radii": res.radii,
            "radii_at_solution": res.radii_at_solution,
            "margins": margins,
            "certified": res.certified,
            "trace": trace_json(&res.trace),
        }),
    )
}

fn sweep(io: &Io) -> Result<(), Failure> {
    let cfg: ExperimentConfig = read(&io.config)?;
    let rows = experiment::sweep(&cfg)?;
    let file = File::create(&io.out).map_err(|e| Failure::Error(format!("{}: {e}", io.out.display())))?;
    experiment::write_csv(&rows, BufWriter::new(file))?;
    let failed: Vec<_> = rows.iter().filter(|r| r.is_failed()).collect();
    if let Some(first) = failed.first() {
        return Err(Failure::Infeasible(format!(
            "{} of {} trials produced no answer; first (delta {}, seed {}): {}",
            failed.len(),
            rows.len(),
            first.delta,
            first.seed,
            first.failure.as_deref().unwrap_or("")
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match &cli.cmd {
        Command::Identify(io) => identify(io),
        Command::Predict(io) => predict_cmd(io),
        Command::Regulate(io) => regulate(io),
        Command::Sddmc(io) => sddmc(io),
        Command::Sweep(io) => sweep(io),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Error(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
