//! Discrete-time LTI simulation, bounded measurement noise and historical
//! experiment generation.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// The generator used everywhere a seed is turned into randomness.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `x_{t+1} = A x_t + B u_t`, `y_t = C x_t + D u_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateSpaceRepr", into = "StateSpaceRepr")]
pub struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let nx = a.nrows();
        if nx == 0 {
            return Err(Error::InvalidArgument("state dimension must be at least 1".into()));
        }
        if a.ncols() != nx {
            return Err(Error::dim("A columns", nx, a.ncols()));
        }
        if b.nrows() != nx {
            return Err(Error::dim("B rows", nx, b.nrows()));
        }
        if c.ncols() != nx {
            return Err(Error::dim("C columns", nx, c.ncols()));
        }
        let (m, p) = (b.ncols(), c.nrows());
        if m == 0 || p == 0 {
            return Err(Error::InvalidArgument("need at least one input and one output".into()));
        }
        if d.shape() != (p, m) {
            let got = if d.nrows() != p { d.nrows() } else { d.ncols() };
            let (what, expected) = if d.nrows() != p { ("D rows", p) } else { ("D columns", m) };
            return Err(Error::dim(what, expected, got));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `[C; CA; ...; CA^{l-1}]`.
    pub fn observability_matrix(&self, l: usize) -> DMatrix<f64> {
        let (p, nx) = (self.n_outputs(), self.n_states());
        let mut out = DMatrix::zeros(p * l, nx);
        let mut block = self.c.clone();
        for k in 0..l {
            out.rows_mut(k * p, p).copy_from(&block);
            block = &block * &self.a;
        }
        out
    }

    /// Smallest `l` making the observability matrix full column rank, if any
    /// `l <= n_x` does.
    pub fn observability_index(&self) -> Option<usize> {
        (1..=self.n_states()).find(|&l| {
            linalg::numerical_rank(&self.observability_matrix(l), linalg::RANK_TOL) == self.n_states()
        })
    }

    /// The single-output subsystem `(A, B, C[i,:], D[i,:])`.
    pub fn output_subsystem(&self, i: usize) -> Result<StateSpace> {
        if i >= self.n_outputs() {
            return Err(Error::InvalidArgument(format!("output index {i} out of range")));
        }
        StateSpace::new(
            self.a.clone(),
            self.b.clone(),
            self.c.rows(i, 1).into_owned(),
            self.d.rows(i, 1).into_owned(),
        )
    }

    /// Output sequence and the state after the last sample.
    pub fn simulate_from(&self, x1: &DVector<f64>, u: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if x1.len() != self.n_states() {
            return Err(Error::dim("initial state", self.n_states(), x1.len()));
        }
        if u.nrows() != self.n_inputs() {
            return Err(Error::dim("input channels", self.n_inputs(), u.nrows()));
        }
        if u.ncols() == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        let mut y = DMatrix::zeros(self.n_outputs(), u.ncols());
        let mut x = x1.clone();
        for (t, ut) in u.column_iter().enumerate() {
            y.set_column(t, &(&self.c * &x + &self.d * ut));
            x = &self.a * &x + &self.b * ut;
        }
        Ok((y, x))
    }

    /// State reached from `x1` after applying `u`.
    pub fn propagate(&self, x1: &DVector<f64>, u: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.simulate_from(x1, u).map(|(_, x)| x)
    }
}

#[derive(Serialize, Deserialize)]
struct StateSpaceRepr {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

/// Row-major nested vectors to a matrix; ragged rows are an error.
pub fn matrix_from_rows(rows: &[Vec<f64>], what: &'static str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::dim(what, c, bad.len()));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TryFrom<StateSpaceRepr> for StateSpace {
    type Error = Error;
    fn try_from(r: StateSpaceRepr) -> Result<Self> {
        StateSpace::new(
            matrix_from_rows(&r.a, "A row")?,
            matrix_from_rows(&r.b, "B row")?,
            matrix_from_rows(&r.c, "C row")?,
            matrix_from_rows(&r.d, "D row")?,
        )
    }
}

impl From<StateSpace> for StateSpaceRepr {
    fn from(s: StateSpace) -> Self {
        StateSpaceRepr {
            a: matrix_to_rows(&s.a),
            b: matrix_to_rows(&s.b),
            c: matrix_to_rows(&s.c),
            d: matrix_to_rows(&s.d),
        }
    }
}

/// Output sequence `y_[1,T]` as a `p x T` matrix, one column per sample.
pub fn simulate(sys: &StateSpace, x1: &DVector<f64>, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sys.simulate_from(x1, u).map(|(y, _)| y)
}

/// Entrywise uniform noise on `[-delta, delta]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub delta: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(delta: f64, seed: u64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::InvalidArgument(format!("noise bound must be finite and >= 0, got {delta}")));
        }
        Ok(Self { delta, seed })
    }

    pub fn rng(&self) -> SeededRng {
        seeded_rng(self.seed)
    }
}

pub fn add_noise(y: &DMatrix<f64>, noise: &NoiseModel) -> DMatrix<f64> {
    add_noise_with(y, noise.delta, &mut noise.rng())
}

/// `y + w` with `w` i.i.d. uniform on `[-delta, delta]`, drawn column by column.
pub fn add_noise_with<R: Rng + ?Sized>(y: &DMatrix<f64>, delta: f64, rng: &mut R) -> DMatrix<f64> {
    if delta <= 0.0 {
        return y.clone();
    }
    let dist = Uniform::new_inclusive(-delta, delta).expect("finite positive bound");
    let mut out = y.clone();
    for v in out.iter_mut() {
        *v += dist.sample(rng);
    }
    out
}

pub fn add_noise_vec<R: Rng + ?Sized>(y: &DVector<f64>, delta: f64, rng: &mut R) -> DVector<f64> {
    if delta <= 0.0 {
        return y.clone();
    }
    let dist = Uniform::new_inclusive(-delta, delta).expect("finite positive bound");
    y.map(|v| v + dist.sample(rng))
}

/// Input/output samples of one experiment; column `t` holds time `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.ncols() != outputs.ncols() {
            return Err(Error::dim("trajectory length", inputs.ncols(), outputs.ncols()));
        }
        if inputs.ncols() == 0 {
            return Err(Error::TooShort { needed: 1, got: 0 });
        }
        Ok(Self { inputs, outputs })
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }
    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn n_inputs(&self) -> usize {
        self.inputs.nrows()
    }
    pub fn n_outputs(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn with_outputs(&self, outputs: DMatrix<f64>) -> Result<Self> {
        Trajectory::new(self.inputs.clone(), outputs)
    }

    /// CSV with header `t,u_1..u_m,y_1..y_p`; `t` starts at 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_inputs()).map(|i| format!("u_{i}")));
        header.extend((1..=self.n_outputs()).map(|i| format!("y_{i}")));
        wr.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![(t + 1).to_string()];
            rec.extend(self.inputs.column(t).iter().map(|v| v.to_string()));
            rec.extend(self.outputs.column(t).iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let mut u_cols = Vec::new();
        let mut y_cols = Vec::new();
        for (k, name) in header.iter().enumerate() {
            let name = name.trim();
            if name.starts_with("u_") {
                u_cols.push(k);
            } else if name.starts_with("y_") {
                y_cols.push(k);
            } else if name != "t" {
                return Err(Error::InvalidArgument(format!("unexpected trajectory column '{name}'")));
            }
        }
        if u_cols.is_empty() || y_cols.is_empty() {
            return Err(Error::InvalidArgument("trajectory CSV needs u_* and y_* columns".into()));
        }
        let mut us = Vec::new();
        let mut ys = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad number in column {k}: {e}")))
            };
            for &k in &u_cols {
                us.push(parse(k)?);
            }
            for &k in &y_cols {
                ys.push(parse(k)?);
            }
        }
        let t = us.len() / u_cols.len();
        Trajectory::new(
            DMatrix::from_vec(u_cols.len(), t, us),
            DMatrix::from_vec(y_cols.len(), t, ys),
        )
    }
}

/// Concatenates `n_blocks` i.i.d. length-`l` input blocks with zero-mean normal
/// entries and simulates from rest. Returns the clean trajectory of length
/// `n_blocks * l`.
pub fn generate_historical<R: Rng + ?Sized>(
    sys: &StateSpace,
    l: usize,
    n_blocks: usize,
    input_std: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    if l == 0 || n_blocks == 0 {
        return Err(Error::InvalidArgument("horizon and block count must be >= 1".into()));
    }
    if !(input_std > 0.0) {
        return Err(Error::InvalidArgument(format!("input_std must be > 0, got {input_std}")));
    }
    let normal = Normal::new(0.0, input_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let t = l * n_blocks;
    let u = DMatrix::from_fn(sys.n_inputs(), t, |_, _| normal.sample(rng));
    let y = simulate(sys, &DVector::zeros(sys.n_states()), &u)?;
    Trajectory::new(u, y)
}

/// Replays `u` from rest `n` times with independent noise and returns the
/// entrywise mean of the noisy outputs.
pub fn averaged_collection<R: Rng + ?Sized>(
    sys: &StateSpace,
    u: &DMatrix<f64>,
    n: usize,
    delta: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("repeat count must be >= 1".into()));
    }
    let clean = simulate(sys, &DVector::zeros(sys.n_states()), u)?;
    if delta <= 0.0 {
        return Ok(clean);
    }
    let mut acc = DMatrix::zeros(clean.nrows(), clean.ncols());
    for _ in 0..n {
        acc += add_noise_with(&clean, delta, rng);
    }
    Ok(acc / n as f64)
}
