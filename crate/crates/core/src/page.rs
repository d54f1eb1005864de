//! Page matrices, the page-excitation test, and the past/future data split.
//!
//! Multichannel samples are stacked time-major: the rows of one Page block are
//! `[u_t(1..m); u_{t+1}(1..m); ...]`, matching `col(u_[t1,t2])`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// The `L`-Page matrix of a `dim x T` sequence: column `k` stacks samples
/// `kL .. kL + L - 1`, and the trailing `T mod L` samples are dropped.
pub fn page_matrix(seq: &DMatrix<f64>, l: usize) -> Result<DMatrix<f64>> {
    if l == 0 {
        return Err(Error::InvalidArgument("block length must be >= 1".into()));
    }
    let (dim, t) = seq.shape();
    if t < l {
        return Err(Error::TooShort { needed: l, got: t });
    }
    let cols = t / l;
    let mut out = DMatrix::zeros(dim * l, cols);
    for k in 0..cols {
        for s in 0..l {
            out.view_mut((s * dim, k), (dim, 1)).copy_from(&seq.column(k * l + s));
        }
    }
    Ok(out)
}

/// Stacked, block-shifted Page matrix whose full row rank defines
/// `L`-Page excitation of order `d`.
pub fn shifted_page_matrix(u: &DMatrix<f64>, l: usize, d: usize) -> Result<DMatrix<f64>> {
    if d == 0 || l == 0 {
        return Err(Error::InvalidArgument("order and block length must be >= 1".into()));
    }
    let t = u.ncols();
    if t < d * l {
        return Err(Error::TooShort { needed: d * l, got: t });
    }
    let seg = t - (d - 1) * l;
    let blocks = (0..d)
        .map(|i| page_matrix(&u.columns(i * l, seg).into_owned(), l))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    Ok(linalg::vstack(&refs))
}

/// True iff the shifted Page matrix has numerical full row rank, with
/// singular values counted when above `tol * sigma_max`.
pub fn is_page_exciting(u: &DMatrix<f64>, l: usize, d: usize, tol: f64) -> Result<bool> {
    let p = shifted_page_matrix(u, l, d)?;
    Ok(linalg::is_full_row_rank(&p, tol))
}

/// Historical data split into past/future blocks, plus the stacked matrix
/// `H = [U_p; Y_p; U_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralData {
    pub u_p: DMatrix<f64>,
    pub u_f: DMatrix<f64>,
    pub y_p: DMatrix<f64>,
    pub y_f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub l_p: usize,
    pub l_f: usize,
    pub l_h: usize,
    pub m: usize,
    pub p: usize,
    pub delta: f64,
}

impl BehavioralData {
    pub fn horizon(&self) -> usize {
        self.l_p + self.l_f
    }

    /// Same split with the output blocks replaced (e.g. by their clean
    /// counterparts).
    pub fn with_outputs(&self, y_page: &DMatrix<f64>, delta: f64) -> Result<Self> {
        let u = linalg::vstack(&[&self.u_p, &self.u_f]);
        split_historical(&u, y_page, self.m, self.p, self.l_p, delta)
    }
}

/// Splits the input and output Page matrices at `l_p` and assembles `H`.
pub fn split_historical(
    u_page: &DMatrix<f64>,
    y_page: &DMatrix<f64>,
    m: usize,
    p: usize,
    l_p: usize,
    delta: f64,
) -> Result<BehavioralData> {
    if m == 0 || p == 0 {
        return Err(Error::InvalidArgument("m and p must be >= 1".into()));
    }
    if u_page.nrows() % m != 0 {
        return Err(Error::dim("input Page rows (multiple of m)", m * (u_page.nrows() / m), u_page.nrows()));
    }
    let l = u_page.nrows() / m;
    if y_page.nrows() != p * l {
        return Err(Error::dim("output Page rows", p * l, y_page.nrows()));
    }
    if y_page.ncols() != u_page.ncols() {
        return Err(Error::dim("output Page columns", u_page.ncols(), y_page.ncols()));
    }
    if l_p == 0 || l_p >= l {
        return Err(Error::InvalidArgument(format!("l_p must satisfy 1 <= l_p < L = {l}, got {l_p}")));
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise bound must be >= 0, got {delta}")));
    }
    let l_f = l - l_p;
    let u_p = u_page.rows(0, m * l_p).into_owned();
    let u_f = u_page.rows(m * l_p, m * l_f).into_owned();
    let y_p = y_page.rows(0, p * l_p).into_owned();
    let y_f = y_page.rows(p * l_p, p * l_f).into_owned();
    let h = linalg::vstack(&[&u_p, &y_p, &u_f]);
    Ok(BehavioralData {
        u_p,
        u_f,
        y_p,
        y_f,
        h,
        l_p,
        l_f,
        l_h: u_page.ncols(),
        m,
        p,
        delta,
    })
}

/// Builds the behavioral data directly from input/output signals.
pub fn behavioral_from_signals(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    l_p: usize,
    l_f: usize,
    delta: f64,
) -> Result<BehavioralData> {
    let l = l_p + l_f;
    split_historical(&page_matrix(u, l)?, &page_matrix(y, l)?, u.nrows(), y.nrows(), l_p, delta)
}

/// The recent window `(u_p, y_p)` together with the regulation weights.
/// Unset weights default to `Q = I`, `R = I`, `r_f = 0` at the dimensions of
/// the predictor they are used with.
#[derive(Debug, Clone, PartialEq)]
pub struct RecentTrajectory {
    pub u_p: DVector<f64>,
    pub y_p: DVector<f64>,
    pub r_f: Option<DVector<f64>>,
    pub q: Option<DMatrix<f64>>,
    pub r: Option<DMatrix<f64>>,
}

impl RecentTrajectory {
    pub fn new(u_p: DVector<f64>, y_p: DVector<f64>) -> Self {
        Self {
            u_p,
            y_p,
            r_f: None,
            q: None,
            r: None,
        }
    }

    pub fn with_weights(mut self, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        self.q = Some(q);
        self.r = Some(r);
        self
    }

    pub fn with_reference(mut self, r_f: DVector<f64>) -> Self {
        self.r_f = Some(r_f);
        self
    }

    pub fn with_y_p(&self, y_p: DVector<f64>) -> Self {
        Self { y_p, ..self.clone() }
    }

    pub fn q_or_identity(&self, ny: usize) -> DMatrix<f64> {
        self.q.clone().unwrap_or_else(|| DMatrix::identity(ny, ny))
    }

    pub fn r_or_identity(&self, nu: usize) -> DMatrix<f64> {
        self.r.clone().unwrap_or_else(|| DMatrix::identity(nu, nu))
    }

    pub fn reference_or_zero(&self, ny: usize) -> DVector<f64> {
        self.r_f.clone().unwrap_or_else(|| DVector::zeros(ny))
    }

    /// Checks every dimension against a behavioral dataset, and that `Q` is
    /// symmetric PSD and `R` symmetric PD.
    pub fn validate_for(&self, data: &BehavioralData) -> Result<()> {
        let (m, p, l_p, l_f) = (data.m, data.p, data.l_p, data.l_f);
        if self.u_p.len() != m * l_p {
            return Err(Error::dim("recent u_p", m * l_p, self.u_p.len()));
        }
        if self.y_p.len() != p * l_p {
            return Err(Error::dim("recent y_p", p * l_p, self.y_p.len()));
        }
        if let Some(r_f) = &self.r_f {
            if r_f.len() != p * l_f {
                return Err(Error::dim("reference r_f", p * l_f, r_f.len()));
            }
        }
        if let Some(q) = &self.q {
            if q.shape() != (p * l_f, p * l_f) {
                return Err(Error::dim("weight Q", p * l_f, q.nrows()));
            }
            if !linalg::is_symmetric(q, 1e-12) || linalg::min_eigenvalue(q) < -1e-12 {
                return Err(Error::InvalidArgument("Q must be symmetric positive semidefinite".into()));
            }
        }
        if let Some(r) = &self.r {
            if r.shape() != (m * l_f, m * l_f) {
                return Err(Error::dim("weight R", m * l_f, r.nrows()));
            }
            if !linalg::is_symmetric(r, 1e-12) || linalg::min_eigenvalue(r) <= 0.0 {
                return Err(Error::NotPositiveDefinite("R"));
            }
        }
        Ok(())
    }
}

/// Stacks the first `l_p` samples of a recent input/output window.
pub fn split_recent(u_r: &DMatrix<f64>, y_r: &DMatrix<f64>, l_p: usize) -> Result<RecentTrajectory> {
    if l_p == 0 {
        return Err(Error::InvalidArgument("l_p must be >= 1".into()));
    }
    for seq in [u_r, y_r] {
        if seq.ncols() < l_p {
            return Err(Error::TooShort { needed: l_p, got: seq.ncols() });
        }
    }
    let stack = |s: &DMatrix<f64>| DVector::from_iterator(s.nrows() * l_p, s.columns(0, l_p).iter().copied());
    Ok(RecentTrajectory::new(stack(u_r), stack(y_r)))
}
