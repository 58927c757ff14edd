//! Discrete self-attention (naive and tiled), the empirical attention map at
//! arbitrary queries, Gaussian closed forms, and output-distribution moments.

mod cheb;
mod kernel;

pub use cheb::TiltedMean1d;
pub use kernel::{attend_naive, attend_tiled, empirical_map, empirical_map_many, pre_projection_rows};

use crate::error::{Error, Result};
use crate::generate::{GaussianSpec, TokenBatch};
use crate::linalg::{self, Mat};
use serde::{Deserialize, Serialize};

/// One attention head: projections Q, K, V (head_dim x d) plus the output
/// projection W (d x head_dim). The combined key-query matrix
/// A = K^T Q / sqrt(head_dim) is assembled once at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "HeadRepr", into = "HeadRepr")]
pub struct Head {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub w: Mat,
    a: Mat,
}

#[derive(Serialize, Deserialize, Clone)]
struct HeadRepr {
    q: Mat,
    k: Mat,
    v: Mat,
    w: Mat,
}

impl TryFrom<HeadRepr> for Head {
    type Error = Error;
    fn try_from(r: HeadRepr) -> Result<Head> {
        Head::new(r.q, r.k, r.v, r.w)
    }
}

impl From<Head> for HeadRepr {
    fn from(h: Head) -> HeadRepr {
        HeadRepr {
            q: h.q,
            k: h.k,
            v: h.v,
            w: h.w,
        }
    }
}

impl Head {
    pub fn new(q: Mat, k: Mat, v: Mat, w: Mat) -> Result<Self> {
        let head_dim = q.rows();
        let d = q.cols();
        for (name, m, rows, cols) in [
            ("K", &k, head_dim, d),
            ("V", &v, head_dim, d),
            ("W", &w, d, head_dim),
        ] {
            if m.rows() != rows || m.cols() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "head: {name} is {}x{}, expected {rows}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if !q.is_finite() || !k.is_finite() || !v.is_finite() || !w.is_finite() {
            return Err(Error::invalid("head: non-finite entries"));
        }
        let a = k
            .transpose()
            .matmul(&q)?
            .scale(1.0 / (head_dim as f64).sqrt());
        Ok(Head { q, k, v, w, a })
    }

    /// A = K^T Q / sqrt(head_dim).
    pub fn a_matrix(&self) -> &Mat {
        &self.a
    }

    pub fn head_dim(&self) -> usize {
        self.q.rows()
    }

    pub fn token_dim(&self) -> usize {
        self.q.cols()
    }
}

/// Parameters of one attention operator: either a bare (A, V) pair or a list
/// of heads summed through their output projections.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ParamsRepr", into = "ParamsRepr")]
pub struct AttentionParams {
    kind: ParamsKind,
}

#[derive(Debug, Clone)]
enum ParamsKind {
    Single { a: Mat, v: Mat },
    Multi { heads: Vec<Head>, d: usize },
}

#[derive(Serialize, Deserialize, Clone)]
#[serde(untagged)]
enum ParamsRepr {
    Single { a: Mat, v: Mat },
    Multi { heads: Vec<Head> },
}

impl TryFrom<ParamsRepr> for AttentionParams {
    type Error = Error;
    fn try_from(r: ParamsRepr) -> Result<AttentionParams> {
        match r {
            ParamsRepr::Single { a, v } => AttentionParams::single(a, v),
            ParamsRepr::Multi { heads } => AttentionParams::multi_head(heads),
        }
    }
}

impl From<AttentionParams> for ParamsRepr {
    fn from(p: AttentionParams) -> ParamsRepr {
        match p.kind {
            ParamsKind::Single { a, v } => ParamsRepr::Single { a, v },
            ParamsKind::Multi { heads, .. } => ParamsRepr::Multi { heads },
        }
    }
}

impl AttentionParams {
    pub fn single(a: Mat, v: Mat) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("A must be square".into()));
        }
        if v.cols() != a.rows() {
            return Err(Error::DimensionMismatch(format!(
                "V is {}x{}, expected {} columns to match A",
                v.rows(),
                v.cols(),
                a.rows()
            )));
        }
        if !a.is_finite() || !v.is_finite() {
            return Err(Error::invalid("attention params: non-finite entries"));
        }
        Ok(AttentionParams {
            kind: ParamsKind::Single { a, v },
        })
    }

    /// Scalar single-head in d = 1.
    pub fn scalar(a: f64, v: f64) -> Result<Self> {
        Self::single(Mat::from_vec(1, 1, vec![a])?, Mat::from_vec(1, 1, vec![v])?)
    }

    pub fn multi_head(heads: Vec<Head>) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| Error::invalid("multi_head: empty head list"))?;
        let d = first.token_dim();
        let k = first.head_dim();
        if heads.iter().any(|h| h.token_dim() != d || h.head_dim() != k) {
            return Err(Error::DimensionMismatch(
                "multi_head: heads disagree on dimensions".into(),
            ));
        }
        if heads.len() * k != d {
            return Err(Error::invalid(format!(
                "multi_head: {} heads of width {k} do not tile token dimension {d}",
                heads.len()
            )));
        }
        Ok(AttentionParams {
            kind: ParamsKind::Multi { heads, d },
        })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ParamsKind::Single { a, .. } => a.rows(),
            ParamsKind::Multi { d, .. } => *d,
        }
    }

    /// Output dimension after value/output projections.
    pub fn out_dim(&self) -> usize {
        match &self.kind {
            ParamsKind::Single { v, .. } => v.rows(),
            ParamsKind::Multi { d, .. } => *d,
        }
    }

    pub fn is_single_head(&self) -> bool {
        matches!(self.kind, ParamsKind::Single { .. })
    }

    /// (A, V) of a single-head operator.
    pub fn single_head(&self) -> Option<(&Mat, &Mat)> {
        match &self.kind {
            ParamsKind::Single { a, v } => Some((a, v)),
            ParamsKind::Multi { .. } => None,
        }
    }

    pub fn heads(&self) -> Option<&[Head]> {
        match &self.kind {
            ParamsKind::Multi { heads, .. } => Some(heads),
            ParamsKind::Single { .. } => None,
        }
    }
}

/// Attention outputs, one row per query after value projection.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// n x p matrix of outputs.
    pub rows: Mat,
    /// Per-row sums of the normalized softmax weights. Populated by the
    /// naive path as a numeric diagnostic (each entry must be 1 within
    /// rounding); tiled and multi-head paths leave it empty.
    pub weight_sums: Option<Vec<f64>>,
}

/// Mean and covariance of the attention output rows, with the 1/n divisor.
#[derive(Debug, Clone)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    pub covariance: Mat,
    pub n: usize,
}

/// Mean and covariance of a row set by the two-pass algorithm.
pub fn moments_of_rows(rows: &Mat) -> MomentSummary {
    let n = rows.rows();
    let p = rows.cols();
    let mut mean = vec![0.0f64; p];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(rows.row(i)) {
            *m += x;
        }
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv);

    let mut cov = Mat::zeros(p, p);
    let mut w = vec![0.0f64; p];
    for i in 0..n {
        for (wk, (&x, &m)) in w.iter_mut().zip(rows.row(i).iter().zip(&mean)) {
            *wk = x - m;
        }
        for a in 0..p {
            let wa = w[a];
            for b in a..p {
                let cur = cov.get(a, b);
                cov.set(a, b, wa.mul_add(w[b], cur));
            }
        }
    }
    for a in 0..p {
        for b in a..p {
            let v = cov.get(a, b) * inv;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    MomentSummary {
        mean,
        covariance: cov,
        n,
    }
}

/// Moments of an attention output.
pub fn moments(output: &AttentionOutput) -> MomentSummary {
    moments_of_rows(&output.rows)
}

/// Pre-projection attention outputs are convex combinations of the tokens,
/// so every row norm is bounded by the largest token norm. Returns whether
/// the bound holds (with 1e-9 slack) and the worst violation observed.
pub fn hull_radius_check(tokens: &TokenBatch, preprojection_rows: &Mat) -> (bool, f64) {
    let radius = tokens.max_norm();
    let mut worst = f64::NEG_INFINITY;
    for i in 0..preprojection_rows.rows() {
        let excess = linalg::norm2(preprojection_rows.row(i)) - radius;
        worst = worst.max(excess);
    }
    (worst <= 1e-9, worst.max(0.0))
}

/// Population attention map for centered Gaussian tokens: exactly
/// V Sigma A x (the map is linear in the query).
pub fn gaussian_map(spec: &GaussianSpec, params: &AttentionParams, query: &[f64]) -> Result<Vec<f64>> {
    if !spec.is_centered() {
        return Err(Error::invalid(
            "gaussian_map requires a centered spec; subtract the mean first \
             (TokenBatch::center) and add V*Sigma*A*mean back if needed",
        ));
    }
    if query.len() != params.dim() || spec.dim() != params.dim() {
        return Err(Error::DimensionMismatch(
            "gaussian_map: query/spec/params dimensions disagree".into(),
        ));
    }
    match &params.kind {
        ParamsKind::Single { a, v } => {
            let ax = a.matvec(query)?;
            let sax = spec.sigma().matvec(&ax)?;
            v.matvec(&sax)
        }
        ParamsKind::Multi { heads, d } => {
            let mut out = vec![0.0f64; *d];
            for h in heads {
                let ax = h.a_matrix().matvec(query)?;
                let sax = spec.sigma().matvec(&ax)?;
                let f = h.v.matvec(&sax)?;
                let wf = h.w.matvec(&f)?;
                for (o, x) in out.iter_mut().zip(wf) {
                    *o += x;
                }
            }
            Ok(out)
        }
    }
}

/// Mean of the exponentially tilted centered Gaussian: tilting N(0, Sigma)
/// by t moves the mean to Sigma t. Composing with the value projection at
/// t = A x reproduces `gaussian_map` exactly.
pub fn tilted_gaussian_mean(spec: &GaussianSpec, t: &[f64]) -> Result<Vec<f64>> {
    if !spec.is_centered() {
        return Err(Error::invalid("tilted_gaussian_mean requires a centered spec"));
    }
    spec.sigma().matvec(t)
}

/// Stabilized softmax of one logit row (max-subtracted exponentiation).
pub fn softmax_stable(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x));
    let mut w: Vec<f64> = logits.iter().map(|&l| crate::fastexp::fexp(l - m)).collect();
    let den: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= den);
    w
}
