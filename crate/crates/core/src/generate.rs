//! Token distributions and deterministic sampling.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// A centered-or-not Gaussian token law N(mean, sigma), with the derived
/// quantities every bound needs cached at construction: the symmetric square
/// root, the spectral norm (largest eigenvalue), and the trace.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    mean: Vec<f64>,
    sigma: Mat,
    sigma_sqrt: Mat,
    spectral_norm: f64,
    trace: f64,
}

impl GaussianSpec {
    pub fn new(mean: Vec<f64>, sigma: Mat) -> Result<Self> {
        if !sigma.is_square() {
            return Err(Error::DimensionMismatch(
                "GaussianSpec: sigma must be square".into(),
            ));
        }
        if mean.len() != sigma.rows() {
            return Err(Error::DimensionMismatch(format!(
                "GaussianSpec: mean has length {}, sigma is {}x{}",
                mean.len(),
                sigma.rows(),
                sigma.cols()
            )));
        }
        if !sigma.is_finite() || mean.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("GaussianSpec: non-finite entries"));
        }
        if sigma.symmetry_defect() > 1e-12 {
            return Err(Error::invalid(format!(
                "GaussianSpec: sigma not symmetric (relative defect {:.3e})",
                sigma.symmetry_defect()
            )));
        }
        let (eig, _) = linalg::sym_eigen(&sigma)?;
        let lam_max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let lam_min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if lam_min <= 0.0 {
            return Err(Error::invalid(format!(
                "GaussianSpec: sigma must be positive definite (min eigenvalue {lam_min:.6e})"
            )));
        }
        let sigma_sqrt = linalg::symmetric_sqrt(&sigma)?;
        // Construction-time check of the cached root.
        let recon = sigma_sqrt.matmul(&sigma_sqrt)?;
        let defect = recon.sub(&sigma)?.frobenius_norm() / sigma.frobenius_norm();
        if defect > 1e-10 {
            return Err(Error::numeric(format!(
                "GaussianSpec: sqrt(sigma) check failed (relative error {defect:.3e})"
            )));
        }
        let trace = sigma.trace();
        Ok(GaussianSpec {
            mean,
            sigma,
            sigma_sqrt,
            spectral_norm: lam_max,
            trace,
        })
    }

    pub fn isotropic(dim: usize, variance: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], Mat::identity(dim).scale(variance))
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        Self::new(vec![0.0; diag.len()], Mat::from_diag(diag))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn is_centered(&self) -> bool {
        self.mean.iter().all(|&x| x == 0.0)
    }

    pub fn sigma(&self) -> &Mat {
        &self.sigma
    }

    pub fn sigma_sqrt(&self) -> &Mat {
        &self.sigma_sqrt
    }

    /// ||Sigma||_2, the spectral reach.
    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }
}

// Serialized form carries only (mean, sigma); derived fields are rebuilt and
// re-validated on deserialization.
#[derive(Serialize, Deserialize)]
struct GaussianSpecRepr {
    mean: Vec<f64>,
    sigma: Mat,
}

impl Serialize for GaussianSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GaussianSpecRepr {
            mean: self.mean.clone(),
            sigma: self.sigma.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GaussianSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = GaussianSpecRepr::deserialize(d)?;
        GaussianSpec::new(repr.mean, repr.sigma).map_err(serde::de::Error::custom)
    }
}

/// What to draw tokens from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeneratorKind {
    Gaussian {
        spec: GaussianSpec,
    },
    GaussianMixture {
        weights: Vec<f64>,
        components: Vec<GaussianSpec>,
    },
    UniformBall {
        radius: f64,
        dim: usize,
    },
    UniformSphere {
        radius: f64,
        dim: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenGenerator {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    pub seed: u64,
}

impl TokenGenerator {
    pub fn gaussian(spec: GaussianSpec, seed: u64) -> Self {
        TokenGenerator {
            kind: GeneratorKind::Gaussian { spec },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            GeneratorKind::Gaussian { .. } => Ok(()),
            GeneratorKind::GaussianMixture {
                weights,
                components,
            } => {
                if weights.len() != components.len() || weights.is_empty() {
                    return Err(Error::invalid(
                        "mixture: weights and components must be non-empty and equal length",
                    ));
                }
                if weights.iter().any(|&w| !(w >= 0.0)) {
                    return Err(Error::invalid("mixture: weights must be nonnegative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid(format!(
                        "mixture: weights sum to {total}, expected 1"
                    )));
                }
                let d = components[0].dim();
                if components.iter().any(|c| c.dim() != d) {
                    return Err(Error::DimensionMismatch(
                        "mixture: components have differing dimensions".into(),
                    ));
                }
                Ok(())
            }
            GeneratorKind::UniformBall { radius, .. }
            | GeneratorKind::UniformSphere { radius, .. } => {
                if *radius > 0.0 && radius.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("radius must be positive and finite"))
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            GeneratorKind::Gaussian { spec } => spec.dim(),
            GeneratorKind::GaussianMixture { components, .. } => {
                components.first().map_or(0, |c| c.dim())
            }
            GeneratorKind::UniformBall { dim, .. } | GeneratorKind::UniformSphere { dim, .. } => {
                *dim
            }
        }
    }

    /// Same distribution, different stream.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut g = self.clone();
        g.seed = seed;
        g
    }
}

/// n tokens in R^d, row-major. The empirical measure of a draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    data: Vec<f64>,
    n: usize,
    d: usize,
}

impl TokenBatch {
    pub fn from_flat(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid("TokenBatch: n and d must be at least 1"));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "TokenBatch: data length {} != {}x{}",
                data.len(),
                n,
                d
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("TokenBatch: non-finite entries"));
        }
        Ok(TokenBatch { data, n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Largest token norm, the radius of the empirical support.
    pub fn max_norm(&self) -> f64 {
        (0..self.n).fold(0.0, |a, i| a.max(linalg::norm2(self.row(i))))
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for i in 0..self.n {
            for (mk, &x) in m.iter_mut().zip(self.row(i)) {
                *mk += x;
            }
        }
        let inv = 1.0 / self.n as f64;
        m.iter_mut().for_each(|x| *x *= inv);
        m
    }

    /// Subtract the empirical mean; returns the centered batch and the offset
    /// that was removed, so callers can undo the reduction.
    pub fn center(&self) -> (TokenBatch, Vec<f64>) {
        let m = self.mean();
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.d) {
            for (x, &mk) in row.iter_mut().zip(&m) {
                *x -= mk;
            }
        }
        (
            TokenBatch {
                data,
                n: self.n,
                d: self.d,
            },
            m,
        )
    }
}

fn sample_gaussian_row(spec: &GaussianSpec, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let d = spec.dim();
    let mut z = vec![0.0f64; d];
    for zk in z.iter_mut() {
        *zk = rng.sample(StandardNormal);
    }
    let sq = spec.sigma_sqrt();
    for (k, o) in out.iter_mut().enumerate() {
        *o = spec.mean()[k] + linalg::dot(sq.row(k), &z);
    }
}

fn sample_unit_direction(d: usize, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    loop {
        let mut norm_sq = 0.0;
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o = z;
            norm_sq += z * z;
        }
        if norm_sq > 1e-60 {
            let inv = 1.0 / norm_sq.sqrt();
            out.iter_mut().for_each(|x| *x *= inv);
            return;
        }
        let _ = d; // dimension is implicit in the slice length
    }
}

/// Draw n tokens. Deterministic given (generator.seed, kind, n, d); row i is
/// produced by the i-th block of draws from the stream.
pub fn sample(gen: &TokenGenerator, n: usize, d: usize) -> Result<TokenBatch> {
    gen.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample: n must be at least 1"));
    }
    if gen.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "sample: generator dimension {} != requested {}",
            gen.dim(),
            d
        )));
    }
    let mut rng = rng::stream(gen.seed, &[rng::tag::TOKENS]);
    let mut data = vec![0.0f64; n * d];
    match &gen.kind {
        GeneratorKind::Gaussian { spec } => {
            for row in data.chunks_exact_mut(d) {
                sample_gaussian_row(spec, &mut rng, row);
            }
        }
        GeneratorKind::GaussianMixture {
            weights,
            components,
        } => {
            for row in data.chunks_exact_mut(d) {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = components.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = i;
                        break;
                    }
                }
                sample_gaussian_row(&components[chosen], &mut rng, row);
            }
        }
        GeneratorKind::UniformBall { radius, .. } => {
            for row in data.chunks_exact_mut(d) {
                sample_unit_direction(d, &mut rng, row);
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / d as f64);
                row.iter_mut().for_each(|x| *x *= r);
            }
        }
        GeneratorKind::UniformSphere { radius, .. } => {
            for row in data.chunks_exact_mut(d) {
                sample_unit_direction(d, &mut rng, row);
                row.iter_mut().for_each(|x| *x *= radius);
            }
        }
    }
    TokenBatch::from_flat(n, d, data)
}
