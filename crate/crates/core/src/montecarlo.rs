//! The convergence-sweep engine: replicated error measurement over an n
//! grid, sup-over-ball probing, rate fitting, and CSV emission.
//!
//! Determinism contract: identical config and seed produce bitwise-identical
//! results regardless of worker-thread count. Replicate (n, r) draws from
//! the stream derived from (master_seed, n, r), so adding replicates or grid
//! points never disturbs existing ones; aggregation walks results in index
//! order.

use crate::attention::{
    self, attend_naive, attend_tiled, empirical_map_many, AttentionParams, TiltedMean1d,
};
use crate::error::{Error, Result};
use crate::generate::{sample, GaussianSpec, GeneratorKind, TokenBatch, TokenGenerator};
use crate::linalg::{self, Mat};
use crate::ratefit::{fit_rate_with_burn_in, RateFit};
use crate::rng::{self, fnv1a, tag};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// An error statistic measured per replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Metric {
    /// Sup of the map error over probe queries in the ball of radius R.
    MapSup,
    /// Map error at one fixed query.
    MapPoint { query: Vec<f64> },
    /// Euclidean distance between empirical and reference output means.
    Mean,
    /// Distance between empirical and reference output covariances.
    Covariance,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::MapSup => "map_sup",
            Metric::MapPoint { .. } => "map_point",
            Metric::Mean => "mean",
            Metric::Covariance => "covariance",
        }
    }
}

/// Where the infinite-token reference comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reference {
    /// Analytic moments for centered Gaussian tokens (map x -> V Sigma A x).
    ClosedFormGaussian,
    /// Moments of attention over one large reference draw of n_max tokens.
    TruncatedEmpirical { n_max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovNorm {
    #[default]
    Spectral,
    Frobenius,
}

/// Row-evaluation strategy for the mean/covariance metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Evaluator {
    /// In d = 1, use the certified Chebyshev compression of the tilted mean
    /// when it certifies at 1e-12, else the exact tiled kernel.
    #[default]
    Auto,
    /// Always the exact kernel.
    Exact,
}

fn default_chunk() -> usize {
    4000
}

/// Full description of one convergence sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub generator: TokenGenerator,
    pub params: AttentionParams,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub master_seed: u64,
    /// Ball radius for sup-error probing.
    #[serde(default)]
    pub query_radius: f64,
    /// Probe count for sup-error; 0 means the 64 * d default.
    #[serde(default)]
    pub query_count: usize,
    pub reference: Reference,
    pub error_metrics: Vec<Metric>,
    #[serde(default)]
    pub cov_norm: CovNorm,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default)]
    pub evaluator: Evaluator,
    /// Smallest-n points dropped before rate fitting.
    #[serde(default)]
    pub burn_in: usize,
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {}, expected {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        self.generator.validate()?;
        if self.n_grid.len() < 3 {
            return Err(Error::Config("n_grid needs at least 3 entries".into()));
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.n_grid[0] == 0 {
            return Err(Error::Config("n_grid entries must be positive".into()));
        }
        if self.replicates < 2 {
            return Err(Error::Config("at least 2 replicates are required".into()));
        }
        if self.error_metrics.is_empty() {
            return Err(Error::Config("error_metrics must not be empty".into()));
        }
        if self.chunk == 0 {
            return Err(Error::Config("chunk must be at least 1".into()));
        }
        let d = self.generator.dim();
        if self.params.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "params dimension {} != generator dimension {d}",
                self.params.dim()
            )));
        }
        for m in &self.error_metrics {
            if let Metric::MapPoint { query } = m {
                if query.len() != d {
                    return Err(Error::Config(format!(
                        "map_point query has length {}, expected {d}",
                        query.len()
                    )));
                }
            }
            if matches!(m, Metric::MapSup) {
                if !(self.query_radius >= 0.0) {
                    return Err(Error::Config("query_radius must be nonnegative".into()));
                }
                let m_count = self.effective_query_count();
                if m_count < 2 {
                    return Err(Error::invalid(
                        "map_sup needs at least 2 probe queries",
                    ));
                }
            }
        }
        match self.reference {
            Reference::ClosedFormGaussian => {
                let spec = self.centered_gaussian_spec().ok_or_else(|| {
                    Error::Config(
                        "closed-form reference requires a centered Gaussian generator".into(),
                    )
                })?;
                let _ = spec;
            }
            Reference::TruncatedEmpirical { n_max } => {
                let n_top = *self.n_grid.last().expect("nonempty grid");
                if n_max < 10 * n_top {
                    return Err(Error::Config(format!(
                        "truncated reference needs n_max >= 10 * max(n_grid) = {}, got {n_max}",
                        10 * n_top
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn effective_query_count(&self) -> usize {
        if self.query_count == 0 {
            64 * self.generator.dim()
        } else {
            self.query_count
        }
    }

    fn centered_gaussian_spec(&self) -> Option<&GaussianSpec> {
        match &self.generator.kind {
            GeneratorKind::Gaussian { spec } if spec.is_centered() => Some(spec),
            _ => None,
        }
    }

    /// Stable hash of the canonical JSON encoding.
    pub fn config_hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }
}

/// Per-(metric, n) aggregate over replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellStats {
    pub metric: String,
    pub n: usize,
    pub mean_error: f64,
    /// Sample standard deviation of the per-replicate errors.
    pub std_error: f64,
    /// Replicates that succeeded.
    pub replicates: usize,
    pub failed: usize,
    /// Dropped when more than 20% of replicates failed.
    pub dropped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricFit {
    pub metric: String,
    pub fit: Option<RateFit>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: u64,
    pub master_seed: u64,
    pub schema_version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<CellStats>,
    pub fits: Vec<MetricFit>,
    pub provenance: Provenance,
}

/// Reference quantities shared by all replicates.
struct ReferenceState {
    mean: Option<Vec<f64>>,
    cov: Option<Mat>,
    /// For map metrics: evaluates the reference map at query points.
    kind: ReferenceKind,
}

enum ReferenceKind {
    Gaussian(GaussianSpec),
    Truncated(TokenBatch),
}

impl ReferenceState {
    fn map_at_many(&self, params: &AttentionParams, queries: &[f64]) -> Result<Mat> {
        match &self.kind {
            ReferenceKind::Gaussian(spec) => {
                let d = params.dim();
                let nq = queries.len() / d;
                let mut out = Mat::zeros(nq, params.out_dim());
                for i in 0..nq {
                    let v = attention::gaussian_map(spec, params, &queries[i * d..(i + 1) * d])?;
                    out.row_mut(i).copy_from_slice(&v);
                }
                Ok(out)
            }
            ReferenceKind::Truncated(batch) => empirical_map_many(batch, params, queries),
        }
    }
}

fn build_reference(config: &ExperimentConfig) -> Result<ReferenceState> {
    let needs_moments = config
        .error_metrics
        .iter()
        .any(|m| matches!(m, Metric::Mean | Metric::Covariance));
    match config.reference {
        Reference::ClosedFormGaussian => {
            let spec = config
                .centered_gaussian_spec()
                .expect("validated closed-form reference")
                .clone();
            let (mean, cov) = if needs_moments {
                (
                    Some(vec![0.0; config.params.out_dim()]),
                    Some(closed_form_output_covariance(&spec, &config.params)?),
                )
            } else {
                (None, None)
            };
            Ok(ReferenceState {
                mean,
                cov,
                kind: ReferenceKind::Gaussian(spec),
            })
        }
        Reference::TruncatedEmpirical { n_max } => {
            let d = config.generator.dim();
            let gen = config
                .generator
                .with_seed(rng::derive_seed(config.master_seed, &[tag::REFERENCE]));
            let batch = sample(&gen, n_max, d)?;
            let (mean, cov) = if needs_moments {
                let out = attend_tiled(&batch, &config.params, config.chunk)?;
                let m = attention::moments(&out);
                (Some(m.mean), Some(m.covariance))
            } else {
                (None, None)
            };
            Ok(ReferenceState {
                mean,
                cov,
                kind: ReferenceKind::Truncated(batch),
            })
        }
    }
}

/// Covariance of the linear Gaussian closed form: with M = V Sigma A (or the
/// head-summed analogue), Cov(M X) = M Sigma M^T.
fn closed_form_output_covariance(
    spec: &GaussianSpec,
    params: &AttentionParams,
) -> Result<Mat> {
    let m = closed_form_linear_map(spec, params)?;
    m.matmul(&spec.sigma().matmul(&m.transpose())?)
}

fn closed_form_linear_map(spec: &GaussianSpec, params: &AttentionParams) -> Result<Mat> {
    if let Some((a, v)) = params.single_head() {
        v.matmul(&spec.sigma().matmul(a)?)
    } else {
        let heads = params.heads().expect("multi-head");
        let d = params.dim();
        let mut total = Mat::zeros(d, d);
        for h in heads {
            let m = h
                .w
                .matmul(&h.v.matmul(&spec.sigma().matmul(h.a_matrix())?)?)?;
            total = total.add(&m)?;
        }
        Ok(total)
    }
}

/// Probe queries for the sup metric: half on the sphere of radius R, half in
/// the ball, from the (master, PROBES, n) stream. R = 0 collapses to the
/// origin.
fn sup_probes(config: &ExperimentConfig, n: usize) -> Mat {
    let d = config.generator.dim();
    let r = config.query_radius;
    if r == 0.0 {
        return Mat::zeros(1, d);
    }
    let m_count = config.effective_query_count();
    let mut rng = rng::stream(config.master_seed, &[tag::PROBES, n as u64]);
    let mut probes = Mat::zeros(m_count, d);
    let on_sphere = m_count / 2;
    for i in 0..m_count {
        let row = probes.row_mut(i);
        loop {
            let mut norm_sq = 0.0;
            for x in row.iter_mut() {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *x = z;
                norm_sq += z * z;
            }
            if norm_sq > 1e-60 {
                let scale = if i < on_sphere {
                    r / norm_sq.sqrt()
                } else {
                    let u: f64 = rng.random();
                    r * u.powf(1.0 / d as f64) / norm_sq.sqrt()
                };
                row.iter_mut().for_each(|x| *x *= scale);
                break;
            }
        }
    }
    probes
}

fn cov_error(diff: &Mat, norm: CovNorm) -> Result<f64> {
    match norm {
        CovNorm::Spectral => linalg::spectral_norm(diff),
        CovNorm::Frobenius => Ok(diff.frobenius_norm()),
    }
}

/// Attention output rows for one replicate batch, through the configured
/// evaluator.
fn replicate_rows(config: &ExperimentConfig, batch: &TokenBatch) -> Result<Mat> {
    if config.evaluator == Evaluator::Auto && batch.dim() == 1 {
        if let Some((a, v)) = config.params.single_head() {
            let a_scalar = a.get(0, 0);
            if let Some(model) = TiltedMean1d::build(batch, a_scalar)? {
                let n = batch.n();
                let p = v.rows();
                let mut rows = Mat::zeros(n, p);
                for i in 0..n {
                    let g = model.eval(a_scalar * batch.row(i)[0]);
                    for k in 0..p {
                        rows.set(i, k, v.get(k, 0) * g);
                    }
                }
                return Ok(rows);
            }
        }
    }
    let out = if batch.n() <= config.chunk {
        attend_naive(batch, &config.params)?
    } else {
        attend_tiled(batch, &config.params, config.chunk)?
    };
    Ok(out.rows)
}

/// Errors for one replicate, aligned with config.error_metrics; None marks a
/// numeric failure for that metric.
fn replicate_errors(
    config: &ExperimentConfig,
    reference: &ReferenceState,
    probes: Option<&(Mat, Mat)>,
    n: usize,
    rep: usize,
) -> Vec<Option<f64>> {
    let d = config.generator.dim();
    let gen_seed = rng::derive_seed(config.master_seed, &[tag::TOKENS, n as u64, rep as u64]);
    let gen = config.generator.with_seed(gen_seed);
    let batch = match sample(&gen, n, d) {
        Ok(b) => b,
        Err(_) => return vec![None; config.error_metrics.len()],
    };

    let needs_rows = config
        .error_metrics
        .iter()
        .any(|m| matches!(m, Metric::Mean | Metric::Covariance));
    let moments = if needs_rows {
        match replicate_rows(config, &batch) {
            Ok(rows) => Some(attention::moments_of_rows(&rows)),
            Err(_) => None,
        }
    } else {
        None
    };

    config
        .error_metrics
        .iter()
        .map(|metric| match metric {
            Metric::Mean => {
                let m = moments.as_ref()?;
                let reference_mean = reference.mean.as_ref()?;
                let diff: Vec<f64> = m
                    .mean
                    .iter()
                    .zip(reference_mean)
                    .map(|(a, b)| a - b)
                    .collect();
                Some(linalg::norm2(&diff))
            }
            Metric::Covariance => {
                let m = moments.as_ref()?;
                let reference_cov = reference.cov.as_ref()?;
                let diff = m.covariance.sub(reference_cov).ok()?;
                cov_error(&diff, config.cov_norm).ok()
            }
            Metric::MapPoint { query } => {
                let got = empirical_map_many(&batch, &config.params, query).ok()?;
                let want = reference
                    .map_at_many(&config.params, query)
                    .ok()?;
                let diff: Vec<f64> = got
                    .row(0)
                    .iter()
                    .zip(want.row(0))
                    .map(|(a, b)| a - b)
                    .collect();
                Some(linalg::norm2(&diff))
            }
            Metric::MapSup => {
                let (probe_points, probe_refs) = probes?;
                let got = empirical_map_many(&batch, &config.params, probe_points.as_slice())
                    .ok()?;
                let mut sup = 0.0f64;
                for i in 0..got.rows() {
                    let diff: Vec<f64> = got
                        .row(i)
                        .iter()
                        .zip(probe_refs.row(i))
                        .map(|(a, b)| a - b)
                        .collect();
                    sup = sup.max(linalg::norm2(&diff));
                }
                Some(sup)
            }
        })
        .collect()
}

/// Aggregate raw per-replicate errors into cells and per-metric fits.
/// Shared with the ingest path.
pub(crate) fn aggregate(
    metric_names: &[String],
    n_grid: &[usize],
    raw: &[Vec<Vec<Option<f64>>>],
    burn_in: usize,
) -> (Vec<CellStats>, Vec<MetricFit>) {
    let mut cells = Vec::new();
    for (ni, &n) in n_grid.iter().enumerate() {
        for (mi, name) in metric_names.iter().enumerate() {
            let values: Vec<f64> = raw[ni].iter().filter_map(|rep| rep[mi]).collect();
            let failed = raw[ni].len() - values.len();
            let dropped = failed * 5 > raw[ni].len();
            let (mean, std) = if values.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let k = values.len() as f64;
                let mean = values.iter().sum::<f64>() / k;
                let var = if values.len() > 1 {
                    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
                } else {
                    0.0
                };
                (mean, var.sqrt())
            };
            cells.push(CellStats {
                metric: name.clone(),
                n,
                mean_error: mean,
                std_error: std,
                replicates: values.len(),
                failed,
                dropped,
            });
        }
    }
    let fits = metric_names
        .iter()
        .map(|name| {
            let points: Vec<(usize, f64)> = cells
                .iter()
                .filter(|c| &c.metric == name && !c.dropped && c.mean_error > 0.0)
                .map(|c| (c.n, c.mean_error))
                .collect();
            MetricFit {
                metric: name.clone(),
                fit: fit_rate_with_burn_in(&points, burn_in).ok(),
            }
        })
        .collect();
    (cells, fits)
}

/// Run the full sweep described by the config.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepResult> {
    config.validate()?;
    let reference = build_reference(config)?;
    let wants_sup = config
        .error_metrics
        .iter()
        .any(|m| matches!(m, Metric::MapSup));

    let mut raw: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(config.n_grid.len());
    for &n in &config.n_grid {
        let probes = if wants_sup {
            let points = sup_probes(config, n);
            let refs = reference.map_at_many(&config.params, points.as_slice())?;
            Some((points, refs))
        } else {
            None
        };
        let per_rep: Vec<Vec<Option<f64>>> = (0..config.replicates)
            .into_par_iter()
            .map(|rep| replicate_errors(config, &reference, probes.as_ref(), n, rep))
            .collect();
        raw.push(per_rep);
    }

    let names: Vec<String> = config
        .error_metrics
        .iter()
        .map(|m| m.name().to_string())
        .collect();
    let (cells, fits) = aggregate(&names, &config.n_grid, &raw, config.burn_in);
    Ok(SweepResult {
        cells,
        fits,
        provenance: Provenance {
            config_hash: config.config_hash(),
            master_seed: config.master_seed,
            schema_version: config.schema_version,
        },
    })
}

/// Sup of the map error over probe queries for a single realization at
/// sample size n (replicate stream 0).
pub fn run_sup_error(config: &ExperimentConfig, n: usize) -> Result<f64> {
    config.validate()?;
    if config.effective_query_count() < 2 {
        return Err(Error::invalid("run_sup_error needs at least 2 probes"));
    }
    let reference = build_reference(config)?;
    let points = sup_probes(config, n);
    let refs = reference.map_at_many(&config.params, points.as_slice())?;
    let gen_seed = rng::derive_seed(config.master_seed, &[tag::TOKENS, n as u64, 0]);
    let gen = config.generator.with_seed(gen_seed);
    let batch = sample(&gen, n, config.generator.dim())?;
    let got = empirical_map_many(&batch, &config.params, points.as_slice())?;
    let mut sup = 0.0f64;
    for i in 0..got.rows() {
        let diff: Vec<f64> = got
            .row(i)
            .iter()
            .zip(refs.row(i))
            .map(|(a, b)| a - b)
            .collect();
        sup = sup.max(linalg::norm2(&diff));
    }
    Ok(sup)
}

fn fmt_f64(x: f64) -> String {
    // Shortest representation that round-trips to the same bits.
    format!("{x}")
}

/// Write a generic comment-headed CSV table.
pub fn write_table(
    path: &Path,
    comments: &[String],
    header: &str,
    rows: &[Vec<String>],
) -> Result<()> {
    let mut buf = String::new();
    for c in comments {
        buf.push_str("# ");
        buf.push_str(c);
        buf.push('\n');
    }
    buf.push_str(header);
    buf.push('\n');
    for row in rows {
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Emit a sweep result as CSV: one row per (metric, n), then one summary row
/// per metric with the fitted rate. Floats are written in the shortest form
/// that parses back to the identical bits.
pub fn emit_csv(result: &SweepResult, path: &Path, extra_comments: &[String]) -> Result<()> {
    let mut comments: Vec<String> = extra_comments.to_vec();
    comments.push(format!("config_hash: {:016x}", result.provenance.config_hash));
    comments.push(format!("seed: {}", result.provenance.master_seed));
    comments.push(format!(
        "schema_version: {}",
        result.provenance.schema_version
    ));

    let mut data_rows: Vec<Vec<String>> = Vec::new();
    for c in &result.cells {
        data_rows.push(vec![
            c.metric.clone(),
            c.n.to_string(),
            fmt_f64(c.mean_error),
            fmt_f64(c.std_error),
            c.replicates.to_string(),
        ]);
    }
    let mut summary_rows: Vec<Vec<String>> = Vec::new();
    for f in &result.fits {
        if let Some(fit) = &f.fit {
            summary_rows.push(vec![
                f.metric.clone(),
                fmt_f64(fit.beta_hat),
                fmt_f64(fit.stderr_beta),
                fmt_f64(fit.r_squared),
                fmt_f64(fit.intercept),
            ]);
        }
    }

    let mut content = String::new();
    for c in &comments {
        content.push_str("# ");
        content.push_str(c);
        content.push('\n');
    }
    content.push_str("metric,n,mean_error,std_error,replicates\n");
    for row in &data_rows {
        content.push_str(&row.join(","));
        content.push('\n');
    }
    if !summary_rows.is_empty() {
        content.push_str("# summary: metric,beta_hat,stderr_beta,r_squared,intercept\n");
        for row in &summary_rows {
            content.push_str(&row.join(","));
            content.push('\n');
        }
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(content.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    Ok(())
}
