//! Binary I/O for externally produced embeddings and attention heads, plus
//! the truncated-limit experiment for fixed corpora.
//!
//! Embedding files (`ATTE`): magic, u32 version = 1, u32 d, u64 n_total,
//! then n_total * d little-endian f32 values row-major.
//! Head files (`ATTM`): magic, u32 version = 1, u32 head_count, then per
//! head u32 layer, u32 head, u32 k, u32 d followed by Q, K, V (k x d) and
//! W (d x k), all little-endian f64 row-major.
//!
//! Embeddings are stored as f32 (matching exported model activations) and
//! upcast to f64 for all computation. The corpus is held in memory with
//! row access; at the 20M x 768 scale a memory-mapped variant would drop in
//! behind the same interface.

use crate::attention::{self, attend_tiled, AttentionParams, Head};
use crate::error::{Error, Result};
use crate::generate::TokenBatch;
use crate::linalg::{self, Mat};
use crate::montecarlo::{aggregate, CovNorm, Metric, Provenance, SweepResult, SCHEMA_VERSION};
use crate::rng::{self, fnv1a, tag};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;

const ATTE_MAGIC: [u8; 4] = *b"ATTE";
const ATTM_MAGIC: [u8; 4] = *b"ATTM";
const FORMAT_VERSION: u32 = 1;

/// A fixed corpus of N_max token embeddings standing in for the limit law.
#[derive(Debug, Clone)]
pub struct EmbeddingCorpus {
    n_total: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingCorpus {
    pub fn from_f32(n_total: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if d == 0 || n_total == 0 {
            return Err(Error::invalid("corpus: dimensions must be positive"));
        }
        if data.len() != n_total * d {
            return Err(Error::DimensionMismatch(format!(
                "corpus: data length {} != {n_total} x {d}",
                data.len()
            )));
        }
        Ok(EmbeddingCorpus { n_total, d, data })
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// Upcast selected rows into a 64-bit token batch.
    pub fn batch_from_indices(&self, indices: &[usize]) -> Result<TokenBatch> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend(self.row(i).iter().map(|&x| x as f64));
        }
        TokenBatch::from_flat(indices.len(), self.d, data)
    }

    /// The whole corpus as a 64-bit batch.
    pub fn full_batch(&self) -> Result<TokenBatch> {
        let data: Vec<f64> = self.data.iter().map(|&x| x as f64).collect();
        TokenBatch::from_flat(self.n_total, self.d, data)
    }
}

/// Write a corpus in the embedding file format.
pub fn write_embeddings(path: &Path, d: usize, rows: &[f32]) -> Result<()> {
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::DimensionMismatch(
            "write_embeddings: row data is not a multiple of d".into(),
        ));
    }
    let n_total = (rows.len() / d) as u64;
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut header = Vec::with_capacity(20);
    header.extend_from_slice(&ATTE_MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(d as u32).to_le_bytes());
    header.extend_from_slice(&n_total.to_le_bytes());
    file.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::with_capacity(rows.len() * 4);
    for &x in rows {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    file.write_all(&payload).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read an embedding corpus, validating magic, version, and payload size.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingCorpus> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 20];
    file.read_exact(&mut header)
        .map_err(|e| Error::io(path, e))?;
    if header[0..4] != ATTE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not an embedding file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let d = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let n_total = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    if d == 0 {
        return Err(Error::Format(format!("{}: dimension is zero", path.display())));
    }
    let expected = 20u64 + (n_total as u64) * (d as u64) * 4;
    let actual = file.metadata().map_err(|e| Error::io(path, e))?.len();
    if actual != expected {
        return Err(Error::Corrupt {
            path: path.into(),
            expected,
            actual,
        });
    }
    let mut payload = vec![0u8; (n_total * d) * 4];
    file.read_exact(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    EmbeddingCorpus::from_f32(n_total, d, data)
}

/// A head together with its provenance coordinates in the source model.
#[derive(Debug, Clone)]
pub struct HeadSpec {
    pub layer: u32,
    pub head_index: u32,
    pub head: Head,
}

fn write_mat_f64(buf: &mut Vec<u8>, m: &Mat) {
    for &x in m.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn read_mat_f64(bytes: &[u8], pos: &mut usize, rows: usize, cols: usize) -> Result<Mat> {
    let need = rows * cols * 8;
    let slice = bytes
        .get(*pos..*pos + need)
        .ok_or_else(|| Error::Format("head file truncated inside a matrix".into()))?;
    *pos += need;
    let data: Vec<f64> = slice
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Mat::from_vec(rows, cols, data)
}

/// Write attention heads in the head file format.
pub fn write_heads(path: &Path, heads: &[HeadSpec]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&ATTM_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(heads.len() as u32).to_le_bytes());
    for spec in heads {
        let h = &spec.head;
        buf.extend_from_slice(&spec.layer.to_le_bytes());
        buf.extend_from_slice(&spec.head_index.to_le_bytes());
        buf.extend_from_slice(&(h.head_dim() as u32).to_le_bytes());
        buf.extend_from_slice(&(h.token_dim() as u32).to_le_bytes());
        write_mat_f64(&mut buf, &h.q);
        write_mat_f64(&mut buf, &h.k);
        write_mat_f64(&mut buf, &h.v);
        write_mat_f64(&mut buf, &h.w);
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Read attention heads; A = K^T Q / sqrt(k) is assembled per head.
pub fn read_heads(path: &Path) -> Result<Vec<HeadSpec>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || bytes[0..4] != ATTM_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a head file",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut pos = 12usize;
    let mut heads = Vec::with_capacity(count);
    for _ in 0..count {
        let fixed = bytes
            .get(pos..pos + 16)
            .ok_or_else(|| Error::Format("head file truncated in a head header".into()))?;
        let layer = u32::from_le_bytes(fixed[0..4].try_into().unwrap());
        let head_index = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
        let k = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(fixed[12..16].try_into().unwrap()) as usize;
        pos += 16;
        let q = read_mat_f64(&bytes, &mut pos, k, d)?;
        let kk = read_mat_f64(&bytes, &mut pos, k, d)?;
        let v = read_mat_f64(&bytes, &mut pos, k, d)?;
        let w = read_mat_f64(&bytes, &mut pos, d, k)?;
        heads.push(HeadSpec {
            layer,
            head_index,
            head: Head::new(q, kk, v, w)?,
        });
    }
    if pos != bytes.len() {
        return Err(Error::Corrupt {
            path: path.into(),
            expected: pos as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(heads)
}

/// Draw `n` distinct indices from [0, total) by partial Fisher-Yates.
fn sample_indices(total: usize, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<usize> {
    use rand::Rng;
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = i + rng.random_range(0..(total - i));
        pool.swap(i, j);
    }
    pool.truncate(n);
    pool
}

/// Estimated token law of a corpus: empirical mean and covariance plus the
/// derived spectral reach.
#[derive(Debug, Clone)]
pub struct SpecEstimate {
    pub mean: Vec<f64>,
    pub covariance: Mat,
    /// Largest eigenvalue of the empirical covariance.
    pub spectral_reach: f64,
    /// Set when the covariance is numerically rank-deficient.
    pub rank_deficient: bool,
}

/// Two-pass mean/covariance over the full corpus plus the spectral reach.
pub fn estimate_spec(corpus: &EmbeddingCorpus) -> Result<SpecEstimate> {
    let n = corpus.n_total();
    let d = corpus.dim();
    if n < d + 1 {
        return Err(Error::invalid(format!(
            "estimate_spec: need at least d + 1 = {} rows, have {n}",
            d + 1
        )));
    }
    let mut mean = vec![0.0f64; d];
    for i in 0..n {
        for (m, &x) in mean.iter_mut().zip(corpus.row(i)) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Mat::zeros(d, d);
    let mut w = vec![0.0f64; d];
    for i in 0..n {
        for (wk, (&x, &m)) in w.iter_mut().zip(corpus.row(i).iter().zip(&mean)) {
            *wk = x as f64 - m;
        }
        for a in 0..d {
            let wa = w[a];
            for b in a..d {
                let cur = cov.get(a, b);
                cov.set(a, b, wa.mul_add(w[b], cur));
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov.get(a, b) / n as f64;
            cov.set(a, b, v);
            cov.set(b, a, v);
        }
    }
    let spectral_reach = linalg::spectral_norm(&cov)?;
    let (eig, _) = linalg::sym_eigen(&cov)?;
    let lam_min = eig.iter().cloned().fold(f64::MAX, f64::min);
    let rank_deficient = lam_min <= 1e-12 * spectral_reach.max(f64::MIN_POSITIVE);
    Ok(SpecEstimate {
        mean,
        covariance: cov,
        spectral_reach,
        rank_deficient,
    })
}

/// Truncated-limit experiment: reference moments over the full corpus, then
/// replicated subsample errors and rate fits.
///
/// Requires max(n_grid) <= n_total / 10 so the corpus approximates its own
/// limit law at every subsample size.
pub fn truncated_limit_experiment(
    corpus: &EmbeddingCorpus,
    head: &HeadSpec,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    metrics: &[Metric],
    cov_norm: CovNorm,
    chunk: usize,
) -> Result<SweepResult> {
    let n_top = *n_grid.last().ok_or_else(|| Error::invalid("empty n_grid"))?;
    if n_top * 10 > corpus.n_total() {
        return Err(Error::invalid(format!(
            "truncated-limit experiment needs max(n_grid) <= n_total / 10 = {}, got {n_top}",
            corpus.n_total() / 10
        )));
    }
    truncated_limit_experiment_unchecked(
        corpus, head, n_grid, replicates, seed, metrics, cov_norm, chunk,
    )
}

/// The experiment body without the 10x headroom guard. Exposed for tests
/// that need the degenerate subsample-equals-corpus identity.
#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn truncated_limit_experiment_unchecked(
    corpus: &EmbeddingCorpus,
    head: &HeadSpec,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    metrics: &[Metric],
    cov_norm: CovNorm,
    chunk: usize,
) -> Result<SweepResult> {
    if n_grid.len() < 3 {
        return Err(Error::invalid("n_grid needs at least 3 entries"));
    }
    if !n_grid.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::invalid("n_grid must be strictly increasing"));
    }
    if replicates < 2 {
        return Err(Error::invalid("at least 2 replicates are required"));
    }
    if metrics
        .iter()
        .any(|m| !matches!(m, Metric::Mean | Metric::Covariance))
    {
        return Err(Error::invalid(
            "truncated-limit experiment supports mean and covariance metrics",
        ));
    }
    let params = AttentionParams::single(head.head.a_matrix().clone(), head.head.v.clone())?;

    // Reference: attention moments under the full corpus.
    let full = corpus.full_batch()?;
    let reference_out = attend_tiled(&full, &params, chunk)?;
    let reference = attention::moments(&reference_out);

    let mut raw: Vec<Vec<Vec<Option<f64>>>> = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let per_rep: Vec<Vec<Option<f64>>> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let mut rng = rng::stream(seed, &[tag::SUBSAMPLE, n as u64, rep as u64]);
                let indices = sample_indices(corpus.n_total(), n, &mut rng);
                let errors = (|| -> Result<Vec<f64>> {
                    let batch = corpus.batch_from_indices(&indices)?;
                    let out = if n <= chunk {
                        attention::attend_naive(&batch, &params)?
                    } else {
                        attend_tiled(&batch, &params, chunk)?
                    };
                    let m = attention::moments(&out);
                    metrics
                        .iter()
                        .map(|metric| match metric {
                            Metric::Mean => {
                                let diff: Vec<f64> = m
                                    .mean
                                    .iter()
                                    .zip(&reference.mean)
                                    .map(|(a, b)| a - b)
                                    .collect();
                                Ok(linalg::norm2(&diff))
                            }
                            Metric::Covariance => {
                                let diff = m.covariance.sub(&reference.covariance)?;
                                match cov_norm {
                                    CovNorm::Spectral => linalg::spectral_norm(&diff),
                                    CovNorm::Frobenius => Ok(diff.frobenius_norm()),
                                }
                            }
                            _ => unreachable!("validated metric set"),
                        })
                        .collect()
                })();
                match errors {
                    Ok(v) => v.into_iter().map(Some).collect(),
                    Err(_) => vec![None; metrics.len()],
                }
            })
            .collect();
        raw.push(per_rep);
    }

    let names: Vec<String> = metrics.iter().map(|m| m.name().to_string()).collect();
    let (cells, fits) = aggregate(&names, n_grid, &raw, 0);
    let mut hash_input = Vec::new();
    hash_input.extend_from_slice(&seed.to_le_bytes());
    for &n in n_grid {
        hash_input.extend_from_slice(&(n as u64).to_le_bytes());
    }
    Ok(SweepResult {
        cells,
        fits,
        provenance: Provenance {
            config_hash: fnv1a(&hash_input),
            master_seed: seed,
            schema_version: SCHEMA_VERSION,
        },
    })
}
