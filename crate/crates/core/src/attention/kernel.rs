//! The attention evaluation kernel.
//!
//! One code path serves every entry point: for each query, stream over key
//! chunks in ascending index order, maintaining a running (max, scaled
//! numerator, scaled denominator) triple — the online log-sum-exp scheme.
//! `attend_naive` is the single-chunk instance of the same routine, so
//! "chunk >= n" is bitwise identical to naive accumulation, and
//! `empirical_map` at query x_i is bitwise identical to output row i.
//!
//! Queries are independent, so rows are evaluated in parallel; the per-row
//! chunk order is fixed, which makes results independent of thread count.

use super::{AttentionOutput, AttentionParams, ParamsKind};
use crate::error::{Error, Result};
use crate::fastexp::fexp;
use crate::generate::TokenBatch;
use crate::linalg::{dot, Mat};
use rayon::prelude::*;

const LANES: usize = 8;
/// Rows per parallel work item.
const ROW_BLOCK: usize = 16;

/// Fill `buf` with logits <A q, x_j> for one key chunk, returning the chunk
/// maximum. `keys` is the chunk slice (len * d), `qa` is A q.
#[inline(always)]
fn logits_and_max(keys: &[f64], d: usize, qa: &[f64], buf: &mut [f64]) -> f64 {
    let len = buf.len();
    debug_assert_eq!(keys.len(), len * d);
    let mut mx = [f64::NEG_INFINITY; LANES];
    match d {
        1 => {
            let t = qa[0];
            let mut bi = buf.chunks_exact_mut(LANES);
            let mut ki = keys.chunks_exact(LANES);
            for (bc, kc) in (&mut bi).zip(&mut ki) {
                for i in 0..LANES {
                    let v = t * kc[i];
                    bc[i] = v;
                    mx[i] = if v > mx[i] { v } else { mx[i] };
                }
            }
            for (b, &k) in bi.into_remainder().iter_mut().zip(ki.remainder()) {
                let v = t * k;
                *b = v;
                mx[0] = if v > mx[0] { v } else { mx[0] };
            }
        }
        2 => {
            let (t0, t1) = (qa[0], qa[1]);
            for (i, b) in buf.iter_mut().enumerate() {
                let v = t0.mul_add(keys[2 * i], t1 * keys[2 * i + 1]);
                *b = v;
                mx[i % LANES] = if v > mx[i % LANES] { v } else { mx[i % LANES] };
            }
        }
        _ => {
            for (i, b) in buf.iter_mut().enumerate() {
                let v = dot(qa, &keys[i * d..(i + 1) * d]);
                *b = v;
                mx[i % LANES] = if v > mx[i % LANES] { v } else { mx[i % LANES] };
            }
        }
    }
    let mut m = mx[0];
    for &v in &mx[1..] {
        m = if v > m { v } else { m };
    }
    m
}

/// Exponentiate shifted logits and accumulate the chunk's contribution to
/// (den, num). `buf` holds logits on entry and weights e^{l - shift} on exit.
#[inline(always)]
fn accumulate_chunk(
    keys: &[f64],
    d: usize,
    shift: f64,
    buf: &mut [f64],
    den: &mut f64,
    num: &mut [f64],
) {
    match d {
        1 => {
            let mut den_l = [0.0f64; LANES];
            let mut num_l = [0.0f64; LANES];
            let mut bi = buf.chunks_exact_mut(LANES);
            let mut ki = keys.chunks_exact(LANES);
            for (bc, kc) in (&mut bi).zip(&mut ki) {
                for i in 0..LANES {
                    let e = fexp(bc[i] - shift);
                    bc[i] = e;
                    den_l[i] += e;
                    num_l[i] = e.mul_add(kc[i], num_l[i]);
                }
            }
            for (b, &k) in bi.into_remainder().iter_mut().zip(ki.remainder()) {
                let e = fexp(*b - shift);
                *b = e;
                den_l[0] += e;
                num_l[0] = e.mul_add(k, num_l[0]);
            }
            for i in 0..LANES {
                *den += den_l[i];
                num[0] += num_l[i];
            }
        }
        2 => {
            let mut den_l = [0.0f64; LANES];
            let mut num0 = [0.0f64; LANES];
            let mut num1 = [0.0f64; LANES];
            for (i, b) in buf.iter_mut().enumerate() {
                let e = fexp(*b - shift);
                *b = e;
                let lane = i % LANES;
                den_l[lane] += e;
                num0[lane] = e.mul_add(keys[2 * i], num0[lane]);
                num1[lane] = e.mul_add(keys[2 * i + 1], num1[lane]);
            }
            for i in 0..LANES {
                *den += den_l[i];
                num[0] += num0[i];
                num[1] += num1[i];
            }
        }
        _ => {
            // Exponentiate in place (vectorizes), then sweep the weights.
            let mut den_l = [0.0f64; LANES];
            let mut bi = buf.chunks_exact_mut(LANES);
            for bc in &mut bi {
                for i in 0..LANES {
                    let e = fexp(bc[i] - shift);
                    bc[i] = e;
                    den_l[i] += e;
                }
            }
            for b in bi.into_remainder() {
                let e = fexp(*b - shift);
                *b = e;
                den_l[0] += e;
            }
            for i in 0..LANES {
                *den += den_l[i];
            }
            for (i, &e) in buf.iter().enumerate() {
                let row = &keys[i * d..(i + 1) * d];
                for (nk, &xk) in num.iter_mut().zip(row) {
                    *nk = e.mul_add(xk, *nk);
                }
            }
        }
    }
}

/// Evaluate pre-projection tilted means g(q) = sum_j w_j(q) x_j for a block
/// of queries against all keys, chunked.
fn rows_for_block(
    keys: &TokenBatch,
    a: &Mat,
    queries: &[f64],
    chunk: usize,
    out: &mut [f64],
    weight_sums: Option<&mut [f64]>,
    row_offset: usize,
    scratch: &mut Vec<f64>,
) -> Result<()> {
    let d = keys.dim();
    let n = keys.n();
    let nq = queries.len() / d;
    let eff_chunk = chunk.min(n);
    scratch.resize(eff_chunk, 0.0);
    let mut qa = vec![0.0f64; d];
    let mut num = vec![0.0f64; d];
    let mut sums = weight_sums;

    for qi in 0..nq {
        let q = &queries[qi * d..(qi + 1) * d];
        for (k, qak) in qa.iter_mut().enumerate() {
            *qak = dot(a.row(k), q);
        }
        let mut m = f64::NEG_INFINITY;
        let mut den = 0.0f64;
        num.iter_mut().for_each(|x| *x = 0.0);
        let mut weight_sum = 0.0f64;

        let mut start = 0usize;
        let mut first = true;
        while start < n {
            let len = eff_chunk.min(n - start);
            let key_slice = &keys.as_flat()[start * d..(start + len) * d];
            let buf = &mut scratch[..len];
            let m_chunk = logits_and_max(key_slice, d, &qa, buf);
            let m_new = if first || m_chunk > m { m_chunk } else { m };
            if !first && m < m_new {
                let s = fexp(m - m_new);
                den *= s;
                num.iter_mut().for_each(|x| *x *= s);
                weight_sum *= s;
            }
            accumulate_chunk(key_slice, d, m_new, buf, &mut den, &mut num);
            if sums.is_some() {
                // buf now holds the unnormalized chunk weights
                weight_sum += buf.iter().sum::<f64>();
            }
            m = m_new;
            first = false;
            start += len;
        }

        if !(den.is_finite() && den > 0.0) || num.iter().any(|x| !x.is_finite()) {
            return Err(Error::numeric(format!(
                "attention row {}: non-finite accumulator (den = {den})",
                row_offset + qi
            )));
        }
        let inv = 1.0 / den;
        for (o, &nk) in out[qi * d..(qi + 1) * d].iter_mut().zip(num.iter()) {
            *o = nk * inv;
        }
        if let Some(s) = sums.as_deref_mut() {
            s[qi] = weight_sum * inv;
        }
    }
    Ok(())
}

/// Pre-projection attention rows (V = identity) for the given queries.
/// Rows are convex combinations of the keys.
pub fn pre_projection_rows(
    keys: &TokenBatch,
    a: &Mat,
    queries: &[f64],
    chunk: usize,
) -> Result<Mat> {
    let (rows, _) = tilted_rows(keys, a, queries, chunk, false)?;
    Ok(rows)
}

pub(crate) fn tilted_rows(
    keys: &TokenBatch,
    a: &Mat,
    queries: &[f64],
    chunk: usize,
    want_weight_sums: bool,
) -> Result<(Mat, Option<Vec<f64>>)> {
    let d = keys.dim();
    if a.rows() != d || a.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "attention: A is {}x{}, tokens have dimension {d}",
            a.rows(),
            a.cols()
        )));
    }
    if queries.len() % d != 0 {
        return Err(Error::DimensionMismatch(
            "attention: query buffer is not a multiple of d".into(),
        ));
    }
    if chunk == 0 {
        return Err(Error::invalid("attention: chunk size must be at least 1"));
    }
    let nq = queries.len() / d;
    let mut out = Mat::zeros(nq, d);
    let mut sums = if want_weight_sums {
        Some(vec![0.0f64; nq])
    } else {
        None
    };

    let block_floats = ROW_BLOCK * d;
    let out_flat = out.as_mut_slice();
    let result: Result<()> = match sums.as_mut() {
        Some(s) => out_flat
            .par_chunks_mut(block_floats)
            .zip(s.par_chunks_mut(ROW_BLOCK))
            .enumerate()
            .try_for_each(|(bi, (out_block, sum_block))| {
                let row0 = bi * ROW_BLOCK;
                let q_block = &queries[row0 * d..row0 * d + out_block.len()];
                let mut scratch = Vec::new();
                rows_for_block(
                    keys,
                    a,
                    q_block,
                    chunk,
                    out_block,
                    Some(sum_block),
                    row0,
                    &mut scratch,
                )
            }),
        None => out_flat
            .par_chunks_mut(block_floats)
            .enumerate()
            .try_for_each(|(bi, out_block)| {
                let row0 = bi * ROW_BLOCK;
                let q_block = &queries[row0 * d..row0 * d + out_block.len()];
                let mut scratch = Vec::new();
                rows_for_block(keys, a, q_block, chunk, out_block, None, row0, &mut scratch)
            }),
    };
    result?;
    Ok((out, sums))
}

fn project_rows(pre: &Mat, v: &Mat) -> Result<Mat> {
    let n = pre.rows();
    let p = v.rows();
    let mut out = Mat::zeros(n, p);
    for i in 0..n {
        let g = pre.row(i);
        for k in 0..p {
            out.set(i, k, dot(v.row(k), g));
        }
    }
    Ok(out)
}

fn attend_impl(
    tokens: &TokenBatch,
    params: &AttentionParams,
    chunk: usize,
    want_weight_sums: bool,
) -> Result<AttentionOutput> {
    if params.dim() != tokens.dim() {
        return Err(Error::DimensionMismatch(format!(
            "attend: params dimension {} != token dimension {}",
            params.dim(),
            tokens.dim()
        )));
    }
    match &params.kind {
        ParamsKind::Single { a, v } => {
            let (pre, sums) = tilted_rows(tokens, a, tokens.as_flat(), chunk, want_weight_sums)?;
            let rows = project_rows(&pre, v)?;
            Ok(AttentionOutput {
                rows,
                weight_sums: sums,
            })
        }
        ParamsKind::Multi { heads, d } => {
            let n = tokens.n();
            let mut rows = Mat::zeros(n, *d);
            for head in heads {
                let (pre, _) = tilted_rows(tokens, head.a_matrix(), tokens.as_flat(), chunk, false)?;
                for i in 0..n {
                    let f = head.v.matvec(pre.row(i))?;
                    let wf = head.w.matvec(&f)?;
                    for (o, x) in rows.row_mut(i).iter_mut().zip(wf) {
                        *o += x;
                    }
                }
            }
            Ok(AttentionOutput {
                rows,
                weight_sums: None,
            })
        }
    }
}

/// Self-attention with the whole key set as one chunk.
pub fn attend_naive(tokens: &TokenBatch, params: &AttentionParams) -> Result<AttentionOutput> {
    attend_impl(tokens, params, tokens.n(), true)
}

/// Self-attention streamed over key chunks of the given size. Identical
/// contract to `attend_naive`; memory per row stays O(chunk).
pub fn attend_tiled(
    tokens: &TokenBatch,
    params: &AttentionParams,
    chunk: usize,
) -> Result<AttentionOutput> {
    attend_impl(tokens, params, chunk, false)
}

/// The empirical attention map at an arbitrary query point.
pub fn empirical_map(
    tokens: &TokenBatch,
    params: &AttentionParams,
    query: &[f64],
) -> Result<Vec<f64>> {
    let out = empirical_map_many(tokens, params, query)?;
    Ok(out.row(0).to_vec())
}

/// The empirical attention map at several query points (flat nq x d buffer).
pub fn empirical_map_many(
    tokens: &TokenBatch,
    params: &AttentionParams,
    queries: &[f64],
) -> Result<Mat> {
    if params.dim() != tokens.dim() {
        return Err(Error::DimensionMismatch(format!(
            "empirical_map: params dimension {} != token dimension {}",
            params.dim(),
            tokens.dim()
        )));
    }
    if queries.len() % tokens.dim() != 0 || queries.is_empty() {
        return Err(Error::DimensionMismatch(
            "empirical_map: query buffer is not a nonempty multiple of d".into(),
        ));
    }
    let n = tokens.n();
    match &params.kind {
        ParamsKind::Single { a, v } => {
            let (pre, _) = tilted_rows(tokens, a, queries, n, false)?;
            project_rows(&pre, v)
        }
        ParamsKind::Multi { heads, d } => {
            let nq = queries.len() / d;
            let mut rows = Mat::zeros(nq, *d);
            for head in heads {
                let (pre, _) = tilted_rows(tokens, head.a_matrix(), queries, n, false)?;
                for i in 0..nq {
                    let f = head.v.matvec(pre.row(i))?;
                    let wf = head.w.matvec(&f)?;
                    for (o, x) in rows.row_mut(i).iter_mut().zip(wf) {
                        *o += x;
                    }
                }
            }
            Ok(rows)
        }
    }
}
