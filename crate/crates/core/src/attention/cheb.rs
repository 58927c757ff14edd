//! Compressed evaluation of the one-dimensional empirical tilted mean.
//!
//! In d = 1 every attention output is g(a x_i) where
//! g(t) = sum_j x_j e^{t x_j} / sum_j e^{t x_j} is a smooth function of the
//! scalar tilt t, and all queries fall in the data-determined interval
//! [a x_min, a x_max]. Interpolating g by a Chebyshev series turns the
//! O(n^2) sweep into O(n * degree) while reproducing the exact kernel to
//! twelve digits. The fit is certified a posteriori: trailing coefficients
//! must have decayed and the interpolant is spot-checked against direct
//! sums at fixed probe points. Callers fall back to the exact kernel when
//! certification fails (wide horizons), so this is a fast path, never an
//! approximation of last resort.

use crate::error::{Error, Result};
use crate::fastexp::fexp;
use crate::generate::TokenBatch;

const LANES: usize = 8;
/// Node counts tried in order; build gives up after the last one.
const NODE_SCHEDULE: [usize; 4] = [33, 65, 129, 257];
/// Certified sup-norm tolerance relative to the token scale.
const CERT_TOL: f64 = 1e-12;
const PROBES: usize = 17;

/// Chebyshev model of t -> g(t) on [t_lo, t_hi].
#[derive(Debug, Clone)]
pub struct TiltedMean1d {
    t_lo: f64,
    t_hi: f64,
    /// Chebyshev coefficients; c[0] stored at full weight.
    coeffs: Vec<f64>,
    constant: Option<f64>,
}

/// Direct stabilized evaluation of g(t) over all tokens. O(n).
pub(crate) fn exact_tilted_mean(xs: &[f64], t: f64, x_min: f64, x_max: f64) -> f64 {
    let shift = (t * x_min).max(t * x_max);
    let mut den_l = [0.0f64; LANES];
    let mut num_l = [0.0f64; LANES];
    let mut it = xs.chunks_exact(LANES);
    for c in &mut it {
        for i in 0..LANES {
            let e = fexp(t * c[i] - shift);
            den_l[i] += e;
            num_l[i] = e.mul_add(c[i], num_l[i]);
        }
    }
    for &x in it.remainder() {
        let e = fexp(t * x - shift);
        den_l[0] += e;
        num_l[0] = e.mul_add(x, num_l[0]);
    }
    let mut den = 0.0;
    let mut num = 0.0;
    for i in 0..LANES {
        den += den_l[i];
        num += num_l[i];
    }
    num / den
}

impl TiltedMean1d {
    /// Fit and certify a model for tokens and scalar attention weight `a`.
    /// Returns Ok(None) when the fit cannot be certified at 1e-12.
    pub fn build(tokens: &TokenBatch, a: f64) -> Result<Option<Self>> {
        if tokens.dim() != 1 {
            return Err(Error::DimensionMismatch(
                "TiltedMean1d requires one-dimensional tokens".into(),
            ));
        }
        let xs = tokens.as_flat();
        let mut x_min = f64::INFINITY;
        let mut x_max = f64::NEG_INFINITY;
        for &x in xs {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
        }
        let scale = x_min.abs().max(x_max.abs()).max(1.0);
        let (t_lo, t_hi) = if a >= 0.0 {
            (a * x_min, a * x_max)
        } else {
            (a * x_max, a * x_min)
        };
        let width = t_hi - t_lo;
        if width <= 1e-14 * (t_lo.abs() + t_hi.abs() + 1.0) {
            let g = exact_tilted_mean(xs, 0.5 * (t_lo + t_hi), x_min, x_max);
            return Ok(Some(TiltedMean1d {
                t_lo,
                t_hi,
                coeffs: Vec::new(),
                constant: Some(g),
            }));
        }

        let mid = 0.5 * (t_lo + t_hi);
        let half = 0.5 * width;
        for &m in NODE_SCHEDULE.iter() {
            let n_deg = m - 1;
            // Chebyshev-Lobatto nodes t_k = mid + half*cos(pi k / N).
            let f: Vec<f64> = (0..m)
                .map(|k| {
                    let t = mid + half * (std::f64::consts::PI * k as f64 / n_deg as f64).cos();
                    exact_tilted_mean(xs, t, x_min, x_max)
                })
                .collect();
            // DCT-I with halved end terms gives the interpolant coefficients.
            let mut coeffs = vec![0.0f64; m];
            for (j, cj) in coeffs.iter_mut().enumerate() {
                let mut acc = 0.5 * (f[0] + if j % 2 == 0 { f[n_deg] } else { -f[n_deg] });
                for (k, fk) in f.iter().enumerate().take(n_deg).skip(1) {
                    acc += fk * (std::f64::consts::PI * (j * k) as f64 / n_deg as f64).cos();
                }
                *cj = 2.0 * acc / n_deg as f64;
            }
            coeffs[0] *= 0.5;
            coeffs[n_deg] *= 0.5;

            let model = TiltedMean1d {
                t_lo,
                t_hi,
                coeffs,
                constant: None,
            };
            if model.certify(xs, x_min, x_max, scale) {
                return Ok(Some(model));
            }
        }
        Ok(None)
    }

    fn certify(&self, xs: &[f64], x_min: f64, x_max: f64, scale: f64) -> bool {
        let c_max = self.coeffs.iter().fold(0.0f64, |a, &c| a.max(c.abs()));
        let tail = self.coeffs[self.coeffs.len().saturating_sub(4)..]
            .iter()
            .fold(0.0f64, |a, &c| a.max(c.abs()));
        if tail > 1e-13 * c_max.max(1e-300) {
            return false;
        }
        let width = self.t_hi - self.t_lo;
        for i in 0..PROBES {
            let t = self.t_lo + width * (i as f64 + 0.5) / PROBES as f64;
            let want = exact_tilted_mean(xs, t, x_min, x_max);
            if (self.eval(t) - want).abs() > CERT_TOL * scale {
                return false;
            }
        }
        // Endpoints are where interpolation is most stressed.
        for t in [self.t_lo, self.t_hi] {
            let want = exact_tilted_mean(xs, t, x_min, x_max);
            if (self.eval(t) - want).abs() > CERT_TOL * scale {
                return false;
            }
        }
        true
    }

    /// Evaluate the series at t (Clenshaw recurrence).
    pub fn eval(&self, t: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        let u = (2.0 * t - (self.t_lo + self.t_hi)) / (self.t_hi - self.t_lo);
        let u2 = 2.0 * u;
        let mut b1 = 0.0f64;
        let mut b2 = 0.0f64;
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = u2.mul_add(b1, c - b2);
            b2 = b1;
            b1 = b0;
        }
        u.mul_add(b1, self.coeffs[0] - b2)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_lo, self.t_hi)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }
}
