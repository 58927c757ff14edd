//! Power-law exponent fitting: ordinary least squares of ln(error) on ln(n).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fitted decay exponent: error ~ C * n^(-beta_hat).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateFit {
    /// Decay exponent (minus the log-log slope).
    pub beta_hat: f64,
    /// Intercept of the log-log fit, i.e. ln(C).
    pub intercept: f64,
    /// Standard error of the slope from the usual OLS variance formula.
    pub stderr_beta: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fit with all points.
pub fn fit_rate(points: &[(usize, f64)]) -> Result<RateFit> {
    fit_rate_with_burn_in(points, 0)
}

/// Fit after dropping the `burn_in` smallest-n points.
pub fn fit_rate_with_burn_in(points: &[(usize, f64)], burn_in: usize) -> Result<RateFit> {
    let mut pts: Vec<(usize, f64)> = points.to_vec();
    pts.sort_by_key(|p| p.0);
    let pts = &pts[burn_in.min(pts.len())..];

    if pts.len() < 3 {
        return Err(Error::invalid(format!(
            "fit_rate: need at least 3 points after burn-in, have {}",
            pts.len()
        )));
    }
    {
        let mut ns: Vec<usize> = pts.iter().map(|p| p.0).collect();
        ns.dedup();
        if ns.len() != pts.len() {
            return Err(Error::invalid("fit_rate: duplicate n values"));
        }
    }
    if pts.iter().any(|&(n, e)| n == 0 || !(e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid(
            "fit_rate: errors must be strictly positive and finite",
        ));
    }

    let k = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|&(_, e)| e.ln()).collect();
    let x_bar = xs.iter().sum::<f64>() / k;
    let y_bar = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - x_bar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_bar) * (y - y_bar))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;

    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        .max(0.0);
    let sst: f64 = ys.iter().map(|y| (y - y_bar).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        // Constant response: the fit is exact by construction.
        1.0
    };
    let stderr_beta = (ssr / ((k - 2.0) * sxx)).sqrt();

    Ok(RateFit {
        beta_hat: -slope,
        intercept,
        stderr_beta,
        r_squared,
        n_points: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn exact_power_law_is_recovered() {
        let pts: Vec<(usize, f64)> = [100usize, 1000, 10000]
            .iter()
            .map(|&n| (n, 3.7 * (n as f64).powf(-0.5)))
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!((fit.beta_hat - 0.5).abs() < 1e-12, "beta {}", fit.beta_hat);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.stderr_beta < 1e-12);
        assert!((fit.intercept - 3.7f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn constant_errors_give_zero_exponent() {
        let pts = vec![(10, 0.5), (100, 0.5), (1000, 0.5)];
        let fit = fit_rate(&pts).unwrap();
        assert!(fit.beta_hat.abs() < 1e-15);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn noisy_quarter_rate_lands_in_window() {
        let mut rng = crate::rng::stream(2024, &[0x51]);
        let pts: Vec<(usize, f64)> = (0..12)
            .map(|k| {
                let n = (100.0 * 10f64.powf(k as f64 / 4.0)) as usize;
                let noise = 1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0);
                (n, 2.0 * (n as f64).powf(-0.25) * noise)
            })
            .collect();
        let fit = fit_rate(&pts).unwrap();
        assert!(
            fit.beta_hat > 0.23 && fit.beta_hat < 0.27,
            "beta {}",
            fit.beta_hat
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(fit_rate(&[(10, 1.0), (20, 0.5)]).is_err());
        assert!(fit_rate(&[(10, 1.0), (20, 0.5), (30, -0.1)]).is_err());
        assert!(fit_rate(&[(10, 1.0), (20, 0.5), (30, 0.0)]).is_err());
        assert!(fit_rate(&[(10, 1.0), (10, 0.5), (30, 0.2)]).is_err());
    }

    #[test]
    fn burn_in_drops_smallest_n() {
        // First point is off-trend; burn-in restores the exact fit.
        let mut pts = vec![(10usize, 100.0)];
        pts.extend(
            [100usize, 1000, 10000]
                .iter()
                .map(|&n| (n, (n as f64).powf(-0.5))),
        );
        let with = fit_rate_with_burn_in(&pts, 1).unwrap();
        assert!((with.beta_hat - 0.5).abs() < 1e-12);
        let without = fit_rate(&pts).unwrap();
        assert!((without.beta_hat - 0.5).abs() > 0.1);
    }

    #[test]
    fn stderr_matches_direct_ols_formula() {
        // Hand-checkable 4-point fit with one perturbed response.
        let pts = vec![(10usize, 1.0), (100, 0.4), (1000, 0.1), (10000, 0.03)];
        let fit = fit_rate(&pts).unwrap();
        // Recompute with the textbook formulas.
        let xs: Vec<f64> = pts.iter().map(|p| (p.0 as f64).ln()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let xb = xs.iter().sum::<f64>() / 4.0;
        let yb = ys.iter().sum::<f64>() / 4.0;
        let sxx: f64 = xs.iter().map(|x| (x - xb).powi(2)).sum();
        let b: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (x - xb) * (y - yb))
            .sum::<f64>()
            / sxx;
        let a = yb - b * xb;
        let ssr: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - a - b * x).powi(2))
            .sum();
        let want = (ssr / (2.0 * sxx)).sqrt();
        assert!((fit.stderr_beta - want).abs() < 1e-14);
        assert!((fit.beta_hat + b).abs() < 1e-14);
    }
}
