//! Line fits on log-log data and rank correlation.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimate::EstimateWithError;

/// A fitted line `y = intercept + slope·x` with a 95% interval on the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

impl LineFit {
    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Weighted least squares with residual-scaled standard errors and a
/// Student-t 95% interval. Unit weights give ordinary least squares.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n < 3 || y.len() != n || w.len() != n {
        return Err(Error::Insufficient {
            op: "line fit",
            reason: format!("need at least 3 matched points, got {n}"),
        });
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm) * (a - xm)).sum();
    if sxx <= 0.0 {
        return Err(Error::Insufficient {
            op: "line fit",
            reason: "abscissae are all equal".into(),
        });
    }
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - xm) * (c - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| {
            let r = c - intercept - slope * a;
            b * r * r
        })
        .sum();
    let dof = (n - 2) as f64;
    let slope_stderr = (rss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok(LineFit {
        slope,
        intercept,
        slope_stderr,
        ci_low: slope - t * slope_stderr,
        ci_high: slope + t * slope_stderr,
        points: n,
    })
}

/// Slope of `log estimate` against `log N`, weighted by `(estimate/SE)²`.
///
/// Refuses to fit when fewer than 4 points are given, when an estimate is
/// not positive, or when every estimate is consistent with zero.
pub fn fit_loglog(ns: &[f64], estimates: &[EstimateWithError]) -> Result<LineFit> {
    if ns.len() < 4 || estimates.len() != ns.len() {
        return Err(Error::Insufficient {
            op: "slope fit",
            reason: format!("need at least 4 grid points, got {}", ns.len().min(estimates.len())),
        });
    }
    if estimates.iter().any(|e| !e.value.is_finite()) {
        return Err(Error::Insufficient {
            op: "slope fit",
            reason: "non-finite estimate".into(),
        });
    }
    if estimates.iter().all(|e| e.value.abs() <= 3.0 * e.total_error()) || estimates.iter().any(|e| e.value <= 0.0) {
        return Err(Error::Insufficient {
            op: "slope fit",
            reason: "estimates consistent with zero".into(),
        });
    }
    let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = estimates.iter().map(|e| e.value.ln()).collect();
    let weighted = estimates.iter().all(|e| e.total_error() > 0.0);
    let w: Vec<f64> = if weighted {
        estimates
            .iter()
            .map(|e| {
                let rel = e.total_error() / e.value;
                1.0 / (rel * rel)
            })
            .collect()
    } else {
        vec![1.0; ns.len()]
    };
    weighted_line_fit(&x, &y, &w)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = 0.5 * (i + j) as f64 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::Method;

    #[test]
    fn exact_line_is_recovered() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = weighted_line_fit(&x, &y, &[1.0; 5]).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-14);
        assert!((fit.intercept - 2.0).abs() < 1e-14);
        assert!(fit.slope_stderr < 1e-12);
    }

    #[test]
    fn loglog_refuses_zero_estimates() {
        let ns = [4.0, 16.0, 64.0, 256.0];
        let zeros: Vec<_> = ns
            .iter()
            .map(|_| EstimateWithError::monte_carlo(1e-6, 1e-3, 100, 1))
            .collect();
        assert!(matches!(fit_loglog(&ns, &zeros), Err(Error::Insufficient { .. })));
        let power: Vec<_> = ns
            .iter()
            .map(|n| EstimateWithError::exact(3.0 / n, Method::ClosedForm))
            .collect();
        let fit = fit_loglog(&ns, &power).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!(fit_loglog(&ns[..3], &power[..3]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 20.0, 25.0, 100.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]);
        assert!((r - 0.8).abs() < 1e-12);
    }
}
