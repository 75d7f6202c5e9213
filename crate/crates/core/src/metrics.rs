//! Summary statistics for experiment outputs.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Nearest-rank percentile of `xs` for `q` in `[0, 1]`; `NaN` when empty.
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    v[rank.saturating_sub(1).min(v.len() - 1)]
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Empirical CDF as `(value, fraction ≤ value)` at each distinct value.
pub fn ecdf(xs: &[f64]) -> Vec<(f64, f64)> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = (i + 1) as f64 / n,
            _ => out.push((*x, (i + 1) as f64 / n)),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanCi {
    pub mean: f64,
    /// Half-width of the two-sided 95% interval.
    pub half_width: f64,
    pub n: usize,
}

/// Mean with a Student-t 95% confidence interval. A single sample has a
/// zero-width interval.
pub fn mean_ci95(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return MeanCi {
            mean: m,
            half_width: 0.0,
            n,
        };
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    MeanCi {
        mean: m,
        half_width: t * (var / n as f64).sqrt(),
        n,
    }
}

/// The usual latency-style digest.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Digest {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
}

pub fn digest(xs: &[f64]) -> Digest {
    Digest {
        count: xs.len(),
        mean: mean(xs),
        p50: percentile(xs, 0.5),
        p90: percentile(xs, 0.9),
        p99: percentile(xs, 0.99),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.5), 50.0);
        assert_eq!(percentile(&xs, 0.9), 90.0);
        assert_eq!(percentile(&xs, 0.99), 99.0);
        assert_eq!(percentile(&xs, 0.0), 1.0);
        assert!(percentile(&[], 0.5).is_nan());
    }

    #[test]
    fn ecdf_merges_ties() {
        assert_eq!(
            ecdf(&[1.0, 0.5, 1.0, 2.0]),
            vec![(0.5, 0.25), (1.0, 0.75), (2.0, 1.0)]
        );
    }

    #[test]
    fn ci_matches_t_table() {
        // t(0.975, 9) = 2.262157
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let ci = mean_ci95(&xs);
        let sd = (xs.iter().map(|x| (x - 4.5f64).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((ci.mean - 4.5).abs() < 1e-12);
        assert!((ci.half_width - 2.262157 * sd / 10f64.sqrt()).abs() < 1e-5);
        assert_eq!(mean_ci95(&[3.0]).half_width, 0.0);
    }
}
