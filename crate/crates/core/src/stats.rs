//! Monte-Carlo summary statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = pairwise_sum(xs) / n as f64;
        if n < 2 {
            return Self { mean, se: f64::INFINITY, n };
        }
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let var = ss / (n - 1) as f64;
        Self {
            mean,
            se: (var / n as f64).sqrt(),
            n,
        }
    }

    /// Self-normalized importance-sampling estimate `Σ wᵢxᵢ / Σ wᵢ` with a
    /// delta-method standard error.
    pub fn weighted(xs: &[f64], weights: &[f64]) -> Self {
        assert_eq!(xs.len(), weights.len());
        let n = xs.len();
        let wsum = pairwise_sum(weights);
        if n == 0 || wsum <= 0.0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let num: Vec<f64> = xs.iter().zip(weights).map(|(x, w)| x * w).collect();
        let mean = pairwise_sum(&num) / wsum;
        let var: f64 = xs
            .iter()
            .zip(weights)
            .map(|(x, w)| w * w * (x - mean) * (x - mean))
            .sum();
        Self {
            mean,
            se: var.sqrt() / wsum,
            n,
        }
    }

    /// Number of standard errors separating the estimate from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.se
    }

    pub fn within(&self, target: f64, n_se: f64) -> bool {
        (self.mean - target).abs() <= n_se * self.se
    }
}

/// Pairwise summation; the reduction order is fixed so results do not depend
/// on how the input was produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Grouped delete-one jackknife for a statistic of the mean of per-sample
/// feature vectors.
///
/// `samples[i]` is the feature vector of sample `i`; `statistic` maps a mean
/// feature vector to the quantity of interest. Returns the full-sample value
/// and its jackknife standard error.
pub fn jackknife<F>(samples: &[Vec<f64>], groups: usize, statistic: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = samples.len();
    assert!(n >= 2, "jackknife needs at least two samples");
    let dim = samples[0].len();
    let groups = groups.clamp(2, n);
    let mut group_sums = vec![vec![0.0; dim]; groups];
    let mut group_counts = vec![0usize; groups];
    for (i, s) in samples.iter().enumerate() {
        let g = i * groups / n;
        group_counts[g] += 1;
        for (acc, v) in group_sums[g].iter_mut().zip(s) {
            *acc += v;
        }
    }
    let mut total = vec![0.0; dim];
    for gs in &group_sums {
        for (t, v) in total.iter_mut().zip(gs) {
            *t += v;
        }
    }
    let full_mean: Vec<f64> = total.iter().map(|t| t / n as f64).collect();
    let full = statistic(&full_mean);

    let mut thetas = Vec::with_capacity(groups);
    let mut buf = vec![0.0; dim];
    for (gs, &cnt) in group_sums.iter().zip(&group_counts) {
        let m = (n - cnt) as f64;
        for ((b, t), g) in buf.iter_mut().zip(&total).zip(gs) {
            *b = (t - g) / m;
        }
        thetas.push(statistic(&buf));
    }
    let g = groups as f64;
    let tbar = thetas.iter().sum::<f64>() / g;
    let var = (g - 1.0) / g * thetas.iter().map(|t| (t - tbar) * (t - tbar)).sum::<f64>();
    (full, var.sqrt())
}

/// Pearson χ² goodness-of-fit test. Returns `(statistic, p_value)`.
pub fn chi_square_gof(observed: &[usize], expected_probs: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected_probs.len() {
        return Err(Error::DimensionMismatch {
            expected: expected_probs.len(),
            got: observed.len(),
        });
    }
    if observed.len() < 2 {
        return Err(Error::invalid("observed", "need at least two categories"));
    }
    let n: usize = observed.iter().sum();
    let psum: f64 = expected_probs.iter().sum();
    let stat: f64 = observed
        .iter()
        .zip(expected_probs)
        .filter(|(_, &p)| p > 0.0)
        .map(|(&o, &p)| {
            let e = n as f64 * p / psum;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (observed.len() - 1) as f64;
    let dist = ChiSquared::new(dof).map_err(|e| Error::invalid("dof", e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}

/// Result of a weighted straight-line fit `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn weighted_line_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> LineFit {
    let sw: f64 = ws.iter().sum();
    let mx = xs.iter().zip(ws).map(|(x, w)| w * x).sum::<f64>() / sw;
    let my = ys.iter().zip(ws).map(|(y, w)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for ((x, y), w) in xs.iter().zip(ys).zip(ws) {
        sxx += w * (x - mx) * (x - mx);
        sxy += w * (x - mx) * (y - my);
        syy += w * (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Least-squares fit of `y = slope·x` through the origin, with R² measured
/// against the uncentered total sum of squares.
pub fn weighted_proportional_fit(xs: &[f64], ys: &[f64], ws: &[f64]) -> LineFit {
    let sxy: f64 = xs.iter().zip(ys).zip(ws).map(|((x, y), w)| w * x * y).sum();
    let sxx: f64 = xs.iter().zip(ws).map(|(x, w)| w * x * x).sum();
    let slope = sxy / sxx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .zip(ws)
        .map(|((x, y), w)| w * (y - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().zip(ws).map(|(y, w)| w * y * y).sum();
    LineFit {
        slope,
        intercept: 0.0,
        r_squared: if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_basic() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3, se = sqrt(5/12)
        assert!((e.se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn weighted_reduces_to_plain_mean() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let e = Estimate::weighted(&xs, &[2.0; 4]);
        assert!((e.mean - 2.5).abs() < 1e-15);
    }

    #[test]
    fn jackknife_of_linear_statistic_matches_standard_error() {
        let xs: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let samples: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let (v, se) = jackknife(&samples, 200, |m| m[0]);
        let e = Estimate::from_samples(&xs);
        assert!((v - e.mean).abs() < 1e-12);
        assert!((se - e.se).abs() < 1e-10 * e.se.max(1.0));
    }

    #[test]
    fn chi_square_perfect_fit() {
        let (s, p) = chi_square_gof(&[30, 70], &[0.3, 0.7]).unwrap();
        assert!(s.abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_one_dof_tail() {
        // statistic 3.841 is the 95% quantile for one degree of freedom
        let (s, p) = chi_square_gof(&[60, 40], &[0.5, 0.5]).unwrap();
        assert!((s - 4.0).abs() < 1e-12);
        assert!((p - 0.0455).abs() < 1e-3);
    }

    #[test]
    fn line_fit_exact() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x).collect();
        let f = weighted_line_fit(&xs, &ys, &[1.0; 4]);
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }
}
