use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::numerics::{percentile_sorted, spd_inverse, Matrix};

/// Diagonal loading added to feature covariances before inversion.
pub const GAUSSIAN_RIDGE: f64 = 1e-4;

/// Mean and regularized inverse covariance of projected features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGaussian {
    pub mean: Vec<f64>,
    pub precision: Matrix,
}

impl FeatureGaussian {
    pub fn fit(features: &Matrix) -> Result<Self> {
        let (n, k) = features.shape();
        if n == 0 {
            return Err(CicadaError::EmptyBatch);
        }
        let mut mean = vec![0.0; k];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut cov = Matrix::zeros(k, k);
        for i in 0..n {
            let row = features.row(i);
            for a in 0..k {
                let da = row[a] - mean[a];
                for b in 0..k {
                    cov[(a, b)] += da * (row[b] - mean[b]) / n as f64;
                }
            }
        }
        let loaded = cov.add(&Matrix::identity(k).scale(GAUSSIAN_RIDGE))?;
        Ok(Self {
            mean,
            precision: spd_inverse(&loaded)?,
        })
    }

    /// `(f − μ)ᵀ Σ⁻¹ (f − μ)`.
    pub fn distance_sq(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.mean.len() {
            return Err(CicadaError::DimensionMismatch {
                expected: self.mean.len(),
                found: f.len(),
            });
        }
        let d: Vec<f64> = f.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let mut total = 0.0;
        for a in 0..d.len() {
            let row = self.precision.row(a);
            total += d[a] * d.iter().zip(row).map(|(x, p)| x * p).sum::<f64>();
        }
        Ok(total)
    }
}

/// Robust centring and scaling of one expert's scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNormalizer {
    pub median: f64,
    pub mad: f64,
}

impl ScoreNormalizer {
    pub fn fit(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(CicadaError::EmptyScores);
        }
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = percentile_sorted(&sorted, 50.0);
        let mut dev: Vec<f64> = scores.iter().map(|s| (s - median).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad = percentile_sorted(&dev, 50.0);
        Ok(Self {
            median,
            mad: if mad < 1e-12 { 1.0 } else { mad },
        })
    }

    pub fn apply(&self, score: f64) -> f64 {
        (score - self.median) / self.mad
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpertStats {
    /// Feature distribution per meta-domain (feature-scored kinds only).
    pub gaussians: Vec<Option<FeatureGaussian>>,
    /// Pooled over all training windows; used for meta-domains that never
    /// received any.
    pub pooled: Option<FeatureGaussian>,
    pub normalizer: Option<ScoreNormalizer>,
}

impl ExpertStats {
    pub fn gaussian(&self, domain: usize) -> Option<&FeatureGaussian> {
        self.gaussians
            .get(domain)
            .and_then(Option::as_ref)
            .or(self.pooled.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mahalanobis_of_mean_is_zero() {
        let f = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.0], vec![2.0, 1.0]]);
        let g = FeatureGaussian::fit(&f).unwrap();
        assert!(g.distance_sq(&[2.0, 1.0]).unwrap().abs() < 1e-12);
        assert!(g.distance_sq(&[3.0, 0.0]).unwrap() > 0.0);
    }

    #[test]
    fn degenerate_mad_falls_back_to_one() {
        let n = ScoreNormalizer::fit(&[2.0, 2.0, 2.0, 5.0]).unwrap();
        assert_eq!(n.median, 2.0);
        assert_eq!(n.mad, 1.0);
        assert_eq!(n.apply(5.0), 3.0);
    }

    #[test]
    fn median_and_mad() {
        let n = ScoreNormalizer::fit(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap();
        assert_eq!(n.median, 3.0);
        assert_eq!(n.mad, 1.0);
    }
}
