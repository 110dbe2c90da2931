use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::experts::ExpertState;
use crate::fusion::FusionParams;
use crate::meta::{adapt_params, compute_delta};
use crate::metrics::{apply_threshold, max_f1_threshold};
use crate::numerics::{percentile_sorted, Matrix};
use crate::series::TimeSeries;

use super::config::ThresholdStrategy;
use super::model::Model;
use super::windows::{make_windows, partition_segments, WindowSet, WindowedSegment};

/// Per-window outputs of segment-wise adaptation.
pub(crate) struct SegmentScores {
    /// `[expert][window]` residual scores; empty for feature-scored experts.
    pub raw: Vec<Vec<f64>>,
    /// `[expert]` projected features under the adapted selected payload,
    /// kept for feature-scored experts only.
    pub features: Vec<Option<Matrix>>,
    /// `[expert][window]` meta-domain the window was scored with.
    pub window_domain: Vec<Vec<usize>>,
    /// `[expert][segment]`.
    pub selected: Vec<Vec<usize>>,
    /// `n×J` expert weights.
    pub weights: Matrix,
}

/// For each segment and expert: pick the meta-domain on the whole segment,
/// adapt it with `rate`, and score every window of the segment with it;
/// expert weights come from fusing the features of all meta-domains.
pub(crate) fn score_segments(
    experts: &[ExpertState],
    fusion: &FusionParams,
    windows: &WindowSet,
    segments: &[WindowedSegment],
    rate: f64,
) -> Result<SegmentScores> {
    let n = windows.len();
    let n_exp = experts.len();
    let feature_scored: Vec<bool> = experts
        .iter()
        .map(|e| !e.kind().scores_by_residual())
        .collect();
    let mut raw: Vec<Vec<f64>> = feature_scored
        .iter()
        .map(|&f| if f { Vec::new() } else { Vec::with_capacity(n) })
        .collect();
    let mut feature_rows: Vec<Vec<Matrix>> = vec![Vec::new(); n_exp];
    let mut window_domain = vec![Vec::with_capacity(n); n_exp];
    let mut selected = vec![Vec::with_capacity(segments.len()); n_exp];
    let mut weight_rows = Vec::with_capacity(segments.len());

    for seg in segments {
        let batch = windows.range_batch(seg.windows.clone());
        let mut feats_all: Vec<Vec<Matrix>> = Vec::with_capacity(n_exp);
        for (j, e) in experts.iter().enumerate() {
            let choice = compute_delta(&e.expert, &e.domains, &batch)?;
            let k_sel = choice.selected;
            let (adapted, _) = adapt_params(&e.expert, &e.domains.params[k_sel], rate, &batch)?;
            let mut feats = Vec::with_capacity(e.domains.len());
            for k in 0..e.domains.len() {
                let params = if k == k_sel {
                    &adapted
                } else {
                    &e.domains.params[k]
                };
                feats.push(e.features(params, &batch)?);
            }
            if feature_scored[j] {
                feature_rows[j].push(feats[k_sel].clone());
            } else {
                let s = e
                    .expert
                    .residual_scores(&adapted, &batch)?
                    .expect("residual-scored expert");
                raw[j].extend(s);
            }
            window_domain[j].extend(std::iter::repeat_n(k_sel, batch.len()));
            selected[j].push(k_sel);
            feats_all.push(feats);
        }
        let out = fusion.forward(&batch.current, &feats_all)?;
        weight_rows.push(out.expert_weights);
    }
    let features = feature_rows
        .into_iter()
        .zip(&feature_scored)
        .map(|(rows, &f)| {
            if f {
                Matrix::vstack(&rows.iter().collect::<Vec<_>>()).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let weights = Matrix::vstack(&weight_rows.iter().collect::<Vec<_>>())?;
    Ok(SegmentScores {
        raw,
        features,
        window_domain,
        selected,
        weights,
    })
}

/// Weighted sum of (optionally normalized) expert scores. Returns the
/// combined score and the `n×J` component matrix.
pub(crate) fn combine_scores(
    experts: &[ExpertState],
    raw: &[Vec<f64>],
    weights: &Matrix,
    normalize: bool,
) -> Result<(Vec<f64>, Matrix)> {
    let n = weights.rows();
    let mut components = Matrix::zeros(n, experts.len());
    for (j, e) in experts.iter().enumerate() {
        let norm = if normalize {
            Some(e.stats.normalizer.ok_or_else(|| CicadaError::MissingStats {
                expert: e.kind().to_string(),
            })?)
        } else {
            None
        };
        for w in 0..n {
            let s = raw[j][w];
            components[(w, j)] = norm.map_or(s, |z| z.apply(s));
        }
    }
    let anosc = (0..n)
        .map(|w| {
            components
                .row(w)
                .iter()
                .zip(weights.row(w))
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    Ok((anosc, components))
}

/// Scores and (once thresholded) decisions for every scored time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub experts: Vec<String>,
    /// Length of the scored series; times before `first_time` are unscored.
    pub series_len: usize,
    /// Time of each scored window.
    pub times: Vec<usize>,
    pub anosc: Vec<f64>,
    /// `n×J` expert weights.
    pub weights: Matrix,
    /// `n×J` per-expert scores as combined (normalized when enabled).
    pub components: Matrix,
    pub threshold: Option<f64>,
    pub predictions: Option<Vec<u8>>,
}

impl DetectionReport {
    pub fn first_time(&self) -> usize {
        self.times.first().copied().unwrap_or(self.series_len)
    }

    /// Labels aligned with the scored times.
    pub fn aligned_labels(&self, labels: &[u8]) -> Result<Vec<u8>> {
        if labels.len() != self.series_len {
            return Err(CicadaError::LengthMismatch {
                left: labels.len(),
                right: self.series_len,
            });
        }
        Ok(self.times.iter().map(|&t| labels[t]).collect())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.predictions = Some(apply_threshold(&self.anosc, threshold));
        self.threshold = Some(threshold);
        self
    }
}

/// Adapts the model to each test segment and scores every window.
pub fn adapt_and_score(model: &Model, series: &TimeSeries) -> Result<DetectionReport> {
    if series.dim() != model.dim() {
        return Err(CicadaError::DimensionMismatch {
            expected: model.dim(),
            found: series.dim(),
        });
    }
    let cfg = &model.config;
    let values = model.scaler.transform(&series.values)?;
    let windows = make_windows(&values, cfg.window)?;
    let n = windows.len();
    let count = match cfg.test_segment_len {
        Some(len) => n.div_ceil(len),
        None => cfg.segments.min(n),
    };
    let segments = partition_segments(n, count)?;
    let scoring = score_segments(&model.experts, &model.fusion, &windows, &segments, cfg.test_rate)?;
    let mut raw = scoring.raw;
    for (j, e) in model.experts.iter().enumerate() {
        if let Some(feats) = &scoring.features[j] {
            raw[j] = (0..feats.rows())
                .map(|w| {
                    let g = e.stats.gaussian(scoring.window_domain[j][w]).ok_or_else(|| {
                        CicadaError::MissingStats {
                            expert: e.kind().to_string(),
                        }
                    })?;
                    g.distance_sq(feats.row(w))
                })
                .collect::<Result<Vec<_>>>()?;
        }
    }
    let (anosc, components) =
        combine_scores(&model.experts, &raw, &scoring.weights, cfg.normalize_scores)?;
    if anosc.iter().any(|s| !s.is_finite()) {
        return Err(CicadaError::NonFiniteLoss {
            epoch: 0,
            component: "anomaly score",
            expert: None,
        });
    }
    Ok(DetectionReport {
        experts: model.experts.iter().map(|e| e.kind().to_string()).collect(),
        series_len: series.len(),
        times: (0..n).map(|w| windows.time(w)).collect(),
        anosc,
        weights: scoring.weights,
        components,
        threshold: None,
        predictions: None,
    })
}

/// Picks the decision threshold. `labels` must align with `scores`;
/// `train_scores` must be sorted ascending.
pub fn select_threshold(
    scores: &[f64],
    strategy: ThresholdStrategy,
    labels: Option<&[u8]>,
    train_scores: &[f64],
) -> Result<f64> {
    match strategy {
        ThresholdStrategy::MaxF1 => {
            let labels = labels.ok_or(CicadaError::MissingLabels)?;
            Ok(max_f1_threshold(scores, labels)?.0)
        }
        ThresholdStrategy::Percentile(q) => {
            if train_scores.is_empty() {
                return Err(CicadaError::EmptyScores);
            }
            Ok(percentile_sorted(train_scores, q))
        }
    }
}

/// Scores `series` and applies the threshold chosen by `strategy` (the
/// model's configured strategy when `None`). Labels, when needed, come from
/// the series.
pub fn detect(
    model: &Model,
    series: &TimeSeries,
    strategy: Option<ThresholdStrategy>,
) -> Result<DetectionReport> {
    let report = adapt_and_score(model, series)?;
    let strategy = strategy.unwrap_or(model.config.threshold);
    let labels = match (&series.labels, strategy) {
        (Some(l), _) => Some(report.aligned_labels(l)?),
        (None, ThresholdStrategy::MaxF1) => return Err(CicadaError::MissingLabels),
        (None, _) => None,
    };
    let c = select_threshold(&report.anosc, strategy, labels.as_deref(), &model.train_scores)?;
    Ok(report.with_threshold(c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let c = select_threshold(
            &[1.0, 2.0, 3.0, 4.0],
            ThresholdStrategy::MaxF1,
            Some(&[0, 0, 1, 1]),
            &[],
        )
        .unwrap();
        assert_eq!(c, 2.5);
        let c = select_threshold(&[], ThresholdStrategy::Percentile(100.0), None, &[1.0, 2.0, 3.0])
            .unwrap();
        assert_eq!(c, 3.0);
        assert!(matches!(
            select_threshold(&[1.0], ThresholdStrategy::MaxF1, None, &[]),
            Err(CicadaError::MissingLabels)
        ));
        assert!(matches!(
            select_threshold(&[1.0], ThresholdStrategy::Percentile(50.0), None, &[]),
            Err(CicadaError::EmptyScores)
        ));
    }
}
