use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CicadaError, Result};
use crate::experts::{ExpertConfig, ExpertKind};
use crate::meta::{ALPHA_MAX, ALPHA_MIN};
use crate::optim::OptimizerConfig;

/// How the detection threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdStrategy {
    /// Maximize F1 against the test labels.
    MaxF1,
    /// q-th percentile of the training anomaly scores.
    Percentile(f64),
}

impl Default for ThresholdStrategy {
    fn default() -> Self {
        ThresholdStrategy::Percentile(99.5)
    }
}

impl fmt::Display for ThresholdStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdStrategy::MaxF1 => f.write_str("max-f1"),
            ThresholdStrategy::Percentile(q) => write!(f, "percentile:{q}"),
        }
    }
}

impl FromStr for ThresholdStrategy {
    type Err = CicadaError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "max-f1" || s == "max_f1" {
            return Ok(ThresholdStrategy::MaxF1);
        }
        let bad = || CicadaError::BadConfig(format!("unknown threshold strategy `{s}`"));
        let rest = s.strip_prefix("percentile").ok_or_else(bad)?;
        let q = match rest.strip_prefix(':') {
            Some(q) => q.parse::<f64>().map_err(|_| bad())?,
            None if rest.is_empty() => 99.5,
            None => return Err(bad()),
        };
        if !(q > 0.0 && q < 100.0) {
            return Err(CicadaError::BadConfig(format!(
                "percentile must lie in (0, 100), got {q}"
            )));
        }
        Ok(ThresholdStrategy::Percentile(q))
    }
}

impl Serialize for ThresholdStrategy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ThresholdStrategy {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every knob of a training/detection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Window length `L`.
    pub window: usize,
    /// Number of training segments `N`.
    pub segments: usize,
    pub experts: Vec<ExpertKind>,
    pub expert: ExpertConfig,
    /// Common feature width `K` after projection.
    pub feature_dim: usize,
    pub meta_heads: usize,
    pub expert_heads: usize,
    pub decoder_hidden: usize,
    /// Weight of the expert losses against the reconstruction loss.
    pub lambda_1: f64,
    /// Penalty on the adaptation rates.
    pub lambda_meta: f64,
    /// Rate above which a meta-domain spawns a new one (`h_α`).
    pub alpha_threshold: f64,
    pub alpha_init: f64,
    /// Fixed adaptation rate at detection time (`α_1`).
    pub test_rate: f64,
    pub max_epoch: usize,
    pub epoch_add: usize,
    /// When false every expert keeps a single meta-domain.
    pub expansion: bool,
    pub optimizer: OptimizerConfig,
    pub alpha_optimizer: OptimizerConfig,
    /// Caps the windows drawn from a segment per step (all when unset).
    pub windows_per_step: Option<usize>,
    pub threshold: ThresholdStrategy,
    pub normalize_scores: bool,
    /// Standardize each variable with training mean and deviation.
    pub standardize: bool,
    /// Detection-time segment length; by default the series is split into
    /// `segments` equal parts.
    pub test_segment_len: Option<usize>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window: 10,
            segments: 16,
            experts: ExpertKind::DEFAULT_SET.to_vec(),
            expert: ExpertConfig::default(),
            feature_dim: 16,
            meta_heads: 4,
            expert_heads: 4,
            decoder_hidden: 32,
            lambda_1: 1000.0,
            lambda_meta: 2000.0,
            alpha_threshold: 5e-4,
            alpha_init: 1e-4,
            test_rate: 1e-3,
            max_epoch: 400,
            epoch_add: 50,
            expansion: true,
            optimizer: OptimizerConfig::adam(1e-3),
            alpha_optimizer: OptimizerConfig::sgd(1e-8),
            windows_per_step: None,
            threshold: ThresholdStrategy::default(),
            normalize_scores: true,
            standardize: false,
            test_segment_len: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CicadaError::BadConfig(m.to_string()));
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.segments == 0 {
            return bad("segments must be at least 1");
        }
        if self.experts.is_empty() {
            return bad("at least one expert is required");
        }
        let mut seen = self.experts.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.experts.len() {
            return bad("experts must be distinct");
        }
        self.expert.validate()?;
        if self.feature_dim == 0 || self.decoder_hidden == 0 {
            return bad("feature_dim and decoder_hidden must be positive");
        }
        for (name, h) in [("meta_heads", self.meta_heads), ("expert_heads", self.expert_heads)] {
            if h == 0 || self.feature_dim % h != 0 {
                return Err(CicadaError::BadConfig(format!(
                    "{name} = {h} must divide feature_dim = {}",
                    self.feature_dim
                )));
            }
        }
        if !(self.lambda_1 >= 0.0) || !(self.lambda_meta >= 0.0) {
            return bad("lambda_1 and lambda_meta must be non-negative");
        }
        if !(self.alpha_init >= ALPHA_MIN && self.alpha_init <= ALPHA_MAX) {
            return Err(CicadaError::BadConfig(format!(
                "alpha_init must lie in [{ALPHA_MIN}, {ALPHA_MAX}]"
            )));
        }
        if !(self.alpha_threshold > 0.0) || !(self.test_rate >= 0.0) {
            return bad("alpha_threshold must be positive and test_rate non-negative");
        }
        if self.max_epoch == 0 || self.epoch_add == 0 {
            return bad("max_epoch and epoch_add must be positive");
        }
        if self.windows_per_step == Some(0) || self.test_segment_len == Some(0) {
            return bad("windows_per_step and test_segment_len must be positive when set");
        }
        self.optimizer.validate("parameter")?;
        self.alpha_optimizer.validate("rate")?;
        if let ThresholdStrategy::Percentile(q) = self.threshold {
            if !(q > 0.0 && q < 100.0) {
                return bad("percentile must lie in (0, 100)");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("max-f1".parse::<ThresholdStrategy>().unwrap(), ThresholdStrategy::MaxF1);
        assert_eq!(
            "percentile:99.9".parse::<ThresholdStrategy>().unwrap(),
            ThresholdStrategy::Percentile(99.9)
        );
        assert_eq!(
            "percentile".parse::<ThresholdStrategy>().unwrap(),
            ThresholdStrategy::Percentile(99.5)
        );
        assert!("percentile:100".parse::<ThresholdStrategy>().is_err());
        assert!("median".parse::<ThresholdStrategy>().is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = RunConfig::default();
        c.window = 0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.meta_heads = 3;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.experts = vec![ExpertKind::Pca, ExpertKind::Pca];
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = RunConfig {
            threshold: ThresholdStrategy::MaxF1,
            windows_per_step: Some(32),
            ..RunConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
