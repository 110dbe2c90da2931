//! Browser bindings. The page drives three operations on a [`Session`]:
//! generate a labelled series, train in small epoch batches, and score.

use cicada_core::datagen::{generate, AnomalySpec, GenConfig, GenKind};
use cicada_core::metrics::{auprc, auroc, point_adjust, prf};
use cicada_core::pipeline::{detect, Model, ThresholdStrategy, Trainer};
use cicada_core::{CicadaError, ExpertKind, Result, RunConfig, TimeSeries};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Variables shown in the series plot.
const SHOWN: usize = 3;

#[derive(Serialize)]
struct SeriesView {
    length: usize,
    dim: usize,
    values: Vec<Vec<f64>>,
    labels: Vec<u8>,
    domains: Vec<usize>,
}

#[derive(Serialize)]
struct Progress {
    epoch: usize,
    max_epoch: usize,
    experts: Vec<String>,
    weights: Vec<Vec<f64>>,
    meta_domains: Vec<usize>,
    reconstruction: f64,
}

#[derive(Serialize)]
struct Scores {
    times: Vec<usize>,
    anosc: Vec<f64>,
    predictions: Vec<u8>,
    labels: Vec<u8>,
    threshold: f64,
    f1: f64,
    f1_pa: f64,
    auroc: f64,
    auprc: f64,
}

#[derive(Default)]
pub struct Session {
    series: Option<TimeSeries>,
    trainer: Option<Trainer>,
    model: Option<Model>,
}

fn json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| CicadaError::BadConfig(e.to_string()))
}

impl Session {
    pub fn generate(&mut self, kind: &str, length: usize, dim: usize, rate: f64, seed: u64) -> Result<String> {
        let kind: GenKind = kind.parse()?;
        let mut cfg = GenConfig::preset(kind);
        cfg.length = length;
        cfg.dim = dim;
        cfg.latent = cfg.latent.min(dim);
        cfg.seed = seed;
        if kind == GenKind::Tcpd {
            cfg.window = 5;
        }
        cfg.anomalies = (rate > 0.0).then(|| AnomalySpec {
            rate,
            magnitude: 5.0,
            start_fraction: 0.5,
        });
        let g = generate(&cfg)?;
        let shown = SHOWN.min(g.series.dim());
        let values = (0..shown).map(|c| g.series.values.col(c)).collect();
        let view = SeriesView {
            length: g.series.len(),
            dim: g.series.dim(),
            values,
            labels: g.series.labels.clone().unwrap_or_default(),
            domains: g.domains,
        };
        self.series = Some(g.series);
        self.trainer = None;
        self.model = None;
        json(&view)
    }

    /// Trains on the first half of the series, which holds no anomalies.
    pub fn start_training(&mut self, experts: &str, epochs: usize, seed: u64) -> Result<()> {
        let series = self.series.as_ref().ok_or(CicadaError::EmptyScores)?;
        let experts = experts
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<ExpertKind>>>()?;
        let cfg = RunConfig {
            window: 5,
            segments: 4,
            experts,
            feature_dim: 8,
            meta_heads: 2,
            expert_heads: 2,
            decoder_hidden: 16,
            max_epoch: epochs,
            epoch_add: epochs.max(1),
            expansion: false,
            threshold: ThresholdStrategy::MaxF1,
            seed,
            ..RunConfig::default()
        };
        let train = series.slice(0, series.len() / 2);
        self.trainer = Some(Trainer::new(&train, cfg)?);
        self.model = None;
        Ok(())
    }

    /// Runs up to `n` epochs and reports the weight history so far.
    pub fn train_epochs(&mut self, n: usize) -> Result<String> {
        let trainer = self.trainer.as_mut().ok_or(CicadaError::EmptyScores)?;
        let max_epoch = trainer.config().max_epoch;
        for _ in 0..n {
            if trainer.epoch() >= max_epoch {
                break;
            }
            trainer.run_epoch()?;
        }
        let h = trainer.history();
        let progress = Progress {
            epoch: trainer.epoch(),
            max_epoch,
            experts: trainer.config().experts.iter().map(|k| k.to_string()).collect(),
            weights: h.epochs.iter().map(|r| r.weights.clone()).collect(),
            meta_domains: trainer.experts().iter().map(|e| e.domains.len()).collect(),
            reconstruction: h.epochs.last().map_or(f64::NAN, |r| r.reconstruction_loss),
        };
        json(&progress)
    }

    /// Scores the second half with the max-F1 threshold.
    pub fn score(&mut self) -> Result<String> {
        if self.model.is_none() {
            let trainer = self.trainer.take().ok_or(CicadaError::EmptyScores)?;
            self.model = Some(trainer.finish()?);
        }
        let (Some(model), Some(series)) = (&self.model, &self.series) else {
            return Err(CicadaError::EmptyScores);
        };
        let test = series.slice(series.len() / 2, series.len());
        let labels = test.labels.clone().ok_or(CicadaError::MissingLabels)?;
        let report = detect(model, &test, Some(ThresholdStrategy::MaxF1))?;
        let aligned = report.aligned_labels(&labels)?;
        let pred = report.predictions.clone().unwrap_or_default();
        let scores = Scores {
            f1: prf(&pred, &aligned)?.f1,
            f1_pa: prf(&point_adjust(&pred, &aligned)?, &aligned)?.f1,
            auroc: auroc(&report.anosc, &aligned)?,
            auprc: auprc(&report.anosc, &aligned)?,
            threshold: report.threshold.unwrap_or(f64::NAN),
            times: report.times.iter().map(|t| t + series.len() / 2).collect(),
            anosc: report.anosc,
            predictions: pred,
            labels: aligned,
        };
        json(&scores)
    }
}

#[wasm_bindgen]
pub struct Demo(Session);

fn js(e: CicadaError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new() -> Demo {
        Demo(Session::default())
    }

    pub fn generate(&mut self, kind: &str, length: usize, dim: usize, rate: f64, seed: u32) -> std::result::Result<String, JsError> {
        self.0.generate(kind, length, dim, rate, u64::from(seed)).map_err(js)
    }

    #[wasm_bindgen(js_name = startTraining)]
    pub fn start_training(&mut self, experts: &str, epochs: usize, seed: u32) -> std::result::Result<(), JsError> {
        self.0.start_training(experts, epochs, u64::from(seed)).map_err(js)
    }

    #[wasm_bindgen(js_name = trainEpochs)]
    pub fn train_epochs(&mut self, n: usize) -> std::result::Result<String, JsError> {
        self.0.train_epochs(n).map_err(js)
    }

    pub fn score(&mut self) -> std::result::Result<String, JsError> {
        self.0.score().map_err(js)
    }
}

impl Default for Demo {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a_full_session_produces_metrics() {
        let mut s = Session::default();
        let view: serde_json::Value =
            serde_json::from_str(&s.generate("pca", 240, 6, 0.05, 3).unwrap()).unwrap();
        assert_eq!(view["length"], 240);
        assert_eq!(view["values"].as_array().unwrap().len(), SHOWN);
        s.start_training("pca,nmf", 3, 1).unwrap();
        let p: serde_json::Value = serde_json::from_str(&s.train_epochs(2).unwrap()).unwrap();
        assert_eq!(p["epoch"], 2);
        let p: serde_json::Value = serde_json::from_str(&s.train_epochs(5).unwrap()).unwrap();
        assert_eq!(p["epoch"], 3);
        assert_eq!(p["weights"].as_array().unwrap().len(), 3);
        let scores: serde_json::Value = serde_json::from_str(&s.score().unwrap()).unwrap();
        let auroc = scores["auroc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&auroc));
        assert_eq!(scores["times"][0], 120 + 5);
    }

    #[test]
    fn operations_out_of_order_fail_cleanly() {
        let mut s = Session::default();
        assert!(s.start_training("pca", 2, 0).is_err());
        assert!(s.train_epochs(1).is_err());
        assert!(s.score().is_err());
        assert!(s.generate("nope", 100, 4, 0.0, 0).is_err());
    }
}
