use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::experts::{ExpertKind, ExpertState};
use crate::fusion::FusionParams;
use crate::meta::ExpansionEvent;

use super::config::RunConfig;
use super::windows::Scaler;

pub const MODEL_VERSION: u32 = 1;

/// Summary of one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Expert weights averaged over every window seen this epoch.
    pub weights: Vec<f64>,
    /// `[expert][meta-domain]` rates at the end of the epoch.
    pub alphas: Vec<Vec<f64>>,
    /// `[expert][segment]` selected meta-domain in this epoch.
    pub assignments: Vec<Vec<usize>>,
    pub reconstruction_loss: f64,
    /// Mean validation loss of each expert.
    pub expert_losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub expert: ExpertKind,
    #[serde(flatten)]
    pub event: ExpansionEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub experts: Vec<ExpertKind>,
    pub epochs: Vec<EpochRecord>,
    pub expansions: Vec<ExpansionRecord>,
    /// `[expert][segment]` meta-domain chosen on the full segment after
    /// training.
    pub final_assignments: Vec<Vec<usize>>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl TrainingHistory {
    /// Final epoch-average expert weights.
    pub fn final_weights(&self) -> Option<&[f64]> {
        self.epochs.last().map(|e| e.weights.as_slice())
    }

    /// `epoch,<expert>...` with one row per epoch.
    pub fn weights_csv(&self) -> String {
        let mut out = String::from("epoch");
        for k in &self.experts {
            out.push(',');
            out.push_str(k.name());
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.epoch.to_string());
            for w in &e.weights {
                out.push(',');
                out.push_str(&num(*w));
            }
            out.push('\n');
        }
        out
    }

    /// `epoch,expert,meta_domain,alpha`.
    pub fn alpha_csv(&self) -> String {
        let mut out = String::from("epoch,expert,meta_domain,alpha\n");
        for e in &self.epochs {
            for (j, alphas) in e.alphas.iter().enumerate() {
                for (k, a) in alphas.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", e.epoch, self.experts[j], k, num(*a));
                }
            }
        }
        out
    }

    /// `epoch,expert,segment,meta_domain`.
    pub fn assignments_csv(&self) -> String {
        let mut out = String::from("epoch,expert,segment,meta_domain\n");
        for e in &self.epochs {
            for (j, segs) in e.assignments.iter().enumerate() {
                for (i, k) in segs.iter().enumerate() {
                    let _ = writeln!(out, "{},{},{},{}", e.epoch, self.experts[j], i, k);
                }
            }
        }
        out
    }

    /// `expert,segment,meta_domain` after training.
    pub fn final_assignments_csv(&self) -> String {
        let mut out = String::from("expert,segment,meta_domain\n");
        for (j, segs) in self.final_assignments.iter().enumerate() {
            for (i, k) in segs.iter().enumerate() {
                let _ = writeln!(out, "{},{},{}", self.experts[j], i, k);
            }
        }
        out
    }

    /// `epoch,expert,source_meta_domain,segment,new_meta_domain`.
    pub fn expansions_csv(&self) -> String {
        let mut out = String::from("epoch,expert,source_meta_domain,segment,new_meta_domain\n");
        for r in &self.expansions {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.event.epoch, r.expert, r.event.source, r.event.segment, r.event.new_domain
            );
        }
        out
    }

    /// `epoch,reconstruction,<expert>...` mean losses.
    pub fn losses_csv(&self) -> String {
        let mut out = String::from("epoch,reconstruction");
        for k in &self.experts {
            out.push(',');
            out.push_str(k.name());
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&e.epoch.to_string());
            out.push(',');
            out.push_str(&num(e.reconstruction_loss));
            for l in &e.expert_losses {
                out.push(',');
                out.push_str(&num(*l));
            }
            out.push('\n');
        }
        out
    }
}

/// A trained detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub version: u32,
    pub config: RunConfig,
    pub names: Vec<String>,
    pub scaler: Scaler,
    pub experts: Vec<ExpertState>,
    pub fusion: FusionParams,
    /// Sorted anomaly scores of the training windows.
    pub train_scores: Vec<f64>,
    pub history: TrainingHistory,
}

impl Model {
    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn expert_kinds(&self) -> Vec<ExpertKind> {
        self.experts.iter().map(ExpertState::kind).collect()
    }

    pub fn meta_domain_counts(&self) -> Vec<usize> {
        self.experts.iter().map(|e| e.domains.len()).collect()
    }
}
