//! Detection metrics over binary labels.

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(CicadaError::LengthMismatch { left: a, right: b })
    }
}

/// Precision, recall and F1 of binary predictions. Precision is 0 without
/// predicted positives and F1 is 0 when precision and recall are both 0.
pub fn prf(pred: &[u8], labels: &[u8]) -> Result<Prf> {
    same_len(pred.len(), labels.len())?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &y) in pred.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Prf {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    })
}

/// Marks every labelled anomaly run as detected once any point inside it is.
pub fn point_adjust(pred: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    same_len(pred.len(), labels.len())?;
    let mut out: Vec<u8> = pred.iter().map(|&p| u8::from(p != 0)).collect();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] != 0 {
            i += 1;
        }
        if out[start..i].iter().any(|&p| p == 1) {
            out[start..i].iter_mut().for_each(|p| *p = 1);
        }
    }
    Ok(out)
}

/// Raises every score inside a labelled anomaly run to the run maximum, so
/// thresholding the result at any level equals point-adjusting the
/// thresholded raw scores.
pub fn point_adjust_scores(scores: &[f64], labels: &[u8]) -> Result<Vec<f64>> {
    same_len(scores.len(), labels.len())?;
    let mut out = scores.to_vec();
    let mut i = 0;
    while i < labels.len() {
        if labels[i] == 0 {
            i += 1;
            continue;
        }
        let start = i;
        while i < labels.len() && labels[i] != 0 {
            i += 1;
        }
        let top = out[start..i].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        out[start..i].iter_mut().for_each(|s| *s = top);
    }
    Ok(out)
}

/// `1` where `score > threshold`.
pub fn apply_threshold(scores: &[f64], threshold: f64) -> Vec<u8> {
    scores.iter().map(|&s| u8::from(s > threshold)).collect()
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&y| y != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(CicadaError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] != 0 {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

/// Average precision with tied scores treated as a single cut.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    same_len(scores.len(), labels.len())?;
    let pos = labels.iter().filter(|&&y| y != 0).count();
    if pos == 0 {
        return Err(CicadaError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut ap) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            seen += 1;
            tp += usize::from(labels[idx] != 0);
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// Threshold among midpoints of consecutive distinct scores that maximizes
/// F1, together with that F1. The smallest such midpoint wins ties. With a
/// single distinct score the score itself is returned.
pub fn max_f1_threshold(scores: &[f64], labels: &[u8]) -> Result<(f64, f64)> {
    same_len(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(CicadaError::EmptyScores);
    }
    let pos = labels.iter().filter(|&&y| y != 0).count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // sweep from the top: after consuming a group, every remaining score is
    // below the cut
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..=j] {
            if labels[idx] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        if j + 1 < order.len() {
            let cut = 0.5 * (scores[order[j]] + scores[order[j + 1]]);
            let p = tp as f64 / (tp + fp) as f64;
            let r = if pos == 0 { 0.0 } else { tp as f64 / pos as f64 };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            // cuts arrive in decreasing order, so `>=` keeps the smallest
            if best.is_none_or(|(_, b)| f1 >= b) {
                best = Some((cut, f1));
            }
        }
        i = j + 1;
    }
    Ok(best.unwrap_or((scores[order[0]], 0.0)))
}
