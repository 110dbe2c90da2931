//! Selective first-order meta-learning over meta-domains and the expansion
//! of an expert's meta-domain set.

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::experts::{DomainParams, Expert, WindowBatch};
use crate::numerics::Matrix;
use crate::optim::{Optimizer, ParamKey};

pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 1e-1;
pub const MAX_META_DOMAINS: usize = 16;

/// A loss over one parameter payload that knows its own manifold.
pub trait DomainObjective {
    fn name(&self) -> String;
    fn loss(&self, params: &DomainParams, batch: &WindowBatch) -> Result<f64>;
    /// Loss and raw (ambient) gradient.
    fn loss_and_grad(&self, params: &DomainParams, batch: &WindowBatch)
        -> Result<(f64, Vec<Matrix>)>;
    fn project_tangent(&self, params: &DomainParams, grads: Vec<Matrix>) -> Result<Vec<Matrix>>;
    fn retract(&self, params: &mut DomainParams) -> Result<()>;
}

impl DomainObjective for Expert {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn loss(&self, params: &DomainParams, batch: &WindowBatch) -> Result<f64> {
        Expert::loss(self, params, batch)
    }

    fn loss_and_grad(
        &self,
        params: &DomainParams,
        batch: &WindowBatch,
    ) -> Result<(f64, Vec<Matrix>)> {
        Expert::loss_and_grad(self, params, batch)
    }

    fn project_tangent(&self, params: &DomainParams, grads: Vec<Matrix>) -> Result<Vec<Matrix>> {
        Expert::project_tangent(self, params, grads)
    }

    fn retract(&self, params: &mut DomainParams) -> Result<()> {
        Expert::retract(self, params)
    }
}

/// The meta-domains of one expert with their learned adaptation rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDomainSet {
    pub params: Vec<DomainParams>,
    pub alphas: Vec<f64>,
    /// Epoch at which each meta-domain appeared (0 for the initial one).
    pub created_epoch: Vec<usize>,
}

impl MetaDomainSet {
    pub fn new(initial: DomainParams, alpha: f64) -> Self {
        Self {
            params: vec![initial],
            alphas: vec![alpha.clamp(ALPHA_MIN, ALPHA_MAX)],
            created_epoch: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// Loss of every meta-domain on a batch and the one picked.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainChoice {
    pub losses: Vec<f64>,
    pub selected: usize,
}

impl DomainChoice {
    /// One-hot indicator over the meta-domains.
    pub fn delta(&self) -> Vec<u8> {
        (0..self.losses.len())
            .map(|k| u8::from(k == self.selected))
            .collect()
    }
}

/// Picks the meta-domain with the lowest loss on `batch`; ties go to the
/// lowest index.
pub fn compute_delta<O: DomainObjective>(
    objective: &O,
    set: &MetaDomainSet,
    batch: &WindowBatch,
) -> Result<DomainChoice> {
    if batch.is_empty() {
        return Err(CicadaError::EmptySegment);
    }
    let losses = set
        .params
        .iter()
        .map(|p| objective.loss(p, batch))
        .collect::<Result<Vec<_>>>()?;
    let mut selected = 0;
    for (k, &l) in losses.iter().enumerate() {
        if l.is_nan() {
            return Err(CicadaError::NonFiniteLoss {
                epoch: 0,
                component: "selection",
                expert: Some(objective.name()),
            });
        }
        if l < losses[selected] {
            selected = k;
        }
    }
    Ok(DomainChoice { losses, selected })
}

/// One retracted gradient step of size `rate` from `params` on `batch`.
/// Returns the adapted payload and the tangent gradient used. A zero rate
/// returns an exact copy.
pub fn adapt_params<O: DomainObjective>(
    objective: &O,
    params: &DomainParams,
    rate: f64,
    batch: &WindowBatch,
) -> Result<(DomainParams, Vec<Matrix>)> {
    if rate == 0.0 {
        let zeros = params
            .tensors
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        return Ok((params.clone(), zeros));
    }
    let (_, grads) = objective.loss_and_grad(params, batch)?;
    let grads = objective.project_tangent(params, grads)?;
    if !grads.iter().all(Matrix::is_finite) {
        return Err(CicadaError::NonFiniteGradient {
            expert: objective.name(),
        });
    }
    let mut adapted = params.clone();
    for (t, g) in adapted.tensors.iter_mut().zip(&grads) {
        t.axpy(-rate, g)?;
    }
    objective.retract(&mut adapted)?;
    Ok((adapted, grads))
}

/// Result of adapting only the selected meta-domain to one segment.
#[derive(Debug, Clone)]
pub struct Adaptation {
    pub selected: usize,
    /// Indexed by meta-domain: adapted payload for the selected one, an
    /// unchanged copy for the rest.
    pub params: Vec<DomainParams>,
    /// Tangent training gradient at the selected meta-domain.
    pub train_grad: Vec<Matrix>,
    /// `‖Θ' − Θ‖²_F` of the selected meta-domain.
    pub distance_sq: f64,
}

pub fn adapt<O: DomainObjective>(
    objective: &O,
    set: &MetaDomainSet,
    choice: &DomainChoice,
    batch: &WindowBatch,
) -> Result<Adaptation> {
    let k = choice.selected;
    let (adapted, train_grad) = adapt_params(objective, &set.params[k], set.alphas[k], batch)?;
    let distance_sq = adapted.distance_sq(&set.params[k])?;
    let mut params = set.params.clone();
    params[k] = adapted;
    Ok(Adaptation {
        selected: k,
        params,
        train_grad,
        distance_sq,
    })
}

/// Applies the first-order meta-update. `grads[k]` is the raw gradient of
/// the total objective at the (possibly adapted) payload of meta-domain `k`.
/// Every meta-domain moves along its own projected gradient; only the
/// selected one's rate receives a signal through the adaptation step, while
/// every rate pays `penalty`.
#[allow(clippy::too_many_arguments)]
pub fn apply_meta_update<O: DomainObjective>(
    objective: &O,
    set: &mut MetaDomainSet,
    adaptation: &Adaptation,
    grads: &[Vec<Matrix>],
    penalty: f64,
    expert_index: usize,
    optimizer: &mut Optimizer,
    alpha_optimizer: &mut Optimizer,
) -> Result<()> {
    let bad = || CicadaError::NonFiniteGradient {
        expert: objective.name(),
    };
    for (k, g) in grads.iter().enumerate() {
        if !g.iter().all(Matrix::is_finite) {
            return Err(bad());
        }
        let dalpha = if k == adaptation.selected {
            // Riemannian gradient at the adapted point: the normal component
            // cannot move a constrained payload and says nothing about the rate.
            let at_adapted = objective.project_tangent(&adaptation.params[k], g.clone())?;
            let mut inner = 0.0;
            for (a, b) in at_adapted.iter().zip(&adaptation.train_grad) {
                inner += a.inner(b)?;
            }
            penalty - inner
        } else {
            penalty
        };
        if !dalpha.is_finite() {
            return Err(bad());
        }
        let projected = objective.project_tangent(&set.params[k], g.clone())?;
        for (t, (value, grad)) in set.params[k].tensors.iter_mut().zip(&projected).enumerate() {
            let key = ParamKey::Domain {
                expert: expert_index,
                domain: k,
                tensor: t,
            };
            optimizer.step(key, value, grad)?;
        }
        objective.retract(&mut set.params[k])?;
        let key = ParamKey::Alpha {
            expert: expert_index,
            domain: k,
        };
        alpha_optimizer.step_scalar(key, &mut set.alphas[k], dalpha);
        set.alphas[k] = set.alphas[k].clamp(ALPHA_MIN, ALPHA_MAX);
    }
    Ok(())
}

/// Loss summary of one stand-alone meta step.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaStepOutcome {
    pub selected: usize,
    pub train_loss: f64,
    pub test_loss: f64,
}

/// Meta step driven by the expert loss alone: select on `train`, adapt,
/// then update with `weight · L(val; Θ')` plus the rate penalty.
#[allow(clippy::too_many_arguments)]
pub fn meta_learning_step<O: DomainObjective>(
    objective: &O,
    set: &mut MetaDomainSet,
    train: &WindowBatch,
    val: &WindowBatch,
    weight: f64,
    penalty: f64,
    expert_index: usize,
    optimizer: &mut Optimizer,
    alpha_optimizer: &mut Optimizer,
) -> Result<MetaStepOutcome> {
    let choice = compute_delta(objective, set, train)?;
    let adaptation = adapt(objective, set, &choice, train)?;
    let grads: Vec<Vec<Matrix>> = (0..set.len())
        .map(|k| {
            if k == choice.selected {
                let (l, g) = objective.loss_and_grad(&adaptation.params[k], val)?;
                Ok((l, g.into_iter().map(|m| m.scale(weight)).collect()))
            } else {
                let z = set.params[k]
                    .tensors
                    .iter()
                    .map(|t| Matrix::zeros(t.rows(), t.cols()))
                    .collect();
                Ok((0.0, z))
            }
        })
        .collect::<Result<Vec<(f64, Vec<Matrix>)>>>()?
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let test_loss = objective.loss(&adaptation.params[choice.selected], val)?;
    apply_meta_update(
        objective,
        set,
        &adaptation,
        &grads,
        penalty,
        expert_index,
        optimizer,
        alpha_optimizer,
    )?;
    Ok(MetaStepOutcome {
        selected: choice.selected,
        train_loss: choice.losses[choice.selected],
        test_loss,
    })
}

/// The most recent adaptation of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedRecord {
    pub domain: usize,
    pub params: DomainParams,
    pub distance_sq: f64,
}

/// A new meta-domain spawned from an existing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionEvent {
    pub epoch: usize,
    pub source: usize,
    pub segment: usize,
    pub new_domain: usize,
}

/// Meta-domain whose rate exceeds `threshold` by the largest margin, if any,
/// while the set still has room.
pub fn expansion_candidate(set: &MetaDomainSet, threshold: f64) -> Option<usize> {
    if set.len() >= MAX_META_DOMAINS {
        return None;
    }
    let mut best: Option<usize> = None;
    for (k, &a) in set.alphas.iter().enumerate() {
        if a > threshold && best.is_none_or(|b| a > set.alphas[b]) {
            best = Some(k);
        }
    }
    best
}

/// Adds a meta-domain initialized from the adapted payload (recorded in
/// `history`, one slot per segment) that moved farthest from `source`.
/// The new meta-domain inherits the source's rate.
pub fn expand(
    set: &mut MetaDomainSet,
    source: usize,
    history: &[Option<AdaptedRecord>],
    epoch: usize,
    expert: &str,
) -> Result<ExpansionEvent> {
    if set.len() >= MAX_META_DOMAINS {
        return Err(CicadaError::BadConfig(format!(
            "expert {expert} already has {MAX_META_DOMAINS} meta-domains"
        )));
    }
    let mut best: Option<(usize, &AdaptedRecord)> = None;
    for (i, rec) in history.iter().enumerate() {
        let Some(rec) = rec else { continue };
        if rec.domain != source {
            continue;
        }
        if best.is_none_or(|(_, b)| rec.distance_sq > b.distance_sq) {
            best = Some((i, rec));
        }
    }
    let (segment, rec) = best.ok_or_else(|| CicadaError::NoAdaptedHistory {
        expert: expert.to_string(),
        domain: source,
    })?;
    set.params.push(rec.params.clone());
    set.alphas.push(set.alphas[source]);
    set.created_epoch.push(epoch);
    Ok(ExpansionEvent {
        epoch,
        source,
        segment,
        new_domain: set.len() - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::OptimizerConfig;

    /// `Σ_i ‖θ − x_i‖² / B` for a `1×n` parameter.
    struct Quadratic;

    impl DomainObjective for Quadratic {
        fn name(&self) -> String {
            "quadratic".into()
        }

        fn loss(&self, p: &DomainParams, b: &WindowBatch) -> Result<f64> {
            Ok(self.loss_and_grad(p, b)?.0)
        }

        fn loss_and_grad(&self, p: &DomainParams, b: &WindowBatch) -> Result<(f64, Vec<Matrix>)> {
            let theta = &p.tensors[0];
            let mut loss = 0.0;
            let mut grad = Matrix::zeros(1, theta.cols());
            let n = b.len() as f64;
            for i in 0..b.len() {
                for j in 0..theta.cols() {
                    let d = theta.as_slice()[j] - b.current[(i, j)];
                    loss += d * d / n;
                    grad.as_mut_slice()[j] += 2.0 * d / n;
                }
            }
            Ok((loss, vec![grad]))
        }

        fn project_tangent(&self, _: &DomainParams, g: Vec<Matrix>) -> Result<Vec<Matrix>> {
            Ok(g)
        }

        fn retract(&self, _: &mut DomainParams) -> Result<()> {
            Ok(())
        }
    }

    fn payload(v: &[f64]) -> DomainParams {
        DomainParams {
            tensors: vec![Matrix::row_vector(v)],
            kernel: None,
        }
    }

    fn batch(rows: &[Vec<f64>]) -> WindowBatch {
        let m = Matrix::from_rows(rows);
        WindowBatch {
            previous: m.clone(),
            current: m,
        }
    }

    #[test]
    fn scalar_adaptation_step() {
        // (θ − 1)² at θ = 0 with rate 0.25 lands on 0.5
        let (p, g) = adapt_params(&Quadratic, &payload(&[0.0]), 0.25, &batch(&[vec![1.0]])).unwrap();
        assert_eq!(p.tensors[0].as_slice(), &[0.5]);
        assert_eq!(g[0].as_slice(), &[-2.0]);
    }

    #[test]
    fn zero_rate_is_bit_identical() {
        let p = payload(&[0.1234567, -2.5]);
        let (q, _) = adapt_params(&Quadratic, &p, 0.0, &batch(&[vec![1.0, 1.0]])).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn selection_prefers_lowest_loss_and_lowest_index_on_ties() {
        let mut set = MetaDomainSet::new(payload(&[0.0]), 1e-2);
        set.params.push(payload(&[2.0]));
        set.params.push(payload(&[1.0]));
        set.params.push(payload(&[1.0]));
        set.alphas.extend([1e-2; 3]);
        set.created_epoch.extend([0; 3]);
        let c = compute_delta(&Quadratic, &set, &batch(&[vec![1.0]])).unwrap();
        assert_eq!(c.selected, 2);
        assert_eq!(c.delta(), vec![0, 0, 1, 0]);
        assert_eq!(c.delta().iter().map(|&d| d as u32).sum::<u32>(), 1);
    }

    #[test]
    fn empty_segment_is_rejected() {
        let set = MetaDomainSet::new(payload(&[0.0]), 1e-2);
        let empty = WindowBatch {
            current: Matrix::zeros(0, 1),
            previous: Matrix::zeros(0, 1),
        };
        assert!(matches!(
            compute_delta(&Quadratic, &set, &empty),
            Err(CicadaError::EmptySegment)
        ));
    }

    #[test]
    fn only_selected_domain_is_adapted() {
        let mut set = MetaDomainSet::new(payload(&[0.0]), 0.1);
        set.params.push(payload(&[5.0]));
        set.alphas.push(0.1);
        set.created_epoch.push(0);
        let b = batch(&[vec![4.0]]);
        let c = compute_delta(&Quadratic, &set, &b).unwrap();
        let a = adapt(&Quadratic, &set, &c, &b).unwrap();
        assert_eq!(a.selected, 1);
        assert_eq!(a.params[0], set.params[0]);
        assert_ne!(a.params[1], set.params[1]);
    }

    #[test]
    fn single_domain_step_is_first_order_maml() {
        let tr = batch(&[vec![1.0, 0.0], vec![3.0, 2.0]]);
        let val = batch(&[vec![2.0, -1.0]]);
        let (alpha, lr, weight) = (0.05, 0.1, 2.0);
        let mut set = MetaDomainSet::new(payload(&[0.3, 0.7]), alpha);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(lr));
        let mut aopt = Optimizer::new(OptimizerConfig::sgd(1e-9));
        meta_learning_step(&Quadratic, &mut set, &tr, &val, weight, 0.0, 0, &mut opt, &mut aopt)
            .unwrap();

        // direct first-order MAML
        let theta = [0.3, 0.7];
        let tr_mean = [2.0, 1.0];
        let adapted: Vec<f64> = (0..2)
            .map(|j| theta[j] - alpha * 2.0 * (theta[j] - tr_mean[j]))
            .collect();
        let val_x = [2.0, -1.0];
        let expected: Vec<f64> = (0..2)
            .map(|j| theta[j] - lr * weight * 2.0 * (adapted[j] - val_x[j]))
            .collect();
        for j in 0..2 {
            assert!((set.params[0].tensors[0].as_slice()[j] - expected[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn rate_grows_when_train_and_val_gradients_agree() {
        let tr = batch(&[vec![5.0]]);
        let val = batch(&[vec![5.0]]);
        let mut set = MetaDomainSet::new(payload(&[0.0]), 0.01);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1e-6));
        let mut aopt = Optimizer::new(OptimizerConfig::sgd(1e-4));
        meta_learning_step(&Quadratic, &mut set, &tr, &val, 1.0, 0.0, 0, &mut opt, &mut aopt)
            .unwrap();
        assert!(set.alphas[0] > 0.01);
    }

    #[test]
    fn rates_stay_clamped() {
        let tr = batch(&[vec![5.0]]);
        let mut set = MetaDomainSet::new(payload(&[0.0]), 0.01);
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1e-6));
        let mut aopt = Optimizer::new(OptimizerConfig::sgd(10.0));
        meta_learning_step(&Quadratic, &mut set, &tr, &tr, 1.0, 100.0, 0, &mut opt, &mut aopt)
            .unwrap();
        assert_eq!(set.alphas[0], ALPHA_MIN);
    }

    #[test]
    fn expansion_picks_largest_rate_and_farthest_segment() {
        let mut set = MetaDomainSet::new(payload(&[0.0]), 1e-3);
        set.params.push(payload(&[1.0]));
        set.alphas.push(2e-3);
        set.created_epoch.push(0);
        assert_eq!(expansion_candidate(&set, 5e-4), Some(1));
        assert_eq!(expansion_candidate(&set, 5e-3), None);

        let rec = |d: usize, v: f64, dist: f64| {
            Some(AdaptedRecord {
                domain: d,
                params: payload(&[v]),
                distance_sq: dist,
            })
        };
        let history = vec![rec(1, 1.1, 0.01), None, rec(0, 9.0, 5.0), rec(1, 1.5, 0.25)];
        let ev = expand(&mut set, 1, &history, 50, "quadratic").unwrap();
        assert_eq!(
            ev,
            ExpansionEvent {
                epoch: 50,
                source: 1,
                segment: 3,
                new_domain: 2
            }
        );
        assert_eq!(set.params[2], payload(&[1.5]));
        assert_eq!(set.alphas[2], 2e-3);
    }

    #[test]
    fn expansion_without_history_fails() {
        let mut set = MetaDomainSet::new(payload(&[0.0]), 1e-3);
        assert!(matches!(
            expand(&mut set, 0, &[None, None], 50, "x"),
            Err(CicadaError::NoAdaptedHistory { .. })
        ));
    }

    #[test]
    fn expansion_respects_cap() {
        let mut set = MetaDomainSet::new(payload(&[0.0]), 1e-2);
        for _ in 1..MAX_META_DOMAINS {
            set.params.push(payload(&[0.0]));
            set.alphas.push(1e-2);
            set.created_epoch.push(0);
        }
        assert_eq!(expansion_candidate(&set, 1e-4), None);
    }
}
