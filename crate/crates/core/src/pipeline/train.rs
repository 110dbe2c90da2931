use log::{info, warn};

use crate::error::{CicadaError, Result};
use crate::experts::{DomainParams, Expert, ExpertState, WindowBatch, ExpertStats, FeatureGaussian, ScoreNormalizer, WindowShape};
use crate::fusion::FusionParams;
use crate::meta::{
    adapt, apply_meta_update, compute_delta, expand, expansion_candidate, AdaptedRecord,
    MetaDomainSet,
};
use crate::nn::Linear;
use crate::numerics::{Graph, Matrix, Var};
use crate::optim::{Optimizer, ParamKey};
use crate::rng::SeededRng;
use crate::series::TimeSeries;

use super::config::RunConfig;
use super::detect::{combine_scores, score_segments};
use super::model::{EpochRecord, ExpansionRecord, Model, TrainingHistory, MODEL_VERSION};
use super::windows::{make_windows, partition_segments, Scaler, WindowSet, WindowedSegment};

/// What one meta step saw and did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub epoch: usize,
    pub segment: usize,
    /// Selected meta-domain per expert.
    pub selected: Vec<usize>,
    pub reconstruction_loss: f64,
    pub expert_losses: Vec<f64>,
    /// `B×J` expert weights on the validation windows.
    pub expert_weights: Matrix,
}

/// Stateful training loop; [`train`] drives it to completion.
pub struct Trainer {
    config: RunConfig,
    names: Vec<String>,
    scaler: Scaler,
    windows: WindowSet,
    segments: Vec<WindowedSegment>,
    experts: Vec<ExpertState>,
    fusion: FusionParams,
    optimizer: Optimizer,
    alpha_optimizer: Optimizer,
    rng: SeededRng,
    epoch: usize,
    /// `[expert][segment]` latest adaptation.
    latest: Vec<Vec<Option<AdaptedRecord>>>,
    history: TrainingHistory,
}

impl Trainer {
    pub fn new(series: &TimeSeries, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let scaler = if config.standardize {
            Scaler::fit(&series.values)
        } else {
            Scaler::identity(series.dim())
        };
        let values = scaler.transform(&series.values)?;
        let windows = make_windows(&values, config.window)?;
        let segments = partition_segments(windows.len(), config.segments)?;
        let root = SeededRng::new(config.seed);
        let shape = windows.shape;

        let mut experts = Vec::with_capacity(config.experts.len());
        for (j, &kind) in config.experts.iter().enumerate() {
            let mut rng = root.substream("expert", j as u64);
            let expert = Expert::new(kind, shape, config.expert.clone());
            let initial = expert.init_domain(&mut rng, Some(&windows.current))?;
            let projection = Linear::init(expert.raw_dim(), config.feature_dim, &mut rng);
            experts.push(ExpertState {
                expert,
                domains: MetaDomainSet::new(initial, config.alpha_init),
                projection,
                stats: ExpertStats::default(),
            });
        }
        let fusion = FusionParams::init(
            experts.len(),
            shape.flat(),
            config.feature_dim,
            config.meta_heads,
            config.expert_heads,
            config.decoder_hidden,
            &mut root.substream("fusion", 0),
        )?;
        let n_seg = segments.len();
        Ok(Self {
            optimizer: Optimizer::new(config.optimizer.clone()),
            alpha_optimizer: Optimizer::new(config.alpha_optimizer.clone()),
            rng: root.substream("schedule", 0),
            names: series.names.clone(),
            scaler,
            windows,
            segments,
            latest: vec![vec![None; n_seg]; experts.len()],
            history: TrainingHistory {
                experts: config.experts.clone(),
                ..TrainingHistory::default()
            },
            experts,
            fusion,
            epoch: 0,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn experts(&self) -> &[ExpertState] {
        &self.experts
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn segments(&self) -> &[WindowedSegment] {
        &self.segments
    }

    pub fn history(&self) -> &TrainingHistory {
        &self.history
    }

    pub fn window_shape(&self) -> WindowShape {
        self.windows.shape
    }

    /// One meta step on segment `seg`.
    pub fn step(&mut self, seg: usize) -> Result<StepOutcome> {
        let mut idx: Vec<usize> = self.segments[seg].windows.clone().collect();
        self.rng.shuffle(&mut idx);
        if let Some(cap) = self.config.windows_per_step {
            idx.truncate(cap);
        }
        let (tr_idx, val_idx) = if idx.len() < 2 {
            (idx.clone(), idx.clone())
        } else {
            let half = idx.len() / 2;
            (idx[..half].to_vec(), idx[half..].to_vec())
        };
        let tr = self.windows.batch(&tr_idx);
        let val = self.windows.batch(&val_idx);
        let epoch = self.epoch;

        let mut adaptations = Vec::with_capacity(self.experts.len());
        for e in &self.experts {
            let choice = compute_delta(&e.expert, &e.domains, &tr).map_err(|err| at_epoch(err, epoch))?;
            adaptations.push(adapt(&e.expert, &e.domains, &choice, &tr)?);
        }

        let params: Vec<&[DomainParams]> = adaptations.iter().map(|a| a.params.as_slice()).collect();
        let selected: Vec<usize> = adaptations.iter().map(|a| a.selected).collect();
        let obj = combined_objective(
            &self.experts,
            &self.fusion,
            &params,
            &selected,
            &val,
            self.config.lambda_1,
        )?;
        if !obj.reconstruction.is_finite() {
            return Err(CicadaError::NonFiniteLoss {
                epoch,
                component: "reconstruction",
                expert: None,
            });
        }
        for (j, l) in obj.expert_losses.iter().enumerate() {
            if !l.is_finite() {
                return Err(CicadaError::NonFiniteLoss {
                    epoch,
                    component: "expert",
                    expert: Some(self.experts[j].kind().to_string()),
                });
            }
        }

        let penalty = self.config.lambda_1 * self.config.lambda_meta;
        for (j, e) in self.experts.iter_mut().enumerate() {
            let a = &adaptations[j];
            let per_domain = &obj.domain_grads[j];
            apply_meta_update(
                &e.expert,
                &mut e.domains,
                a,
                per_domain,
                penalty,
                j,
                &mut self.optimizer,
                &mut self.alpha_optimizer,
            )?;
            for (t, (value, grad)) in e
                .projection
                .tensors_mut()
                .into_iter()
                .zip(&obj.projection_grads[j])
                .enumerate()
            {
                self.optimizer
                    .step(ParamKey::Projection { expert: j, tensor: t }, value, grad)?;
            }
            self.latest[j][seg] = Some(AdaptedRecord {
                domain: a.selected,
                params: a.params[a.selected].clone(),
                distance_sq: a.distance_sq,
            });
        }
        for (i, (value, grad)) in self.fusion.tensors_mut().into_iter().zip(&obj.fusion_grads).enumerate() {
            if !grad.is_finite() {
                return Err(CicadaError::NonFiniteGradient {
                    expert: "fusion".into(),
                });
            }
            self.optimizer.step(ParamKey::Fusion(i), value, grad)?;
        }

        Ok(StepOutcome {
            epoch,
            segment: seg,
            selected: adaptations.iter().map(|a| a.selected).collect(),
            reconstruction_loss: obj.reconstruction,
            expert_losses: obj.expert_losses,
            expert_weights: obj.expert_weights,
        })
    }

    /// Visits every segment once in random order, then checks for
    /// expansion.
    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        self.run_epoch_observed(&mut |_, _| {})
    }

    /// Like [`Trainer::run_epoch`], calling `observer` after every step.
    pub fn run_epoch_observed(
        &mut self,
        observer: &mut dyn FnMut(&StepOutcome, &Trainer),
    ) -> Result<&EpochRecord> {
        self.epoch += 1;
        let n_exp = self.experts.len();
        let mut order: Vec<usize> = (0..self.segments.len()).collect();
        self.rng.shuffle(&mut order);

        let mut weight_sum = vec![0.0; n_exp];
        let mut weight_count = 0usize;
        let mut rec_sum = 0.0;
        let mut loss_sum = vec![0.0; n_exp];
        let mut assignments = vec![vec![0usize; self.segments.len()]; n_exp];
        for &seg in &order {
            let out = self.step(seg)?;
            for i in 0..out.expert_weights.rows() {
                for (s, w) in weight_sum.iter_mut().zip(out.expert_weights.row(i)) {
                    *s += w;
                }
            }
            weight_count += out.expert_weights.rows();
            rec_sum += out.reconstruction_loss;
            for j in 0..n_exp {
                loss_sum[j] += out.expert_losses[j];
                assignments[j][seg] = out.selected[j];
            }
            observer(&out, self);
        }

        if self.config.expansion && self.epoch % self.config.epoch_add == 0 {
            self.expand_all()?;
        }

        let n_seg = self.segments.len() as f64;
        let record = EpochRecord {
            epoch: self.epoch,
            weights: weight_sum.iter().map(|s| s / weight_count as f64).collect(),
            alphas: self.experts.iter().map(|e| e.domains.alphas.clone()).collect(),
            assignments,
            reconstruction_loss: rec_sum / n_seg,
            expert_losses: loss_sum.iter().map(|l| l / n_seg).collect(),
        };
        info!(
            "epoch {}: reconstruction {:.4e}, weights {:?}, meta-domains {:?}",
            record.epoch,
            record.reconstruction_loss,
            record.weights,
            self.experts.iter().map(|e| e.domains.len()).collect::<Vec<_>>()
        );
        self.history.epochs.push(record);
        Ok(self.history.epochs.last().expect("just pushed"))
    }

    fn expand_all(&mut self) -> Result<()> {
        for (j, e) in self.experts.iter_mut().enumerate() {
            let Some(source) = expansion_candidate(&e.domains, self.config.alpha_threshold) else {
                continue;
            };
            let name = e.kind().to_string();
            match expand(&mut e.domains, source, &self.latest[j], self.epoch, &name) {
                Ok(event) => {
                    info!(
                        "epoch {}: expert {name} adds meta-domain {} from {} (segment {})",
                        self.epoch, event.new_domain, event.source, event.segment
                    );
                    self.history.expansions.push(ExpansionRecord {
                        expert: e.kind(),
                        event,
                    });
                }
                Err(CicadaError::NoAdaptedHistory { .. }) => {
                    warn!("expert {name}: no adapted parameters for meta-domain {source}, skipping expansion");
                }
                Err(other) => return Err(other),
            }
        }
        Ok(())
    }

    /// Fits scoring statistics on the training windows and packages the
    /// model.
    pub fn finish(mut self) -> Result<Model> {
        let n_exp = self.experts.len();
        let scoring = score_segments(
            &self.experts,
            &self.fusion,
            &self.windows,
            &self.segments,
            self.config.test_rate,
        )?;
        let mut raw = scoring.raw;
        for j in 0..n_exp {
            if let Some(feats) = &scoring.features[j] {
                let m = self.experts[j].domains.len();
                let mut gaussians = Vec::with_capacity(m);
                for k in 0..m {
                    let rows: Vec<usize> = (0..feats.rows())
                        .filter(|&w| scoring.window_domain[j][w] == k)
                        .collect();
                    gaussians.push(if rows.len() > 1 {
                        Some(FeatureGaussian::fit(&feats.select_rows(&rows))?)
                    } else {
                        None
                    });
                }
                let stats = &mut self.experts[j].stats;
                stats.gaussians = gaussians;
                stats.pooled = Some(FeatureGaussian::fit(feats)?);
                raw[j] = (0..feats.rows())
                    .map(|w| {
                        stats
                            .gaussian(scoring.window_domain[j][w])
                            .expect("pooled statistics exist")
                            .distance_sq(feats.row(w))
                    })
                    .collect::<Result<Vec<_>>>()?;
            }
            self.experts[j].stats.normalizer = Some(ScoreNormalizer::fit(&raw[j])?);
        }
        let (anosc, _) = combine_scores(
            &self.experts,
            &raw,
            &scoring.weights,
            self.config.normalize_scores,
        )?;
        let mut train_scores = anosc;
        train_scores.sort_by(f64::total_cmp);
        self.history.final_assignments = scoring.selected;

        Ok(Model {
            version: MODEL_VERSION,
            config: self.config,
            names: self.names,
            scaler: self.scaler,
            experts: self.experts,
            fusion: self.fusion,
            train_scores,
            history: self.history,
        })
    }
}

/// Value and gradients of the training objective on one validation batch.
#[derive(Debug, Clone)]
pub struct Objective {
    /// Reconstruction loss plus `lambda_1` times the selected expert losses.
    pub total: f64,
    pub reconstruction: f64,
    pub expert_losses: Vec<f64>,
    /// `[expert][meta-domain][tensor]`.
    pub domain_grads: Vec<Vec<Vec<Matrix>>>,
    /// `[expert][tensor]`.
    pub projection_grads: Vec<Vec<Matrix>>,
    pub fusion_grads: Vec<Matrix>,
    pub expert_weights: Matrix,
}

/// Evaluates the reconstruction loss of the fused features of every
/// meta-domain in `params[j]` plus `lambda_1` times the validation loss of
/// the selected meta-domain of each expert, and differentiates it.
pub fn combined_objective(
    experts: &[ExpertState],
    fusion: &FusionParams,
    params: &[&[DomainParams]],
    selected: &[usize],
    val: &WindowBatch,
    lambda_1: f64,
) -> Result<Objective> {
    if params.len() != experts.len() || selected.len() != experts.len() {
        return Err(CicadaError::LengthMismatch {
            left: params.len().min(selected.len()),
            right: experts.len(),
        });
    }
    let mut g = Graph::new();
    let x = g.constant(val.current.clone());
    let fusion_vars = fusion.register(&mut g);
    let mut param_vars: Vec<Vec<Vec<Var>>> = Vec::with_capacity(experts.len());
    let mut proj_vars = Vec::with_capacity(experts.len());
    let mut features: Vec<Vec<Var>> = Vec::with_capacity(experts.len());
    let mut test_losses = Vec::with_capacity(experts.len());
    for ((e, ps), &sel) in experts.iter().zip(params).zip(selected) {
        let pv = e.projection.register(&mut g);
        let mut pvars = Vec::with_capacity(ps.len());
        let mut feats = Vec::with_capacity(ps.len());
        let mut test = None;
        for (k, p) in ps.iter().enumerate() {
            let fwd = e.expert.forward_on(&mut g, p, val, x)?;
            feats.push(pv.apply(&mut g, fwd.features)?);
            if k == sel {
                test = Some(fwd.loss);
            }
            pvars.push(fwd.params);
        }
        let test = test.ok_or(CicadaError::LengthMismatch {
            left: sel,
            right: ps.len(),
        })?;
        param_vars.push(pvars);
        proj_vars.push(pv);
        features.push(feats);
        test_losses.push(test);
    }
    let nodes = FusionParams::record(&fusion_vars, &mut g, x, &features)?;
    let mut total = nodes.loss;
    let mut expert_losses = Vec::with_capacity(test_losses.len());
    for &t in &test_losses {
        expert_losses.push(g.scalar(t));
        let scaled = g.scale(t, lambda_1);
        total = g.add(total, scaled)?;
    }
    let grads = g.backward(total)?;
    let domain_grads = param_vars
        .iter()
        .zip(params)
        .map(|(vars, ps)| {
            vars.iter()
                .zip(ps.iter())
                .map(|(vs, p)| {
                    vs.iter()
                        .zip(&p.tensors)
                        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
                        .collect()
                })
                .collect()
        })
        .collect();
    let projection_grads = experts
        .iter()
        .zip(&proj_vars)
        .map(|(e, pv)| {
            e.projection
                .tensors()
                .into_iter()
                .zip(pv.vars())
                .map(|(t, v)| grads.get_or_zeros(v, t.shape()))
                .collect()
        })
        .collect();
    let fusion_grads = fusion
        .tensors()
        .into_iter()
        .zip(fusion_vars.vars())
        .map(|(t, v)| grads.get_or_zeros(v, t.shape()))
        .collect();
    Ok(Objective {
        total: g.scalar(total),
        reconstruction: g.scalar(nodes.loss),
        expert_losses,
        domain_grads,
        projection_grads,
        fusion_grads,
        expert_weights: g.value(nodes.expert_weights).clone(),
    })
}

fn at_epoch(err: CicadaError, epoch: usize) -> CicadaError {
    match err {
        CicadaError::NonFiniteLoss {
            component, expert, ..
        } => CicadaError::NonFiniteLoss {
            epoch,
            component,
            expert,
        },
        other => other,
    }
}

/// Trains a model on `series` for `config.max_epoch` epochs.
pub fn train(series: &TimeSeries, config: &RunConfig) -> Result<Model> {
    let mut trainer = Trainer::new(series, config.clone())?;
    while trainer.epoch() < config.max_epoch {
        trainer.run_epoch()?;
    }
    trainer.finish()
}
