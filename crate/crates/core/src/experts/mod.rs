//! Feature-extraction experts.
//!
//! Every expert is a differentiable map from windows to low-dimensional raw
//! features together with a self-supervised loss and an anomaly score. The
//! trainable tensors of one meta-domain live in [`DomainParams`]; how they
//! are interpreted depends on the [`ExpertKind`].

mod forward;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::meta::MetaDomainSet;
use crate::nn::Linear;
use crate::numerics::{
    normalize_columns, qr_orthonormalize, stiefel_tangent, unit_column_tangent, Graph, Matrix,
};
use crate::rng::SeededRng;

pub(crate) use forward::ExpertForward;
pub use stats::{ExpertStats, FeatureGaussian, ScoreNormalizer, GAUSSIAN_RIDGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    Pca,
    Kpca,
    Sfa,
    Nmf,
    Tcpd,
    Sdl,
    MlpAe,
}

impl ExpertKind {
    pub const ALL: [ExpertKind; 7] = [
        ExpertKind::Pca,
        ExpertKind::Kpca,
        ExpertKind::Sfa,
        ExpertKind::Nmf,
        ExpertKind::Tcpd,
        ExpertKind::Sdl,
        ExpertKind::MlpAe,
    ];

    /// The five experts used by default.
    pub const DEFAULT_SET: [ExpertKind; 5] = [
        ExpertKind::Pca,
        ExpertKind::Kpca,
        ExpertKind::Nmf,
        ExpertKind::Tcpd,
        ExpertKind::Sdl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExpertKind::Pca => "pca",
            ExpertKind::Kpca => "kpca",
            ExpertKind::Sfa => "sfa",
            ExpertKind::Nmf => "nmf",
            ExpertKind::Tcpd => "tcpd",
            ExpertKind::Sdl => "sdl",
            ExpertKind::MlpAe => "mlp_ae",
        }
    }

    /// Width of the raw feature vector.
    pub fn raw_dim(self, cfg: &ExpertConfig) -> usize {
        match self {
            ExpertKind::Tcpd => cfg.tcpd_rank,
            _ => cfg.rank,
        }
    }

    /// Manifold constraint of each payload tensor, in payload order.
    pub fn constraints(self) -> &'static [Constraint] {
        use Constraint::*;
        match self {
            ExpertKind::Pca | ExpertKind::Sfa => &[Stiefel],
            ExpertKind::Kpca => &[Stiefel, Free, Free, Free, Free],
            ExpertKind::Nmf | ExpertKind::Sdl => &[Free],
            ExpertKind::Tcpd => &[UnitColumns, UnitColumns],
            ExpertKind::MlpAe => &[Free; 8],
        }
    }

    /// Whether the anomaly score is a reconstruction residual (as opposed to
    /// a feature-space distance).
    pub fn scores_by_residual(self) -> bool {
        self != ExpertKind::Sfa
    }
}

impl fmt::Display for ExpertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExpertKind {
    type Err = CicadaError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        ExpertKind::ALL
            .into_iter()
            .find(|k| k.name() == lower || (lower == "mlp-ae" && *k == ExpertKind::MlpAe))
            .ok_or_else(|| CicadaError::BadConfig(format!("unknown expert `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Free,
    /// Orthonormal columns; retracted with a thin QR.
    Stiefel,
    /// Unit-norm columns; retracted by column rescaling.
    UnitColumns,
}

/// Window geometry: `len` time steps of `dim` variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowShape {
    pub len: usize,
    pub dim: usize,
}

impl WindowShape {
    pub fn flat(&self) -> usize {
        self.len * self.dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Raw feature width `r` for all experts except TCPD.
    pub rank: usize,
    pub tcpd_rank: usize,
    pub lambda_sdl: f64,
    pub n_landmark: usize,
    /// Hidden width of the KPCA decoder and the autoencoder.
    pub hidden: usize,
    /// Ridge used by the dictionary pseudo-inverses.
    pub ridge: f64,
    pub kpca_recon_weight: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            tcpd_rank: 5,
            lambda_sdl: 0.01,
            n_landmark: 64,
            hidden: 32,
            ridge: 1e-6,
            kpca_recon_weight: 1.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 || self.tcpd_rank == 0 || self.hidden == 0 || self.n_landmark == 0 {
            return Err(CicadaError::BadConfig(
                "expert ranks, hidden width and landmark count must be positive".into(),
            ));
        }
        if !(self.ridge >= 0.0) || !(self.lambda_sdl >= 0.0) || !(self.kpca_recon_weight >= 0.0) {
            return Err(CicadaError::BadConfig(
                "ridge, lambda_sdl and kpca_recon_weight must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// RBF kernel evaluated against a fixed set of landmark windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBasis {
    pub landmarks: Matrix,
    pub bandwidth: f64,
}

impl KernelBasis {
    /// Picks up to `n` distinct rows of `windows` and sets the bandwidth to
    /// the median pairwise landmark distance.
    pub fn sample(windows: &Matrix, n: usize, rng: &mut SeededRng) -> Result<Self> {
        if windows.rows() == 0 {
            return Err(CicadaError::EmptyBatch);
        }
        let mut idx = rng.sample_indices(windows.rows(), n);
        idx.sort_unstable();
        let landmarks = windows.select_rows(&idx);
        let mut dists = Vec::new();
        for a in 0..landmarks.rows() {
            for b in a + 1..landmarks.rows() {
                let d2: f64 = landmarks
                    .row(a)
                    .iter()
                    .zip(landmarks.row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                dists.push(d2.sqrt());
            }
        }
        let bandwidth = crate::numerics::percentile(&dists, 50.0)
            .filter(|&m| m > 1e-12)
            .unwrap_or(1.0);
        Ok(Self {
            landmarks,
            bandwidth,
        })
    }

    pub fn size(&self) -> usize {
        self.landmarks.rows()
    }

    /// `B×n` matrix of `exp(−‖x − l‖² / 2σ²)`.
    pub fn rows(&self, x: &Matrix) -> Result<Matrix> {
        let gram = x.matmul_t(&self.landmarks)?;
        let xn: Vec<f64> = (0..x.rows()).map(|i| sq(x.row(i))).collect();
        let ln: Vec<f64> = (0..self.size()).map(|i| sq(self.landmarks.row(i))).collect();
        let denom = 2.0 * self.bandwidth * self.bandwidth;
        Ok(Matrix::from_fn(x.rows(), self.size(), |i, j| {
            let d2 = (xn[i] + ln[j] - 2.0 * gram[(i, j)]).max(0.0);
            (-d2 / denom).exp()
        }))
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Trainable state of one meta-domain of one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainParams {
    pub tensors: Vec<Matrix>,
    /// Fixed kernel basis (KPCA only); never trained.
    pub kernel: Option<KernelBasis>,
}

impl DomainParams {
    /// `Σ ‖Θ_a − Θ_b‖²_F` over the trainable tensors.
    pub fn distance_sq(&self, other: &DomainParams) -> Result<f64> {
        let mut total = 0.0;
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            total += a.sub(b)?.frobenius_sq();
        }
        Ok(total)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(Matrix::shape).collect()
    }
}

/// Windows presented to an expert: the current windows and, aligned row by
/// row, the windows one step earlier (used by the slow-feature loss).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub current: Matrix,
    pub previous: Matrix,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.current.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.current.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> WindowBatch {
        WindowBatch {
            current: self.current.select_rows(rows),
            previous: self.previous.select_rows(rows),
        }
    }
}

/// An expert kind bound to its window geometry and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub kind: ExpertKind,
    pub shape: WindowShape,
    pub config: ExpertConfig,
}

impl Expert {
    pub fn new(kind: ExpertKind, shape: WindowShape, config: ExpertConfig) -> Self {
        Self {
            kind,
            shape,
            config,
        }
    }

    pub fn raw_dim(&self) -> usize {
        self.kind.raw_dim(&self.config)
    }

    /// Fresh meta-domain parameters. KPCA draws its landmarks from
    /// `landmark_source`, which must then be given.
    pub fn init_domain(
        &self,
        rng: &mut SeededRng,
        landmark_source: Option<&Matrix>,
    ) -> Result<DomainParams> {
        let ld = self.shape.flat();
        let r = self.config.rank;
        let h = self.config.hidden;
        let check_rank = |rows: usize, cols: usize| {
            if cols > rows {
                Err(CicadaError::BadConfig(format!(
                    "{}: rank {cols} exceeds available dimension {rows}",
                    self.kind
                )))
            } else {
                Ok(())
            }
        };
        let params = match self.kind {
            ExpertKind::Pca | ExpertKind::Sfa => {
                check_rank(ld, r)?;
                DomainParams {
                    tensors: vec![qr_orthonormalize(&rng.normal_matrix(ld, r, 1.0))?],
                    kernel: None,
                }
            }
            ExpertKind::Kpca => {
                let source = landmark_source.ok_or_else(|| {
                    CicadaError::BadConfig("kpca needs training windows for landmarks".into())
                })?;
                let kernel = KernelBasis::sample(source, self.config.n_landmark, rng)?;
                check_rank(kernel.size(), r)?;
                let w = qr_orthonormalize(&rng.normal_matrix(kernel.size(), r, 1.0))?;
                let dec = crate::nn::Mlp::init(r, h, ld, rng);
                let mut tensors = vec![w];
                tensors.extend(dec.tensors().into_iter().cloned());
                DomainParams {
                    tensors,
                    kernel: Some(kernel),
                }
            }
            ExpertKind::Nmf => DomainParams {
                tensors: vec![rng.normal_matrix(r, ld, 0.1).map(f64::abs)],
                kernel: None,
            },
            ExpertKind::Sdl => DomainParams {
                tensors: vec![rng.normal_matrix(r, ld, 0.1)],
                kernel: None,
            },
            ExpertKind::Tcpd => {
                let rr = self.config.tcpd_rank;
                DomainParams {
                    tensors: vec![
                        normalize_columns(&rng.normal_matrix(self.shape.len, rr, 1.0))?,
                        normalize_columns(&rng.normal_matrix(self.shape.dim, rr, 1.0))?,
                    ],
                    kernel: None,
                }
            }
            ExpertKind::MlpAe => {
                let enc = crate::nn::Mlp::init(ld, h, r, rng);
                let dec = crate::nn::Mlp::init(r, h, ld, rng);
                let tensors = enc
                    .tensors()
                    .into_iter()
                    .chain(dec.tensors())
                    .cloned()
                    .collect();
                DomainParams {
                    tensors,
                    kernel: None,
                }
            }
        };
        Ok(params)
    }

    /// Maps each tensor back onto its constraint set.
    pub fn retract(&self, params: &mut DomainParams) -> Result<()> {
        for (t, c) in params.tensors.iter_mut().zip(self.kind.constraints()) {
            match c {
                Constraint::Free => {}
                Constraint::Stiefel => *t = qr_orthonormalize(t)?,
                Constraint::UnitColumns => *t = normalize_columns(t)?,
            }
        }
        Ok(())
    }

    /// Projects raw gradients onto the tangent space at `params`.
    pub fn project_tangent(&self, params: &DomainParams, grads: Vec<Matrix>) -> Result<Vec<Matrix>> {
        grads
            .into_iter()
            .zip(&params.tensors)
            .zip(self.kind.constraints())
            .map(|((g, t), c)| {
                Ok(match c {
                    Constraint::Free => g,
                    Constraint::Stiefel => stiefel_tangent(t, &g)?,
                    Constraint::UnitColumns => unit_column_tangent(t, &g)?,
                })
            })
            .collect()
    }

    /// Mean self-supervised loss over the batch.
    pub fn loss(&self, params: &DomainParams, batch: &WindowBatch) -> Result<f64> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, params, batch)?;
        Ok(g.scalar(fwd.loss))
    }

    /// Loss and its (unprojected) gradient with respect to every tensor.
    pub fn loss_and_grad(
        &self,
        params: &DomainParams,
        batch: &WindowBatch,
    ) -> Result<(f64, Vec<Matrix>)> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, params, batch)?;
        let grads = g.backward(fwd.loss)?;
        let out = fwd
            .params
            .iter()
            .zip(&params.tensors)
            .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
            .collect();
        Ok((g.scalar(fwd.loss), out))
    }

    /// `B×raw_dim` raw features.
    pub fn raw_features(&self, params: &DomainParams, batch: &WindowBatch) -> Result<Matrix> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, params, batch)?;
        Ok(g.value(fwd.features).clone())
    }

    /// Per-window squared reconstruction residual, for residual-scored kinds.
    pub fn residual_scores(
        &self,
        params: &DomainParams,
        batch: &WindowBatch,
    ) -> Result<Option<Vec<f64>>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, params, batch)?;
        Ok(fwd.residual.map(|r| {
            let m = g.value(r);
            (0..m.rows()).map(|i| sq(m.row(i))).collect()
        }))
    }

    /// Records the expert on `g` with every tensor as a fresh parameter leaf.
    pub(crate) fn forward(
        &self,
        g: &mut Graph,
        params: &DomainParams,
        batch: &WindowBatch,
    ) -> Result<ExpertForward> {
        let x = g.constant(batch.current.clone());
        self.forward_on(g, params, batch, x)
    }

    /// Like [`Expert::forward`] but reuses an existing constant node for the
    /// current windows.
    pub(crate) fn forward_on(
        &self,
        g: &mut Graph,
        params: &DomainParams,
        batch: &WindowBatch,
        x: crate::numerics::Var,
    ) -> Result<ExpertForward> {
        if batch.is_empty() {
            return Err(CicadaError::EmptyBatch);
        }
        let ld = self.shape.flat();
        if batch.current.cols() != ld || batch.previous.cols() != ld {
            return Err(CicadaError::DimensionMismatch {
                expected: ld,
                found: batch.current.cols(),
            });
        }
        forward::build(self, g, params, batch, x)
    }
}

/// Everything the model keeps for one expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertState {
    pub expert: Expert,
    pub domains: MetaDomainSet,
    /// Shared map from raw features to the common feature width.
    pub projection: Linear,
    pub stats: ExpertStats,
}

impl ExpertState {
    pub fn kind(&self) -> ExpertKind {
        self.expert.kind
    }

    /// Projected `B×K` features.
    pub fn features(&self, params: &DomainParams, batch: &WindowBatch) -> Result<Matrix> {
        let raw = self.expert.raw_features(params, batch)?;
        Ok(self.projection.forward(&raw)?)
    }

    /// Un-normalized per-window anomaly scores under `params`, which belong
    /// to (or were adapted from) meta-domain `domain`.
    pub fn anomaly_scores(
        &self,
        params: &DomainParams,
        domain: usize,
        batch: &WindowBatch,
    ) -> Result<Vec<f64>> {
        if let Some(res) = self.expert.residual_scores(params, batch)? {
            return Ok(res);
        }
        let feats = self.features(params, batch)?;
        self.feature_scores(&feats, domain)
    }

    /// Squared Mahalanobis distance of projected features to the fitted
    /// feature distribution of `domain`.
    pub fn feature_scores(&self, features: &Matrix, domain: usize) -> Result<Vec<f64>> {
        let gauss = self.stats.gaussian(domain).ok_or_else(|| CicadaError::MissingStats {
            expert: self.kind().to_string(),
        })?;
        (0..features.rows())
            .map(|i| gauss.distance_sq(features.row(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests;
