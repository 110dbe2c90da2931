//! Two-level attention: per expert over its meta-domains, then over experts,
//! followed by a reconstruction head.

use serde::{Deserialize, Serialize};

use crate::error::{CicadaError, Result};
use crate::nn::{Mlp, MlpVars};
use crate::numerics::{Axis, Graph, Matrix, Var};
use crate::rng::SeededRng;

/// Multi-head attention in which the window is the query and a list of
/// `B×K` feature matrices are the keys/values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    /// Per head, `d_k × query_dim`.
    pub query: Vec<Matrix>,
    /// Per head, `d_k × K`.
    pub key: Vec<Matrix>,
    pub value: Vec<Matrix>,
    /// `K × K`.
    pub output: Matrix,
}

#[derive(Debug, Clone)]
pub struct AttentionVars {
    query: Vec<Var>,
    key: Vec<Var>,
    value: Vec<Var>,
    output: Var,
}

impl AttentionBlock {
    pub fn init(query_dim: usize, feature_dim: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        if heads == 0 || feature_dim % heads != 0 {
            return Err(CicadaError::BadConfig(format!(
                "feature width {feature_dim} is not divisible by {heads} heads"
            )));
        }
        let dk = feature_dim / heads;
        let sq = 1.0 / (query_dim as f64).sqrt();
        let sf = 1.0 / (feature_dim as f64).sqrt();
        let mut draw = |rows, cols, s| rng.normal_matrix(rows, cols, s);
        let query = (0..heads).map(|_| draw(dk, query_dim, sq)).collect();
        let key = (0..heads).map(|_| draw(dk, feature_dim, sf)).collect();
        let value = (0..heads).map(|_| draw(dk, feature_dim, sf)).collect();
        let output = draw(feature_dim, feature_dim, sf);
        Ok(Self {
            query,
            key,
            value,
            output,
        })
    }

    pub fn heads(&self) -> usize {
        self.query.len()
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.query
            .iter()
            .chain(&self.key)
            .chain(&self.value)
            .chain(std::iter::once(&self.output))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.query
            .iter_mut()
            .chain(self.key.iter_mut())
            .chain(self.value.iter_mut())
            .chain(std::iter::once(&mut self.output))
            .collect()
    }

    pub fn register(&self, g: &mut Graph) -> AttentionVars {
        let mut reg = |ms: &[Matrix]| ms.iter().map(|m| g.param(m.clone())).collect::<Vec<_>>();
        let query = reg(&self.query);
        let key = reg(&self.key);
        let value = reg(&self.value);
        let output = g.param(self.output.clone());
        AttentionVars {
            query,
            key,
            value,
            output,
        }
    }
}

impl AttentionVars {
    fn vars(&self) -> Vec<Var> {
        self.query
            .iter()
            .chain(&self.key)
            .chain(&self.value)
            .copied()
            .chain(std::iter::once(self.output))
            .collect()
    }

    /// Returns the fused `B×K` features and the head-averaged `B×m`
    /// attention weights over the `m` items.
    pub fn attend(&self, g: &mut Graph, x: Var, items: &[Var]) -> Result<(Var, Var)> {
        if items.is_empty() {
            return Err(CicadaError::BadConfig("attention over an empty set".into()));
        }
        let heads = self.query.len();
        let dk = g.shape(self.query[0]).0;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut head_out = Vec::with_capacity(heads);
        let mut weight_sum: Option<Var> = None;
        for h in 0..heads {
            let qt = g.transpose(self.query[h]);
            let q = g.matmul(x, qt)?;
            let kt = g.transpose(self.key[h]);
            let vt = g.transpose(self.value[h]);
            let mut logits = Vec::with_capacity(items.len());
            let mut values = Vec::with_capacity(items.len());
            for &f in items {
                let k = g.matmul(f, kt)?;
                let qk = g.hadamard(q, k)?;
                let s = g.row_sum(qk);
                logits.push(g.scale(s, inv_sqrt));
                values.push(g.matmul(f, vt)?);
            }
            let logits = g.concat_cols(&logits)?;
            let att = g.softmax(logits, Axis::Row);
            let mut acc: Option<Var> = None;
            for (i, &v) in values.iter().enumerate() {
                let a = g.slice_cols(att, i, i + 1)?;
                let term = g.mul_col(a, v)?;
                acc = Some(match acc {
                    None => term,
                    Some(prev) => g.add(prev, term)?,
                });
            }
            head_out.push(acc.expect("non-empty items"));
            weight_sum = Some(match weight_sum {
                None => att,
                Some(prev) => g.add(prev, att)?,
            });
        }
        let cat = g.concat_cols(&head_out)?;
        let ot = g.transpose(self.output);
        let out = g.matmul(cat, ot)?;
        let weights = g.scale(weight_sum.expect("at least one head"), 1.0 / heads as f64);
        Ok((out, weights))
    }
}

/// All fusion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    /// One meta-level block per expert.
    pub meta: Vec<AttentionBlock>,
    pub expert: AttentionBlock,
    /// Maps fused features back to a window.
    pub decoder: Mlp,
}

/// Registered fusion parameters on a graph.
#[derive(Debug, Clone)]
pub struct FusionVars {
    pub meta: Vec<AttentionVars>,
    pub expert: AttentionVars,
    pub decoder: MlpVars,
}

impl FusionVars {
    /// Leaves in the same order as [`FusionParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self.meta.iter().flat_map(AttentionVars::vars).collect();
        out.extend(self.expert.vars());
        out.extend(self.decoder.vars());
        out
    }
}

/// Nodes produced by [`FusionParams::record`].
#[derive(Debug, Clone)]
pub struct FusionNodes {
    /// Per expert, `B×m_j` meta-domain weights.
    pub meta_weights: Vec<Var>,
    /// `B×J` expert weights.
    pub expert_weights: Var,
    /// `B×Ld` reconstruction.
    pub reconstruction: Var,
    /// Scalar mean squared reconstruction error per window.
    pub loss: Var,
}

/// Value-level fusion result.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub meta_weights: Vec<Matrix>,
    pub expert_weights: Matrix,
    pub reconstruction: Matrix,
    pub loss: f64,
}

impl FusionParams {
    pub fn init(
        n_experts: usize,
        window_dim: usize,
        feature_dim: usize,
        meta_heads: usize,
        expert_heads: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let meta = (0..n_experts)
            .map(|_| AttentionBlock::init(window_dim, feature_dim, meta_heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let expert = AttentionBlock::init(window_dim, feature_dim, expert_heads, rng)?;
        let decoder = Mlp::init(feature_dim, hidden, window_dim, rng);
        Ok(Self {
            meta,
            expert,
            decoder,
        })
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out: Vec<&Matrix> = self.meta.iter().flat_map(AttentionBlock::tensors).collect();
        out.extend(self.expert.tensors());
        out.extend(self.decoder.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = self
            .meta
            .iter_mut()
            .flat_map(AttentionBlock::tensors_mut)
            .collect();
        out.extend(self.expert.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn register(&self, g: &mut Graph) -> FusionVars {
        FusionVars {
            meta: self.meta.iter().map(|b| b.register(g)).collect(),
            expert: self.expert.register(g),
            decoder: self.decoder.register(g),
        }
    }

    /// Records both attention levels and the reconstruction loss.
    /// `features[j][k]` is the `B×K` projected feature of expert `j` under
    /// meta-domain `k`.
    pub fn record(
        vars: &FusionVars,
        g: &mut Graph,
        x: Var,
        features: &[Vec<Var>],
    ) -> Result<FusionNodes> {
        if features.len() != vars.meta.len() {
            return Err(CicadaError::LengthMismatch {
                left: features.len(),
                right: vars.meta.len(),
            });
        }
        let mut fused = Vec::with_capacity(features.len());
        let mut meta_weights = Vec::with_capacity(features.len());
        for (block, feats) in vars.meta.iter().zip(features) {
            let (z, w) = block.attend(g, x, feats)?;
            fused.push(z);
            meta_weights.push(w);
        }
        let (z, expert_weights) = vars.expert.attend(g, x, &fused)?;
        let reconstruction = vars.decoder.apply(g, z)?;
        let diff = g.sub(x, reconstruction)?;
        let err = g.frob_sq(diff);
        let b = g.shape(x).0 as f64;
        let loss = g.scale(err, 1.0 / b);
        Ok(FusionNodes {
            meta_weights,
            expert_weights,
            reconstruction,
            loss,
        })
    }

    /// Forward pass without gradients.
    pub fn forward(&self, x: &Matrix, features: &[Vec<Matrix>]) -> Result<FusionOutput> {
        let mut g = Graph::new();
        let vars = self.register(&mut g);
        let xv = g.constant(x.clone());
        let fv: Vec<Vec<Var>> = features
            .iter()
            .map(|fs| fs.iter().map(|f| g.constant(f.clone())).collect())
            .collect();
        let nodes = Self::record(&vars, &mut g, xv, &fv)?;
        Ok(FusionOutput {
            meta_weights: nodes.meta_weights.iter().map(|&w| g.value(w).clone()).collect(),
            expert_weights: g.value(nodes.expert_weights).clone(),
            reconstruction: g.value(nodes.reconstruction).clone(),
            loss: g.scalar(nodes.loss),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check::{check_gradients, FD_STEP};

    #[test]
    fn weights_are_distributions() {
        let mut rng = SeededRng::new(1);
        let fp = FusionParams::init(3, 6, 8, 4, 2, 5, &mut rng).unwrap();
        let x = rng.normal_matrix(5, 6, 1.0);
        let feats: Vec<Vec<Matrix>> = [1, 3, 2]
            .iter()
            .map(|&m| (0..m).map(|_| rng.normal_matrix(5, 8, 1.0)).collect())
            .collect();
        let out = fp.forward(&x, &feats).unwrap();
        assert_eq!(out.expert_weights.shape(), (5, 3));
        for i in 0..5 {
            let s: f64 = out.expert_weights.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(out.expert_weights.row(i).iter().all(|&w| w > 0.0));
        }
        // a single meta-domain always gets all the weight
        assert!(out.meta_weights[0].as_slice().iter().all(|&w| (w - 1.0).abs() < 1e-15));
        assert_eq!(out.meta_weights[1].shape(), (5, 3));
    }

    #[test]
    fn identical_items_share_attention_evenly() {
        let mut rng = SeededRng::new(4);
        let fp = FusionParams::init(3, 6, 8, 4, 4, 5, &mut rng).unwrap();
        let x = rng.normal_matrix(4, 6, 1.0);
        let f = rng.normal_matrix(4, 8, 1.0);
        let feats = vec![vec![f.clone(), f.clone()], vec![f.clone()], vec![f.clone()]];
        let out = fp.forward(&x, &feats).unwrap();
        assert!(out.meta_weights[0].as_slice().iter().all(|&w| (w - 0.5).abs() < 1e-12));

        // identical fused columns need identical meta blocks as well
        let block = fp.meta[0].clone();
        let same = FusionParams {
            meta: vec![block.clone(), block.clone(), block],
            ..fp
        };
        let feats = vec![vec![f.clone()], vec![f.clone()], vec![f]];
        let out = same.forward(&x, &feats).unwrap();
        assert!(out
            .expert_weights
            .as_slice()
            .iter()
            .all(|&w| (w - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn expert_weights_are_permutation_equivariant() {
        let mut rng = SeededRng::new(12);
        let fp = FusionParams::init(3, 5, 8, 2, 4, 6, &mut rng).unwrap();
        let x = rng.normal_matrix(3, 5, 1.0);
        let feats: Vec<Vec<Matrix>> = [2, 1, 3]
            .iter()
            .map(|&m| (0..m).map(|_| rng.normal_matrix(3, 8, 1.0)).collect())
            .collect();
        let out = fp.forward(&x, &feats).unwrap();
        let perm = [2, 0, 1];
        let permuted = FusionParams {
            meta: perm.iter().map(|&j| fp.meta[j].clone()).collect(),
            ..fp.clone()
        };
        let pf: Vec<Vec<Matrix>> = perm.iter().map(|&j| feats[j].clone()).collect();
        let pout = permuted.forward(&x, &pf).unwrap();
        for i in 0..3 {
            for (slot, &j) in perm.iter().enumerate() {
                let a = pout.expert_weights[(i, slot)];
                let b = out.expert_weights[(i, j)];
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!((out.loss - pout.loss).abs() < 1e-10);
    }

    #[test]
    fn weights_ignore_a_common_logit_shift() {
        // softmax(l + c) = softmax(l): shifting every key by the same
        // vector adds one constant per row to all logits
        let mut rng = SeededRng::new(21);
        let block = AttentionBlock::init(3, 4, 1, &mut rng).unwrap();
        let x = rng.normal_matrix(2, 3, 1.0);
        let items: Vec<Matrix> = (0..3).map(|_| rng.normal_matrix(2, 4, 1.0)).collect();
        let shift = Matrix::from_fn(2, 4, |i, j| (i + 2 * j) as f64 * 0.3);
        let run = |items: &[Matrix]| {
            let mut g = Graph::new();
            let v = block.register(&mut g);
            let xv = g.constant(x.clone());
            let iv: Vec<Var> = items.iter().map(|m| g.constant(m.clone())).collect();
            let (_, w) = v.attend(&mut g, xv, &iv).unwrap();
            g.value(w).clone()
        };
        let shifted: Vec<Matrix> = items.iter().map(|m| m.add(&shift).unwrap()).collect();
        let diff = run(&items).sub(&run(&shifted)).unwrap().max_abs();
        assert!(diff < 1e-12);
    }

    #[test]
    fn single_meta_domain_output_ignores_the_query() {
        let mut rng = SeededRng::new(5);
        let block = AttentionBlock::init(3, 4, 2, &mut rng).unwrap();
        let f = rng.normal_matrix(2, 4, 1.0);
        let run = |x: Matrix| {
            let mut g = Graph::new();
            let v = block.register(&mut g);
            let xv = g.constant(x);
            let fv = g.constant(f.clone());
            let (z, _) = v.attend(&mut g, xv, &[fv]).unwrap();
            g.value(z).clone()
        };
        let a = run(rng.normal_matrix(2, 3, 1.0));
        let b = run(rng.normal_matrix(2, 3, 5.0));
        assert!(a.sub(&b).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn reconstruction_loss_examples() {
        // a decoder that outputs zero leaves mean ‖x‖² = 1 for unit windows
        let mut rng = SeededRng::new(8);
        let mut fp = FusionParams::init(1, 4, 4, 2, 2, 3, &mut rng).unwrap();
        for t in fp.decoder.output.tensors_mut() {
            *t = Matrix::zeros(t.rows(), t.cols());
        }
        let x = Matrix::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.6, 0.8, 0.0]]);
        let f = vec![vec![rng.normal_matrix(2, 4, 1.0)]];
        let out = fp.forward(&x, &f).unwrap();
        assert!((out.loss - 1.0).abs() < 1e-15);
    }

    #[test]
    fn heads_must_divide_feature_width() {
        let mut rng = SeededRng::new(0);
        assert!(AttentionBlock::init(4, 10, 4, &mut rng).is_err());
    }

    #[test]
    fn attention_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(7);
        let block = AttentionBlock::init(3, 4, 2, &mut rng).unwrap();
        let x = rng.normal_matrix(3, 3, 1.0);
        let items: Vec<Matrix> = (0..3).map(|_| rng.normal_matrix(3, 4, 1.0)).collect();
        let mut params: Vec<Matrix> = block.tensors().into_iter().cloned().collect();
        params.extend(items.iter().cloned());
        let n_block = block.tensors().len();
        let report = check_gradients(&params, FD_STEP, |g, vars| {
            let av = AttentionVars {
                query: vars[0..2].to_vec(),
                key: vars[2..4].to_vec(),
                value: vars[4..6].to_vec(),
                output: vars[6],
            };
            let xv = g.constant(x.clone());
            let (z, w) = av.attend(g, xv, &vars[n_block..]).map_err(|e| match e {
                CicadaError::Numerics(n) => n,
                other => panic!("{other}"),
            })?;
            let a = g.frob_sq(z);
            let b = g.hadamard(w, w)?;
            let b = g.sum(b);
            g.add(a, b)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{:?}", report.rel_errors);
    }

    #[test]
    fn tensor_order_matches_registration() {
        let mut rng = SeededRng::new(2);
        let fp = FusionParams::init(2, 4, 4, 2, 2, 3, &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = fp.register(&mut g);
        let leaves = vars.vars();
        let tensors = fp.tensors();
        assert_eq!(leaves.len(), tensors.len());
        for (v, t) in leaves.iter().zip(tensors) {
            assert_eq!(g.value(*v), t);
        }
    }
}
