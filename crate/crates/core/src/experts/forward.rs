use crate::error::Result;
use crate::numerics::{Graph, Var};

use super::{DomainParams, Expert, ExpertKind, WindowBatch};

/// Nodes produced by recording one expert on a graph.
pub(crate) struct ExpertForward {
    /// One leaf per payload tensor, in payload order.
    pub params: Vec<Var>,
    /// `B×raw_dim`.
    pub features: Var,
    /// Scalar mean loss.
    pub loss: Var,
    /// `B×Ld` reconstruction residual, absent for SFA.
    pub residual: Option<Var>,
}

pub(super) fn build(
    expert: &Expert,
    g: &mut Graph,
    params: &DomainParams,
    batch: &WindowBatch,
    x: Var,
) -> Result<ExpertForward> {
    let vars: Vec<Var> = params.tensors.iter().map(|t| g.param(t.clone())).collect();
    let inv_b = 1.0 / batch.len() as f64;
    let cfg = &expert.config;

    let (features, loss, residual) = match expert.kind {
        ExpertKind::Pca => {
            let f = g.matmul(x, vars[0])?;
            let wt = g.transpose(vars[0]);
            let rec = g.matmul(f, wt)?;
            let res = g.sub(x, rec)?;
            let var = g.frob_sq(f);
            (f, g.scale(var, -inv_b), Some(res))
        }
        ExpertKind::Sfa => {
            let diff = g.constant(batch.current.sub(&batch.previous)?);
            let f = g.matmul(diff, vars[0])?;
            let energy = g.frob_sq(f);
            (f, g.scale(energy, inv_b), None)
        }
        ExpertKind::Kpca => {
            let kernel = params.kernel.as_ref().ok_or_else(|| {
                crate::CicadaError::BadConfig("kpca parameters lack a kernel basis".into())
            })?;
            let kb = g.constant(kernel.rows(&batch.current)?);
            let f = g.matmul(kb, vars[0])?;
            let rec = decode(g, f, &vars[1..5])?;
            let res = g.sub(x, rec)?;
            let var = g.frob_sq(f);
            let var = g.scale(var, -inv_b);
            let err = g.frob_sq(res);
            let err = g.scale(err, cfg.kpca_recon_weight * inv_b);
            (f, g.add(var, err)?, Some(res))
        }
        ExpertKind::Nmf | ExpertKind::Sdl => {
            // dictionary P = (ReLU H)ᵀ for NMF, Hᵀ for SDL
            let atoms = if expert.kind == ExpertKind::Nmf {
                g.relu(vars[0])
            } else {
                vars[0]
            };
            let p = g.transpose(atoms);
            let (f, res) = project(g, x, p, atoms, cfg.ridge)?;
            let err = g.frob_sq(res);
            let mut loss = g.scale(err, inv_b);
            if expert.kind == ExpertKind::Sdl {
                let l1 = g.abs(vars[0]);
                let l1 = g.sum(l1);
                let l1 = g.scale(l1, cfg.lambda_sdl);
                loss = g.add(loss, l1)?;
            }
            (f, loss, Some(res))
        }
        ExpertKind::Tcpd => {
            let p = g.khatri_rao(vars[0], vars[1])?;
            let pt = g.transpose(p);
            let (f, res) = project(g, x, p, pt, cfg.ridge)?;
            let err = g.frob_sq(res);
            (f, g.scale(err, inv_b), Some(res))
        }
        ExpertKind::MlpAe => {
            let f = decode(g, x, &vars[0..4])?;
            let rec = decode(g, f, &vars[4..8])?;
            let res = g.sub(x, rec)?;
            let err = g.frob_sq(res);
            (f, g.scale(err, inv_b), Some(res))
        }
    };
    Ok(ExpertForward {
        params: vars,
        features,
        loss,
        residual,
    })
}

/// Two-layer tanh network from `[W1, b1, W2, b2]`.
fn decode(g: &mut Graph, input: Var, layers: &[Var]) -> Result<Var> {
    let h = g.linear(input, layers[0], layers[1])?;
    let h = g.tanh(h);
    Ok(g.linear(h, layers[2], layers[3])?)
}

/// Least-squares coefficients of `x` on the columns of `p` (with `pt = pᵀ`)
/// and the remaining residual.
fn project(g: &mut Graph, x: Var, p: Var, pt: Var, ridge: f64) -> Result<(Var, Var)> {
    let pinv = g.pseudo_inverse(p, ridge)?;
    let pinv_t = g.transpose(pinv);
    let coeff = g.matmul(x, pinv_t)?;
    let rec = g.matmul(coeff, pt)?;
    let res = g.sub(x, rec)?;
    Ok((coeff, res))
}
