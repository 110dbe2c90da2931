//! Central finite-difference gradient checker.
//!
//! Only forward values of the graph are used, so the check is independent of
//! the backward rules it verifies.

use super::{Graph, Matrix, NumericsError, Var};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per-parameter `‖g_rev − g_fd‖_F / max(‖g_rev‖_F, ‖g_fd‖_F, 1e-8)`.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences with step `step`, for every entry of every parameter.
pub fn check_gradients<F>(
    params: &[Matrix],
    step: f64,
    build: F,
) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let eval = |values: &[Matrix]| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|m| g.param(m.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.scalar(root))
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|m| g.param(m.clone())).collect();
    let root = build(&mut g, &vars)?;
    let grads = g.backward(root)?;

    let mut rel_errors = Vec::with_capacity(params.len());
    let mut work: Vec<Matrix> = params.to_vec();
    for (p, &v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(v, params[p].shape());
        let mut numeric = Matrix::zeros(params[p].rows(), params[p].cols());
        for e in 0..params[p].len() {
            let orig = work[p].as_slice()[e];
            work[p].as_mut_slice()[e] = orig + step;
            let up = eval(&work)?;
            work[p].as_mut_slice()[e] = orig - step;
            let down = eval(&work)?;
            work[p].as_mut_slice()[e] = orig;
            numeric.as_mut_slice()[e] = (up - down) / (2.0 * step);
        }
        let diff = analytic.sub(&numeric)?.frobenius();
        let denom = analytic.frobenius().max(numeric.frobenius()).max(1e-8);
        rel_errors.push(diff / denom);
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        rel_errors,
        max_rel_error,
    })
}
