//! Small dense layers shared by the experts and the fusion head.

use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, Matrix, NumericsError, Var};
use crate::rng::SeededRng;

/// Affine map `x·Wᵀ + b` with `W: out×in`, `b: 1×out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    /// Gaussian weights scaled by `1/√in`, zero bias.
    pub fn init(input: usize, output: usize, rng: &mut SeededRng) -> Self {
        let scale = 1.0 / (input.max(1) as f64).sqrt();
        Self {
            weight: rng.normal_matrix(output, input, scale),
            bias: Matrix::zeros(1, output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NumericsError> {
        let mut out = x.matmul_t(&self.weight)?;
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(self.bias.as_slice()) {
                *o += b;
            }
        }
        Ok(out)
    }

    pub fn register(&self, g: &mut Graph) -> LinearVars {
        LinearVars {
            weight: g.param(self.weight.clone()),
            bias: g.param(self.bias.clone()),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl LinearVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var, NumericsError> {
        g.linear(x, self.weight, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Two affine layers with a `tanh` in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub hidden: LinearVars,
    pub output: LinearVars,
}

impl Mlp {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut SeededRng) -> Self {
        Self {
            hidden: Linear::init(input, hidden, rng),
            output: Linear::init(hidden, output, rng),
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NumericsError> {
        let h = self.hidden.forward(x)?.map(f64::tanh);
        self.output.forward(&h)
    }

    pub fn register(&self, g: &mut Graph) -> MlpVars {
        MlpVars {
            hidden: self.hidden.register(g),
            output: self.output.register(g),
        }
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut t = self.hidden.tensors();
        t.extend(self.output.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut t = self.hidden.tensors_mut();
        t.extend(self.output.tensors_mut());
        t
    }
}

impl MlpVars {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var, NumericsError> {
        let h = self.hidden.apply(g, x)?;
        let h = g.tanh(h);
        self.output.apply(g, h)
    }

    pub fn vars(&self) -> [Var; 4] {
        [
            self.hidden.weight,
            self.hidden.bias,
            self.output.weight,
            self.output.bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_and_direct_forward_agree() {
        let mut rng = SeededRng::new(3);
        let mlp = Mlp::init(4, 6, 2, &mut rng);
        let x = rng.normal_matrix(5, 4, 1.0);
        let direct = mlp.forward(&x).unwrap();
        let mut g = Graph::new();
        let vars = mlp.register(&mut g);
        let xv = g.constant(x);
        let out = vars.apply(&mut g, xv).unwrap();
        let diff = g.value(out).sub(&direct).unwrap().max_abs();
        assert!(diff < 1e-14);
    }
}
