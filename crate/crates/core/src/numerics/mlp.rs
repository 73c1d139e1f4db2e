use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::fan_in_uniform;
use super::{Graph, NumericsError, ParamSet, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

/// Squashing applied to the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSquash {
    None,
    /// `bound · tanh(y)`
    Tanh {
        bound: f64,
    },
}

/// Architecture of a fully connected network.
///
/// Each layer stores its weights as an `[inputs, outputs]` row-major matrix
/// followed by the bias, so a layer occupies `inputs·outputs + outputs`
/// consecutive values of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub output: OutputSquash,
}

impl MlpSpec {
    pub fn new(dims: Vec<usize>, activation: Activation, output: OutputSquash) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dims");
        Self {
            dims,
            activation,
            output,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    /// `(inputs, outputs)` of layer `l`.
    pub fn layer_shape(&self, l: usize) -> (usize, usize) {
        (self.dims[l], self.dims[l + 1])
    }

    pub fn layer_param_count(&self, l: usize) -> usize {
        let (i, o) = self.layer_shape(l);
        i * o + o
    }

    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| self.layer_param_count(l))
            .sum()
    }

    /// Layer-wise offsets into a flat parameter vector.
    pub fn layer_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_layers());
        let mut acc = 0;
        for l in 0..self.n_layers() {
            out.push(acc);
            acc += self.layer_param_count(l);
        }
        out
    }

    /// Fan-in uniform initialization of a flat parameter vector.
    pub fn init(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in 0..self.n_layers() {
            let (i, _) = self.layer_shape(l);
            out.extend(fan_in_uniform(rng, i, self.layer_param_count(l)));
        }
        out
    }

    /// A [`ParamSet`] with one `[1, P_l]` block per layer.
    pub fn param_set(&self, prefix: &str, flat: Vec<f64>) -> ParamSet {
        assert_eq!(
            flat.len(),
            self.param_count(),
            "flat vector does not match spec"
        );
        let mut ps = ParamSet::new();
        for (l, off) in self.layer_offsets().into_iter().enumerate() {
            let n = self.layer_param_count(l);
            ps.push(format!("{prefix}.{l}"), 1, n, flat[off..off + n].to_vec());
        }
        ps
    }

    /// Record the network on `g`.
    ///
    /// `layers[l]` is a bank whose rows are full parameter sets for layer `l`;
    /// sample `i` of `x` runs through row `index[i]` of every bank.
    pub fn forward(
        &self,
        g: &mut Graph,
        layers: &[Var],
        index: &[usize],
        x: Var,
    ) -> Result<Var, NumericsError> {
        if layers.len() != self.n_layers() {
            return Err(NumericsError::Shape {
                node: "mlp".into(),
                detail: format!(
                    "{} layer banks for {} layers",
                    layers.len(),
                    self.n_layers()
                ),
            });
        }
        let mut h = x;
        for (l, &bank) in layers.iter().enumerate() {
            let (i, o) = self.layer_shape(l);
            h = g.bank_linear(h, bank, index, i, o)?;
            if l + 1 < self.n_layers() {
                h = match self.activation {
                    Activation::Relu => g.relu(h),
                    Activation::Tanh => g.tanh(h),
                };
            }
        }
        Ok(match self.output {
            OutputSquash::None => h,
            OutputSquash::Tanh { bound } => {
                let t = g.tanh(h);
                g.scale(t, bound)
            }
        })
    }

    /// Plain evaluation of one input without a graph.
    pub fn eval_single(&self, flat: &[f64], x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        for l in 0..self.n_layers() {
            let (i, o) = self.layer_shape(l);
            let w = &flat[off..off + i * o];
            let b = &flat[off + i * o..off + i * o + o];
            let mut y = b.to_vec();
            for (k, &xk) in h.iter().enumerate() {
                for (yj, wj) in y.iter_mut().zip(&w[k * o..(k + 1) * o]) {
                    *yj += xk * wj;
                }
            }
            if l + 1 < self.n_layers() {
                match self.activation {
                    Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Tanh => y.iter_mut().for_each(|v| *v = v.tanh()),
                }
            }
            h = y;
            off += i * o + o;
        }
        if let OutputSquash::Tanh { bound } = self.output {
            h.iter_mut().for_each(|v| *v = bound * v.tanh());
        }
        h
    }

    /// Batched evaluation without a graph; rows of `x` are samples.
    pub fn eval_batch(&self, flat: &[f64], x: &Tensor) -> Tensor {
        let rows: Vec<f64> = (0..x.rows())
            .flat_map(|r| self.eval_single(flat, x.row_slice(r)))
            .collect();
        Tensor::matrix(x.rows(), self.output_dim(), rows).expect("consistent dims")
    }

    /// L2 norm of each layer's parameters (weights and bias together).
    pub fn layer_norms(&self, flat: &[f64]) -> Vec<f64> {
        self.layer_offsets()
            .into_iter()
            .enumerate()
            .map(|(l, off)| {
                let n = self.layer_param_count(l);
                flat[off..off + n].iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect()
    }
}

/// Bind a flat MLP parameter vector as one single-row bank per layer.
pub fn bind_mlp(g: &mut Graph, spec: &MlpSpec, flat: &[f64], requires_grad: bool) -> Vec<Var> {
    spec.layer_offsets()
        .into_iter()
        .enumerate()
        .map(|(l, off)| {
            let n = spec.layer_param_count(l);
            let t = Tensor::row(flat[off..off + n].to_vec());
            if requires_grad {
                g.param(t)
            } else {
                g.input(t)
            }
        })
        .collect()
}
