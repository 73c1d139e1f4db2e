use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Gradients, Graph, NumericsError, Tensor, Var};

/// One named block inside a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Flat parameter vector with a named layout.
///
/// Optimizers see only `data`; graph code binds each entry as a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub entries: Vec<ParamEntry>,
    pub data: Vec<f64>,
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Append a block and return its index.
    pub fn push(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        values: Vec<f64>,
    ) -> usize {
        assert_eq!(values.len(), rows * cols, "param block size");
        let offset = self.data.len();
        self.data.extend(values);
        self.entries.push(ParamEntry {
            name: name.into(),
            rows,
            cols,
            offset,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.entries[i].range()]
    }

    pub fn tensor(&self, i: usize) -> Tensor {
        let e = &self.entries[i];
        Tensor::matrix(e.rows, e.cols, self.block(i).to_vec()).expect("layout is consistent")
    }

    /// Bind every block as a graph leaf.
    pub fn bind(&self, g: &mut Graph, requires_grad: bool) -> Vec<Var> {
        (0..self.entries.len())
            .map(|i| {
                let t = self.tensor(i);
                if requires_grad {
                    g.param(t)
                } else {
                    g.input(t)
                }
            })
            .collect()
    }

    /// Flatten per-block gradients back into the parameter layout.
    pub fn flat_grad(&self, grads: &Gradients, vars: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for v in vars {
            grads.extend_into(*v, &mut out);
        }
        out
    }

    /// Check that another vector can be loaded into this layout.
    pub fn load(&mut self, data: Vec<f64>) -> Result<(), NumericsError> {
        if data.len() != self.data.len() {
            return Err(NumericsError::Shape {
                node: "params".into(),
                detail: format!(
                    "layout holds {} values, got {}",
                    self.data.len(),
                    data.len()
                ),
            });
        }
        self.data = data;
        Ok(())
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` samples.
pub fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, bound, n)
}

pub fn uniform(rng: &mut impl Rng, bound: f64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}
