//! Feedforward ReLU networks over a flat parameter vector.
//!
//! Parameters are flattened layer by layer: the weight matrix of each affine
//! layer in row-major `(out, in)` order, followed by its bias. ReLU sits
//! between consecutive affine layers; the last affine layer emits logits.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::Tape;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Layer widths `[input, hidden..., classes]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    sizes: Vec<usize>,
}

/// One layer of the forward chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Affine(AffineLayout),
    Relu { width: usize },
}

/// Where an affine layer's parameters live in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineLayout {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl AffineLayout {
    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

impl MlpArchitecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        Ok(Self { sizes })
    }

    /// 784–128–64–10.
    pub fn mnist_default() -> Self {
        Self {
            sizes: vec![784, 128, 64, 10],
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn affine_layouts(&self) -> Vec<AffineLayout> {
        let mut offset = 0;
        self.sizes
            .windows(2)
            .map(|pair| {
                let (in_dim, out_dim) = (pair[0], pair[1]);
                let layout = AffineLayout {
                    in_dim,
                    out_dim,
                    weight_offset: offset,
                    bias_offset: offset + in_dim * out_dim,
                };
                offset += layout.param_count();
                layout
            })
            .collect()
    }

    /// The forward chain: affine, ReLU, affine, ..., affine.
    pub fn layers(&self) -> Vec<LayerKind> {
        let affine = self.affine_layouts();
        let last = affine.len() - 1;
        let mut out = Vec::with_capacity(2 * affine.len());
        for (i, a) in affine.into_iter().enumerate() {
            out.push(LayerKind::Affine(a));
            if i != last {
                out.push(LayerKind::Relu { width: a.out_dim });
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.affine_layouts().iter().map(AffineLayout::param_count).sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        for layout in self.affine_layouts() {
            let limit = (6.0 / (layout.in_dim + layout.out_dim) as f64).sqrt();
            let weights =
                &mut params[layout.weight_offset..layout.weight_offset + layout.in_dim * layout.out_dim];
            for w in weights {
                *w = rng.random_range(-limit..=limit);
            }
        }
        params
    }

    fn check(&self, params: &[f64], input: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape {
                context: "MLP parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                context: "MLP input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Taped forward pass.
    pub fn forward<'p>(&self, params: &'p [f64], input: &[f64]) -> Result<(Tensor, Tape<'p>)> {
        self.check(params, input)?;
        let mut tape = Tape::new(params, input.to_vec());
        let mut node = 0;
        for layer in self.layers() {
            node = match layer {
                LayerKind::Affine(layout) => tape.affine(node, layout),
                LayerKind::Relu { .. } => tape.relu(node),
            };
        }
        let logits = Tensor::vector(tape.value(node).to_vec());
        Ok((logits, tape))
    }

    /// Forward pass without recording anything.
    pub fn logits(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check(params, input)?;
        let mut h = input.to_vec();
        for layer in self.layers() {
            match layer {
                LayerKind::Affine(l) => h = affine_apply(params, &l, &h),
                LayerKind::Relu { .. } => h.iter_mut().for_each(|x| *x = x.max(0.0)),
            }
        }
        Ok(h)
    }
}

pub(crate) fn affine_apply(params: &[f64], l: &AffineLayout, x: &[f64]) -> Vec<f64> {
    let w = &params[l.weight_offset..l.weight_offset + l.in_dim * l.out_dim];
    let b = &params[l.bias_offset..l.bias_offset + l.out_dim];
    w.chunks_exact(l.in_dim)
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias)
        .collect()
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    arch: MlpArchitecture,
    params: Vec<f64>,
}

impl MlpModel {
    pub fn new<R: Rng + ?Sized>(arch: MlpArchitecture, rng: &mut R) -> Self {
        let params = arch.init_params(rng);
        Self { arch, params }
    }

    pub fn zeros(arch: MlpArchitecture) -> Self {
        let params = vec![0.0; arch.param_count()];
        Self { arch, params }
    }

    pub fn from_params(arch: MlpArchitecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::Shape {
                context: "MLP parameter vector",
                expected: arch.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.params.clone()
    }

    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.params.len() {
            return Err(Error::Shape {
                context: "MLP unflatten",
                expected: self.params.len(),
                got: flat.len(),
            });
        }
        self.params.copy_from_slice(flat);
        Ok(())
    }

    /// Weight matrix of affine layer `i` as a `(out, in)` tensor.
    pub fn weight(&self, i: usize) -> Tensor {
        let l = self.arch.affine_layouts()[i];
        let data = self.params[l.weight_offset..l.weight_offset + l.in_dim * l.out_dim].to_vec();
        Tensor::new(data, vec![l.out_dim, l.in_dim]).expect("layout is consistent")
    }

    pub fn bias(&self, i: usize) -> Tensor {
        let l = self.arch.affine_layouts()[i];
        Tensor::vector(self.params[l.bias_offset..l.bias_offset + l.out_dim].to_vec())
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Tape<'_>)> {
        self.arch.forward(&self.params, input.data())
    }
}
