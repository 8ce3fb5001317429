use super::mlp::{affine_apply, AffineLayout};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Input,
    Affine { x: usize, layout: AffineLayout },
    Relu { x: usize },
    CrossEntropy { logits: usize, label: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Gradients of a scalar loss with respect to the flat parameter vector and
/// the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Operations recorded during a forward pass, in execution order.
///
/// Node 0 is always the input. Parameters are read from the borrowed flat
/// vector, so recording does not copy the model.
#[derive(Debug, Clone)]
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub(crate) fn new(params: &'p [f64], input: Vec<f64>) -> Self {
        Self {
            params,
            nodes: vec![Node {
                value: input,
                op: Op::Input,
            }],
        }
    }

    pub(crate) fn value(&self, node: usize) -> &[f64] {
        &self.nodes[node].value
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> usize {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub(crate) fn affine(&mut self, x: usize, layout: AffineLayout) -> usize {
        let y = affine_apply(self.params, &layout, &self.nodes[x].value);
        self.push(y, Op::Affine { x, layout })
    }

    pub(crate) fn relu(&mut self, x: usize) -> usize {
        let y = self.nodes[x].value.iter().map(|v| v.max(0.0)).collect();
        self.push(y, Op::Relu { x })
    }

    /// Appends `−log softmax(logits)[label]` on top of the last node and
    /// returns its value.
    pub fn cross_entropy(&mut self, label: usize) -> Result<f64> {
        let logits = self.nodes.len() - 1;
        if matches!(self.nodes[logits].op, Op::CrossEntropy { .. }) {
            return Err(Error::InvalidArgument("tape already ends in a loss".into()));
        }
        let loss = cross_entropy_slice(&self.nodes[logits].value, label)?;
        self.push(vec![loss], Op::CrossEntropy { logits, label });
        Ok(loss)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from the final scalar loss, seeded with `seed`.
    pub fn backward(&self, seed: f64) -> Result<Gradients> {
        let last = self.nodes.len() - 1;
        if !matches!(self.nodes[last].op, Op::CrossEntropy { .. }) || self.nodes[last].value.len() != 1 {
            return Err(Error::InvalidArgument(
                "backward requires a tape ending in a scalar loss".into(),
            ));
        }
        let mut adjoint: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        let mut grad_params = vec![0.0; self.params.len()];
        adjoint[last][0] = seed;

        for idx in (1..=last).rev() {
            let g = std::mem::take(&mut adjoint[idx]);
            match &self.nodes[idx].op {
                Op::Input => unreachable!("input is node 0"),
                Op::CrossEntropy { logits, label } => {
                    let z = &self.nodes[*logits].value;
                    let probs = softmax(z);
                    for (k, (a, p)) in adjoint[*logits].iter_mut().zip(probs).enumerate() {
                        let onehot = if k == *label { 1.0 } else { 0.0 };
                        *a += g[0] * (p - onehot);
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[*x].value;
                    for ((a, gi), xi) in adjoint[*x].iter_mut().zip(&g).zip(xv) {
                        // subgradient 0 at the kink
                        if *xi > 0.0 {
                            *a += gi;
                        }
                    }
                }
                Op::Affine { x, layout } => {
                    let xv = &self.nodes[*x].value;
                    let (n_in, n_out) = (layout.in_dim, layout.out_dim);
                    let w = &self.params[layout.weight_offset..layout.weight_offset + n_in * n_out];
                    {
                        let gw = &mut grad_params[layout.weight_offset..layout.weight_offset + n_in * n_out];
                        for (row, gr) in gw.chunks_exact_mut(n_in).zip(&g) {
                            if *gr != 0.0 {
                                for (dst, xi) in row.iter_mut().zip(xv) {
                                    *dst += gr * xi;
                                }
                            }
                        }
                    }
                    for (dst, gr) in grad_params[layout.bias_offset..layout.bias_offset + n_out]
                        .iter_mut()
                        .zip(&g)
                    {
                        *dst += gr;
                    }
                    let ax = &mut adjoint[*x];
                    for (row, gr) in w.chunks_exact(n_in).zip(&g) {
                        if *gr != 0.0 {
                            for (dst, wi) in ax.iter_mut().zip(row) {
                                *dst += gr * wi;
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            params: grad_params,
            input: std::mem::take(&mut adjoint[0]),
        })
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn cross_entropy_slice(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("logits"));
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// `−log softmax(logits)[label]`, stabilized by subtracting the max logit.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<f64> {
    cross_entropy_slice(logits.data(), label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{MlpArchitecture, MlpModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cross_entropy_examples() {
        let ce = |z: Vec<f64>, y| cross_entropy(&Tensor::vector(z), y).unwrap();
        assert!((ce(vec![0.0, 0.0], 0) - std::f64::consts::LN_2).abs() < 1e-15);
        let big = ce(vec![1e6, 0.0], 0);
        assert!(big.is_finite() && big.abs() < 1e-12);
        // direct scalar evaluation: ln(e + e^2 + e^3) - 3
        let direct = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((ce(vec![1.0, 2.0, 3.0], 2) - direct).abs() < 1e-15);
        assert!((ce(vec![1.0, 2.0, 3.0], 2) - 0.40760596).abs() < 1e-8);
        assert!(cross_entropy(&Tensor::vector(vec![0.0]), 1).is_err());
    }

    #[test]
    fn backward_requires_scalar_tape() {
        let model = MlpModel::zeros(MlpArchitecture::new(vec![2, 2]).unwrap());
        let (_, tape) = model.forward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert!(tape.backward(1.0).is_err());
        let (_, mut tape) = model.forward(&Tensor::vector(vec![1.0, 1.0])).unwrap();
        tape.cross_entropy(0).unwrap();
        assert!(tape.cross_entropy(0).is_err());
        assert!(tape.backward(1.0).is_ok());
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::new(MlpArchitecture::new(vec![6, 5, 3]).unwrap(), &mut rng);
        let (_, mut tape) = model.forward(&Tensor::vector(vec![0.3; 6])).unwrap();
        tape.cross_entropy(1).unwrap();
        let g = tape.backward(0.0).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_model_matches_softmax_gradient_identity() {
        // For logits = W x + b: ∂/∂x = Wᵀ (p − e_y), ∂/∂W = (p − e_y) xᵀ.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let arch = MlpArchitecture::new(vec![4, 3]).unwrap();
        let model = MlpModel::new(arch, &mut rng);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = 2;
        let (logits, mut tape) = model.forward(&Tensor::vector(x.clone())).unwrap();
        tape.cross_entropy(y).unwrap();
        let g = tape.backward(1.0).unwrap();

        let z = logits.data();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
        let r: Vec<f64> = (0..3)
            .map(|k| (z[k] - m).exp() / s - if k == y { 1.0 } else { 0.0 })
            .collect();
        let w = model.weight(0);
        for c in 0..4 {
            let expected: f64 = (0..3).map(|k| w.data()[k * 4 + c] * r[k]).sum();
            assert!((g.input[c] - expected).abs() < 1e-14);
        }
        for k in 0..3 {
            for c in 0..4 {
                assert!((g.params[k * 4 + c] - r[k] * x[c]).abs() < 1e-14);
            }
            assert!((g.params[12 + k] - r[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_are_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let model = MlpModel::new(MlpArchitecture::new(vec![50, 16, 10]).unwrap(), &mut rng);
        let x = Tensor::vector((0..50).map(|_| rng.random_range(0.0..1.0)).collect());
        let run = || {
            let (_, mut tape) = model.forward(&x).unwrap();
            tape.cross_entropy(7).unwrap();
            tape.backward(1.0).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.input.len(), 50);
        assert_eq!(a.params.len(), model.architecture().param_count());
    }
}
