use super::lstm::LstmCtx;
use super::ops::{BatchNormCtx, Conv2dCtx};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) grad: Option<Tensor<S>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<S>,
}

pub(crate) enum Op<S> {
    Leaf,
    Conv2d(Conv2dCtx),
    BatchNorm(Box<BatchNormCtx<S>>),
    LeakyRelu { input: Var, alpha: S },
    Dropout { input: Var, mask: Vec<S> },
    Lstm(Box<LstmCtx<S>>),
    Dense { input: Var, weights: Var, bias: Var },
    Sigmoid { input: Var },
    Upsample { input: Var, scale: (usize, usize) },
    ZeroPad { input: Var, top: usize, left: usize },
    Repeat { input: Var, n: usize },
    Reshape { input: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Scale { input: Var, factor: S },
    Sum { input: Var },
    WeightedMean { input: Var, weights: Vec<S> },
    MaskedMse { recon: Var, target: Vec<S>, mask: Vec<bool>, cells: usize },
    Bce { prob: Var, labels: Vec<S>, eps: S, full: bool },
}

/// Recording of a forward computation.
pub struct Graph<S = f32> {
    pub(crate) nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros when `v` was not reached by the last
    /// backward pass.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec()))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`, populating gradients on every
    /// node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Tensor::full(self.shape(loss).to_vec(), S::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(out_grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.backward_node(i, &out_grad);
            self.nodes[i].grad = Some(out_grad);
            for (var, g) in contributions {
                let node = &mut self.nodes[var.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gy: &Tensor<S>) -> Vec<(Var, Tensor<S>)> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &self.nodes[i].value;
        let shaped = |v: Var, data: Vec<S>| (v, Tensor::from_parts(val(v).shape().to_vec(), data));
        match &self.nodes[i].op {
            Op::Leaf => Vec::new(),
            Op::Conv2d(ctx) => ctx.backward(self, gy),
            Op::BatchNorm(ctx) => ctx.backward(self, gy),
            Op::Lstm(ctx) => ctx.backward(self, gy),
            Op::LeakyRelu { input, alpha } => {
                let x = val(*input).data();
                let d = x
                    .iter()
                    .zip(gy.data())
                    .map(|(&x, &g)| if x >= S::zero() { g } else { *alpha * g })
                    .collect();
                vec![shaped(*input, d)]
            }
            Op::Dropout { input, mask } => {
                let d = mask.iter().zip(gy.data()).map(|(&m, &g)| m * g).collect();
                vec![shaped(*input, d)]
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => super::ops::dense_backward(self, *input, *weights, *bias, gy),
            Op::Sigmoid { input } => {
                let d = out
                    .data()
                    .iter()
                    .zip(gy.data())
                    .map(|(&y, &g)| g * y * (S::one() - y))
                    .collect();
                vec![shaped(*input, d)]
            }
            Op::Upsample { input, scale } => {
                vec![shaped(*input, super::ops::upsample_backward(val(*input).shape(), *scale, gy))]
            }
            Op::ZeroPad { input, top, left } => vec![shaped(
                *input,
                super::ops::zero_pad_backward(val(*input).shape(), out.shape(), *top, *left, gy),
            )],
            Op::Repeat { input, n } => {
                let d_len = *val(*input).shape().last().unwrap();
                let batch = batch_of(val(*input).shape(), 1);
                let mut d = vec![S::zero(); val(*input).len()];
                for b in 0..batch {
                    for r in 0..*n {
                        let src = &gy.data()[(b * n + r) * d_len..(b * n + r + 1) * d_len];
                        for (a, &g) in d[b * d_len..(b + 1) * d_len].iter_mut().zip(src) {
                            *a = *a + g;
                        }
                    }
                }
                vec![shaped(*input, d)]
            }
            Op::Reshape { input } => vec![shaped(*input, gy.data().to_vec())],
            Op::Add(a, b) => {
                let mut v = Vec::with_capacity(2);
                if needs(*a) {
                    v.push(shaped(*a, gy.data().to_vec()));
                }
                if needs(*b) {
                    v.push(shaped(*b, gy.data().to_vec()));
                }
                v
            }
            Op::Mul(a, b) => {
                let mut v = Vec::with_capacity(2);
                if needs(*a) {
                    let d = val(*b).data().iter().zip(gy.data()).map(|(&x, &g)| x * g).collect();
                    v.push(shaped(*a, d));
                }
                if needs(*b) {
                    let d = val(*a).data().iter().zip(gy.data()).map(|(&x, &g)| x * g).collect();
                    v.push(shaped(*b, d));
                }
                v
            }
            Op::Scale { input, factor } => {
                vec![shaped(*input, gy.data().iter().map(|&g| g * *factor).collect())]
            }
            Op::Sum { input } => {
                let g = gy.data()[0];
                vec![shaped(*input, vec![g; val(*input).len()])]
            }
            Op::WeightedMean { input, weights } => {
                let g = gy.data()[0];
                let n = S::from_usize(weights.len()).unwrap();
                vec![shaped(*input, weights.iter().map(|&w| g * w / n).collect())]
            }
            Op::MaskedMse {
                recon,
                target,
                mask,
                cells,
            } => {
                let r = val(*recon).data();
                let per = mask.len();
                let scale = S::lit(2.0) / S::from_usize(*cells).unwrap();
                let d = r
                    .iter()
                    .zip(target)
                    .enumerate()
                    .map(|(j, (&r, &t))| {
                        if mask[j % per] {
                            gy.data()[j / per] * scale * (r - t)
                        } else {
                            S::zero()
                        }
                    })
                    .collect();
                vec![shaped(*recon, d)]
            }
            Op::Bce {
                prob,
                labels,
                eps,
                full,
            } => {
                let p = val(*prob).data();
                let d = p
                    .iter()
                    .zip(labels)
                    .zip(gy.data())
                    .map(|((&p, &y), &g)| {
                        if p < *eps || p > S::one() - *eps {
                            return S::zero();
                        }
                        let mut d = -y / p;
                        if *full {
                            d = d + (S::one() - y) / (S::one() - p);
                        }
                        g * d
                    })
                    .collect();
                vec![shaped(*prob, d)]
            }
        }
    }
}

/// Product of all dimensions except the trailing `keep`.
pub(crate) fn batch_of(shape: &[usize], keep: usize) -> usize {
    shape[..shape.len().saturating_sub(keep)].iter().product()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_product_gradient_is_other_factor() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::from_f64([3], &[0.5, -1.0, 2.0]).unwrap());
        let x = g.input(Tensor::from_f64([3], &[4.0, 5.0, 6.0]).unwrap());
        let p = g.mul(w, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[4.0, 5.0, 6.0]);
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::<f64>::new();
        let w = g.param(Tensor::zeros([2]));
        assert!(matches!(g.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
        let b = g.param(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
        let loss = g.sum(a);
        g.backward(loss).unwrap();
        assert!(g.grad(b).is_none());
        assert_eq!(g.grad_or_zeros(b).data(), &[0.0, 0.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::from_f64([1], &[3.0]).unwrap());
        let sq = g.mul(a, a).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[6.0]);
    }
}
