//! Tape-based reverse-mode differentiation.
//!
//! Every operation computes its forward value eagerly and records a
//! [`Function`] on the tape; [`Graph::backward`] replays the tape in reverse.
//! Gradients are accumulated in tape order, so results are reproducible.

use crate::error::{shape_err, Error, Result};
use crate::numerics::conv;
use crate::numerics::{Scalar, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded operation.
pub trait Function<T: Scalar>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: gradients for each input given the output
    /// gradient. Entries whose `needs` flag is false may be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    parents: Vec<Var>,
    func: Option<Box<dyn Function<T>>>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            func: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record an operation whose forward value has already been computed.
    pub fn record(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        func: impl Function<T> + 'static,
    ) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents,
            func: Some(Box::new(func)),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradient of the last objective passed to [`Graph::backward`] with
    /// respect to a leaf created by [`Graph::param`]. Parameters that did not
    /// take part in the objective report zeros.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || node.func.is_some() {
            return None;
        }
        Some(
            self.grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| Tensor::zeros(node.value.shape().to_vec())),
        )
    }

    /// Reverse-mode accumulation from a scalar objective.
    pub fn backward(&mut self, objective: Var) -> Result<()> {
        let out = &self.nodes[objective.0].value;
        if !out.is_scalar() {
            return Err(shape_err(
                "backward",
                format!("objective must be a scalar, got shape {:?}", out.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[objective.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=objective.0).rev() {
            let node = &self.nodes[i];
            let Some(func) = node.func.as_ref() else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let pg = func.backward(&inputs, &node.value, &g, &needs)?;
            for ((p, need), pg) in node.parents.iter().zip(needs).zip(pg) {
                if !need {
                    continue;
                }
                let Some(pg) = pg else { continue };
                if pg.shape() != self.nodes[p.0].value.shape() {
                    return Err(Error::Shape {
                        op: "backward",
                        detail: format!(
                            "{} produced gradient {:?} for input {:?}",
                            func.name(),
                            pg.shape(),
                            self.nodes[p.0].value.shape()
                        ),
                    });
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        // only leaf gradients are kept
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if node.func.is_some() {
                *g = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    // ---- elementary operations -------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.record(value, vec![x], Relu)
    }

    /// Concatenate along the leading axis; trailing extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(shape_err("concat", "no inputs"));
        };
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.shape().is_empty() || t.shape()[1..] != tail[..] {
                return Err(shape_err(
                    "concat",
                    format!("trailing extents {:?} do not match {:?}", t.shape(), tail),
                ));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.record(value, parts.to_vec(), Concat))
    }

    /// Gather entries of the leading axis.
    pub fn select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (n, inner) = t.leading_split();
        if t.is_scalar() || indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(shape_err(
                "select",
                format!("indices {indices:?} invalid for shape {:?}", t.shape()),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * inner..(i + 1) * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let value = Tensor::new(shape, data)?;
        Ok(self.record(
            value,
            vec![x],
            Select {
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.record(Tensor::scalar(s), vec![x], SumAll)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.record(value, vec![a, b], Mul))
    }

    /// `sum_i w_i * x_i` over same-shaped inputs.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var> {
        let Some((first, _)) = terms.first() else {
            return Err(shape_err("weighted_sum", "no terms"));
        };
        let shape = self.value(*first).shape().to_vec();
        let mut acc = Tensor::zeros(shape.clone());
        for &(v, w) in terms {
            let t = self.value(v);
            if t.shape() != shape {
                return Err(shape_err("weighted_sum", format!("{:?} vs {shape:?}", t.shape())));
            }
            for (a, &x) in acc.data_mut().iter_mut().zip(t.data()) {
                *a = *a + w * x;
            }
        }
        let weights = terms.iter().map(|t| t.1).collect();
        Ok(self.record(acc, terms.iter().map(|t| t.0).collect(), WeightedSum { weights }))
    }

    /// Same-size dilated convolution of a `[C,H,W]` input with `[O,C,kh,kw]`
    /// weights and optional `[O]` bias.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, dilation: usize) -> Result<Var> {
        let value = conv::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            dilation,
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.record(value, parents, Conv2d { dilation }))
    }
}

struct Relu;

impl<T: Scalar> Function<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn backward(&self, _: &[&Tensor<T>], output: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let data = output
            .data()
            .iter()
            .zip(g.data())
            .map(|(&y, &gy)| if y > T::zero() { gy } else { T::zero() })
            .collect();
        Ok(vec![Some(Tensor::new(output.shape().to_vec(), data)?)])
    }
}

struct Concat;

impl<T: Scalar> Function<T> for Concat {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let mut offset = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (t, &need) in inputs.iter().zip(needs) {
            let n = t.len();
            out.push(if need {
                Some(Tensor::new(t.shape().to_vec(), g.data()[offset..offset + n].to_vec())?)
            } else {
                None
            });
            offset += n;
        }
        Ok(out)
    }
}

struct Select {
    indices: Vec<usize>,
}

impl<T: Scalar> Function<T> for Select {
    fn name(&self) -> &'static str {
        "select"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (_, inner) = inputs[0].leading_split();
        let mut gx = Tensor::zeros(inputs[0].shape().to_vec());
        for (k, &i) in self.indices.iter().enumerate() {
            let dst = &mut gx.data_mut()[i * inner..(i + 1) * inner];
            for (d, &s) in dst.iter_mut().zip(&g.data()[k * inner..(k + 1) * inner]) {
                *d = *d + s;
            }
        }
        Ok(vec![Some(gx)])
    }
}

struct SumAll;

impl<T: Scalar> Function<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(Tensor::full(inputs[0].shape().to_vec(), g.item()))])
    }
}

struct Mul;

impl<T: Scalar> Function<T> for Mul {
    fn name(&self) -> &'static str {
        "mul"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let prod = |other: &Tensor<T>| {
            let data = other.data().iter().zip(g.data()).map(|(&o, &gy)| o * gy).collect();
            Tensor::new(other.shape().to_vec(), data)
        };
        Ok(vec![
            needs[0].then(|| prod(inputs[1])).transpose()?,
            needs[1].then(|| prod(inputs[0])).transpose()?,
        ])
    }
}

struct WeightedSum<T> {
    weights: Vec<T>,
}

impl<T: Scalar> Function<T> for WeightedSum<T> {
    fn name(&self) -> &'static str {
        "weighted_sum"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(inputs
            .iter()
            .zip(&self.weights)
            .zip(needs)
            .map(|((_, &w), &need)| need.then(|| g.map(|x| x * w)))
            .collect())
    }
}

struct Conv2d {
    dilation: usize,
}

impl<T: Scalar> Function<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let need_bias = needs.get(2).copied().unwrap_or(false);
        let grads = conv::conv2d_backward(inputs[0], inputs[1], self.dilation, g, (needs[0], needs[1], need_bias))?;
        let mut out = vec![grads.input, grads.weight];
        if inputs.len() > 2 {
            out.push(grads.bias);
        }
        Ok(out)
    }
}
