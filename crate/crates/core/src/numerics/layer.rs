use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numerics::{conv, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

/// Convolution weights `[out, in, kh, kw]`, bias `[out]`, dilation and activation.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T: Scalar = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub dilation: usize,
    pub activation: Activation,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, dilation: usize, activation: Activation) -> Result<Self> {
        let &[out, _, kh, kw] = weight.shape() else {
            return Err(shape_err("conv layer", format!("weight shape {:?}", weight.shape())));
        };
        if bias.shape() != [out] {
            return Err(shape_err("conv layer", format!("bias shape {:?}", bias.shape())));
        }
        if kh % 2 == 0 || kw % 2 == 0 || dilation == 0 {
            return Err(shape_err(
                "conv layer",
                format!("kernel {kh}x{kw} with dilation {dilation}"),
            ));
        }
        Ok(Self {
            weight,
            bias,
            dilation,
            activation,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Forward pass outside any graph.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = conv::conv2d_forward(input, &self.weight, Some(&self.bias), self.dilation)?;
        Ok(match self.activation {
            Activation::Relu => out.map(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::None => out,
        })
    }
}

/// Record a convolution plus activation whose parameters live on the graph.
pub fn apply_conv<T: Scalar>(
    graph: &mut Graph<T>,
    input: Var,
    weight: Var,
    bias: Var,
    dilation: usize,
    activation: Activation,
) -> Result<Var> {
    let y = graph.conv2d(input, weight, Some(bias), dilation)?;
    Ok(match activation {
        Activation::Relu => graph.relu(y),
        Activation::None => y,
    })
}

/// Same-size convolution of a `[C,H,W]` tensor, outside any graph.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    layer.forward(input)
}
