//! DenseFlowNet: per-view appearance flow from a single luminance image.
//!
//! Topology: one pre-convolution, four dense blocks of three dilated 3x3
//! convolutions each, and a linear head emitting `U * V * 2` flow channels.
//! Every dense layer sees the concatenation of the pre-convolution output and
//! all earlier dense outputs; no pooling or normalization anywhere, so the
//! spatial size never changes.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{shape_err, Error, Result};
use crate::lightfield::{Angular, Image, ViewIndex};
use crate::numerics::{apply_conv, Activation, ConvLayer, Graph, Scalar, Tensor, Var};

pub const BLOCKS: usize = 4;
pub const LAYERS_PER_BLOCK: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub angular: Angular,
    pub kernel: usize,
    pub pre_channels: usize,
    pub growth: usize,
    pub pre_dilation: usize,
    pub block_dilations: [[usize; LAYERS_PER_BLOCK]; BLOCKS],
    pub head_dilation: usize,
}

impl NetworkSpec {
    pub fn new(angular: Angular) -> Self {
        Self {
            angular,
            kernel: 3,
            pre_channels: 16,
            growth: 16,
            pre_dilation: 1,
            block_dilations: [[1, 2, 4], [2, 4, 8], [4, 8, 16], [8, 16, 32]],
            head_dilation: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel {} must be odd", self.kernel)));
        }
        if self.pre_channels == 0 || self.growth == 0 || self.angular.count() == 0 {
            return Err(Error::InvalidArgument("network widths must be positive".into()));
        }
        let dilations = self.block_dilations.iter().flatten().chain([&self.pre_dilation, &self.head_dilation]);
        if dilations.into_iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("dilations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn head_channels(&self) -> usize {
        self.angular.count() * 2
    }

    /// Channels entering the head: pre-conv output plus every dense layer.
    pub fn head_in_channels(&self) -> usize {
        self.pre_channels + BLOCKS * LAYERS_PER_BLOCK * self.growth
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut out = vec![LayerSpec {
            name: "pre".into(),
            in_ch: 1,
            out_ch: self.pre_channels,
            dilation: self.pre_dilation,
            activation: Activation::Relu,
        }];
        let mut ch = self.pre_channels;
        for (b, block) in self.block_dilations.iter().enumerate() {
            for (l, &d) in block.iter().enumerate() {
                out.push(LayerSpec {
                    name: format!("block{b}.layer{l}"),
                    in_ch: ch,
                    out_ch: self.growth,
                    dilation: d,
                    activation: Activation::Relu,
                });
                ch += self.growth;
            }
        }
        out.push(LayerSpec {
            name: "head".into(),
            in_ch: ch,
            out_ch: self.head_channels(),
            dilation: self.head_dilation,
            activation: Activation::None,
        });
        out
    }

    /// Side length of the input window that influences one output pixel.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layer_specs()
            .iter()
            .map(|l| (self.kernel - 1) * l.dilation)
            .sum::<usize>()
    }

    pub fn digest(&self) -> [u8; 32] {
        let bytes = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&bytes).into()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub dilation: usize,
    pub activation: Activation,
}

/// Convolution parameters in layer order: pre-conv, the 12 dense layers, head.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T: Scalar = f32> {
    spec: NetworkSpec,
    layers: Vec<ConvLayer<T>>,
}

impl<T: Scalar> NetworkParams<T> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[ConvLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer<T>] {
        &mut self.layers
    }

    /// Flattened `[w0, b0, w1, b1, ...]`.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), l.bias.clone()])
            .collect()
    }

    /// Inverse of [`NetworkParams::tensors`]; shapes are checked.
    pub fn from_tensors(spec: NetworkSpec, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let specs = spec.layer_specs();
        if tensors.len() != specs.len() * 2 {
            return Err(shape_err(
                "network params",
                format!("{} tensors for {} layers", tensors.len(), specs.len()),
            ));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::with_capacity(specs.len());
        for ls in &specs {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            let want = [ls.out_ch, ls.in_ch, spec.kernel, spec.kernel];
            if w.shape() != want || b.shape() != [ls.out_ch] {
                return Err(shape_err(
                    "network params",
                    format!("layer {}: weight {:?}, bias {:?}, expected {want:?}", ls.name, w.shape(), b.shape()),
                ));
            }
            layers.push(ConvLayer::new(w, b, ls.dilation, ls.activation)?);
        }
        Ok(Self { spec, layers })
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.all_finite() && l.bias.all_finite())
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    dilation: l.dilation,
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// He-normal hidden layers from a seeded generator; zero head so the initial
/// flow is exactly zero.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkParams<f32>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.kernel;
    let layers = spec
        .layer_specs()
        .into_iter()
        .map(|ls| {
            let shape = [ls.out_ch, ls.in_ch, k, k];
            let weight = if ls.activation == Activation::None {
                Tensor::zeros(shape)
            } else {
                let std = (2.0 / (ls.in_ch * k * k) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid std");
                Tensor::from_fn(shape, |_| normal.sample(&mut rng) as f32)
            };
            ConvLayer::new(weight, Tensor::zeros([ls.out_ch]), ls.dilation, ls.activation)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkParams {
        spec: spec.clone(),
        layers,
    })
}

/// Per-view `(dx, dy)` offsets in pixels, stored `[V][U][2][H][W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    angular: Angular,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FlowField {
    pub fn new(angular: Angular, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != angular.count() * 2 * height * width || height == 0 || width == 0 {
            return Err(shape_err(
                "flow field",
                format!("{} values for {}x{} views of {height}x{width}", data.len(), angular.u, angular.v),
            ));
        }
        Ok(Self {
            angular,
            height,
            width,
            data,
        })
    }

    pub fn zeros(angular: Angular, height: usize, width: usize) -> Self {
        Self {
            angular,
            height,
            width,
            data: vec![0.0; angular.count() * 2 * height * width],
        }
    }

    /// From a `[U*V*2, H, W]` network output.
    pub fn from_channels(angular: Angular, t: &Tensor<f32>) -> Result<Self> {
        match t.shape() {
            &[c, h, w] if c == angular.count() * 2 => Self::new(angular, h, w, t.data().to_vec()),
            s => Err(shape_err(
                "flow field",
                format!("expected [{}, H, W], got {s:?}", angular.count() * 2),
            )),
        }
    }

    pub fn angular(&self) -> Angular {
        self.angular
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn view_data(&self, view: ViewIndex) -> &[f32] {
        let n = 2 * self.height * self.width;
        let i = self.angular.linear(view);
        &self.data[i * n..(i + 1) * n]
    }

    /// `[2, H, W]` flow of one view.
    pub fn view_flow(&self, view: ViewIndex) -> Tensor<f32> {
        Tensor::new([2, self.height, self.width], self.view_data(view).to_vec()).expect("flow dims")
    }

    /// All views as `[N, 2, H, W]`.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([self.angular.count(), 2, self.height, self.width], self.data.clone()).expect("flow dims")
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Parameters placed on a graph as trainable leaves, in layer order.
pub struct ParamVars {
    pub vars: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn register<T: Scalar>(graph: &mut Graph<T>, params: &NetworkParams<T>) -> Self {
        let vars = params
            .layers
            .iter()
            .map(|l| (graph.param(l.weight.clone()), graph.param(l.bias.clone())))
            .collect();
        Self { vars }
    }

    /// Gradients in [`NetworkParams::tensors`] order.
    pub fn grads<T: Scalar>(&self, graph: &Graph<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .flat_map(|&(w, b)| [graph.grad(w).expect("param leaf"), graph.grad(b).expect("param leaf")])
            .collect()
    }
}

/// Record the network on `graph`; returns the `[U*V*2, H, W]` flow variable.
pub fn forward_var<T: Scalar>(
    graph: &mut Graph<T>,
    params: &NetworkParams<T>,
    vars: &ParamVars,
    input: Var,
) -> Result<Var> {
    let shape = graph.value(input).shape().to_vec();
    if shape.len() != 3 || shape[0] != 1 {
        return Err(shape_err("flownet", format!("expected a [1, H, W] input, got {shape:?}")));
    }
    let layers = &params.layers;
    let last = layers.len() - 1;
    let apply = |graph: &mut Graph<T>, i: usize, x: Var| {
        let (w, b) = vars.vars[i];
        apply_conv(graph, x, w, b, layers[i].dilation, layers[i].activation)
    };
    let mut feats = vec![apply(graph, 0, input)?];
    for i in 1..last {
        let x = if feats.len() == 1 { feats[0] } else { graph.concat(&feats)? };
        feats.push(apply(graph, i, x)?);
    }
    let x = graph.concat(&feats)?;
    apply(graph, last, x)
}

/// Inference-only forward pass on a `[1, H, W]` tensor.
pub fn forward_tensor<T: Scalar>(params: &NetworkParams<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let vars = ParamVars {
        vars: params
            .layers
            .iter()
            .map(|l| (g.constant(l.weight.clone()), g.constant(l.bias.clone())))
            .collect(),
    };
    let x = g.constant(input.clone());
    let out = forward_var(&mut g, params, &vars, x)?;
    Ok(g.value(out).clone())
}

/// Flow for every view from a single-channel image.
pub fn forward(params: &NetworkParams<f32>, y_image: &Image) -> Result<FlowField> {
    if y_image.channels() != 1 {
        return Err(shape_err(
            "flownet",
            format!("input must be single-channel luminance, got {} channels", y_image.channels()),
        ));
    }
    let out = forward_tensor(params, &y_image.to_tensor())?;
    FlowField::from_channels(params.spec.angular, &out)
}

// ---- checkpoints ----------------------------------------------------------

const MAGIC: &[u8; 4] = b"LFAF";
pub const CHECKPOINT_VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    Ok(u32::from_le_bytes(b))
}

/// Serialize: magic, version, spec digest, tensor count, then per tensor its
/// name, shape and little-endian `f32` payload.
pub fn write_checkpoint(params: &NetworkParams<f32>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, CHECKPOINT_VERSION)?;
    w.write_all(&params.spec.digest())?;
    let specs = params.spec.layer_specs();
    write_u32(w, (specs.len() * 2) as u32)?;
    for (ls, layer) in specs.iter().zip(&params.layers) {
        for (suffix, t) in [("weight", &layer.weight), ("bias", &layer.bias)] {
            let name = format!("{}.{suffix}", ls.name);
            write_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            write_u32(w, t.shape().len() as u32)?;
            for &d in t.shape() {
                write_u32(w, d as u32)?;
            }
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Parse a checkpoint and check it against `spec`.
pub fn read_checkpoint(spec: &NetworkSpec, r: &mut impl Read) -> Result<NetworkParams<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("missing magic: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest)
        .map_err(|e| Error::Checkpoint(format!("missing spec digest: {e}")))?;
    if digest != spec.digest() {
        return Err(Error::Checkpoint(
            "spec digest does not match the requested network layout".into(),
        ));
    }
    let specs = spec.layer_specs();
    let count = read_u32(r)? as usize;
    if count != specs.len() * 2 {
        return Err(Error::Checkpoint(format!("{count} tensors, expected {}", specs.len() * 2)));
    }
    let mut tensors = Vec::with_capacity(count);
    for i in 0..count {
        let ls = &specs[i / 2];
        let expected_name = format!("{}.{}", ls.name, if i % 2 == 0 { "weight" } else { "bias" });
        let len = read_u32(r)? as usize;
        if len > 256 {
            return Err(Error::Checkpoint(format!("tensor {i}: name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("tensor {i}: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint(format!("tensor {i}: name not utf-8")))?;
        if name != expected_name {
            return Err(Error::Checkpoint(format!("tensor {i} is {name:?}, expected {expected_name:?}")));
        }
        let ndim = read_u32(r)? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("{name}: rank {ndim}")));
        }
        let shape = (0..ndim).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let want: Vec<usize> = if i % 2 == 0 {
            vec![ls.out_ch, ls.in_ch, spec.kernel, spec.kernel]
        } else {
            vec![ls.out_ch]
        };
        if shape != want {
            return Err(Error::Checkpoint(format!("{name}: shape {shape:?}, expected {want:?}")));
        }
        let numel: usize = shape.iter().product();
        let mut buf = vec![0u8; numel * 4];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("{name}: truncated payload: {e}")))?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    NetworkParams::from_tensors(spec.clone(), tensors)
}

pub fn save_checkpoint(params: &NetworkParams<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(spec: &NetworkSpec, path: &Path) -> Result<NetworkParams<f32>> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(spec, &mut bytes.as_slice())
}
