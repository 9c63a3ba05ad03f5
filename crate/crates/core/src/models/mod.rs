//! Parameterised function families: linear classifier, the one-coordinate
//! sigmoid classifier of the two-lines example, and MLPs used as critics
//! and generators.
//!
//! Every model exposes two routes: a graph route ([`DiffModel`]) used for
//! training and margins, and a plain numeric route ([`Critic`]) with a
//! hand-written input gradient, used by the oracles.

mod hexfloat;

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, GradMap, Graph, NodeId, Shape, Tensor};
use crate::error::{Error, Result};

pub use hexfloat::{format as format_hex_f64, parse as parse_hex_f64};

/// A model whose forward pass can be recorded on a [`Graph`].
pub trait DiffModel {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Shapes of the parameter tensors, in flat-parameter order.
    fn param_shapes(&self) -> Vec<Shape>;
    fn flat_params(&self) -> Vec<f64>;
    fn set_flat_params(&mut self, params: &[f64]) -> Result<()>;
    /// Records the forward pass. `x` must be a vector node of length
    /// `input_dim`; the result is a scalar node when `output_dim == 1`.
    fn apply(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId>;

    fn num_params(&self) -> usize {
        self.param_shapes().iter().map(|s| s.len()).sum()
    }
}

/// Plain numeric evaluation of a scalar-valued model.
pub trait Critic {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn input_grad(&self, x: &[f64]) -> Vec<f64>;
}

/// A model whose parameters are registered as variables on a graph.
#[derive(Debug)]
pub struct Bound<'a, M: ?Sized> {
    pub model: &'a M,
    pub params: Vec<NodeId>,
}

impl<'a, M: DiffModel + ?Sized> Bound<'a, M> {
    pub fn register(g: &mut Graph, model: &'a M) -> Result<Self> {
        let flat = model.flat_params();
        let mut offset = 0;
        let mut params = Vec::new();
        for shape in model.param_shapes() {
            let n = shape.len();
            let t = Tensor::new(shape, flat[offset..offset + n].to_vec());
            params.push(g.variable(t)?);
            offset += n;
        }
        Ok(Bound { model, params })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let expected = self.model.input_dim();
        match g.shape(x) {
            Shape::Vector(n) if n == expected => self.model.apply(g, &self.params, x),
            s => Err(Error::DimensionMismatch {
                expected,
                got: s.len(),
            }),
        }
    }

    /// Forward pass on a constant input point.
    pub fn forward_point(&self, g: &mut Graph, x: &[f64]) -> Result<NodeId> {
        let xv = g.vector(x.to_vec())?;
        self.forward(g, xv)
    }

    pub fn flat_grad(&self, g: &Graph, grads: &GradMap) -> Result<Vec<f64>> {
        grads.flatten(g, &self.params)
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

// ── linear ──────────────────────────────────────────────────────────────

/// `f(x) = wᵀx − b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn new(w: Vec<f64>, b: f64) -> Self {
        LinearModel { w, b }
    }

    pub fn init(dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("model.dims", "zero-width layer"));
        }
        let scale = 1.0 / (dim as f64).sqrt();
        let w = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
        Ok(LinearModel { w, b: 0.0 })
    }
}

impl DiffModel for LinearModel {
    fn input_dim(&self) -> usize {
        self.w.len()
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_shapes(&self) -> Vec<Shape> {
        vec![Shape::Vector(self.w.len()), Shape::Scalar]
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.w.clone();
        p.push(self.b);
        p
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.w.len() + 1, params.len())?;
        let (w, b) = params.split_at(self.w.len());
        self.w.copy_from_slice(w);
        self.b = b[0];
        Ok(())
    }

    fn apply(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let d = g.dot(params[0], x)?;
        g.sub(d, params[1])
    }
}

impl Critic for LinearModel {
    fn dim(&self) -> usize {
        self.w.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() - self.b
    }

    fn input_grad(&self, _x: &[f64]) -> Vec<f64> {
        self.w.clone()
    }
}

// ── sigmoid-linear ──────────────────────────────────────────────────────

/// `f(x) = sigmoid(w1·x₍₁₎ + w0)`; ignores every other coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmoidLinear {
    pub w1: f64,
    pub w0: f64,
    pub dim: usize,
}

impl SigmoidLinear {
    /// Two-dimensional input, as in the two-lines example.
    pub fn new(w1: f64, w0: f64) -> Self {
        SigmoidLinear { w1, w0, dim: 2 }
    }

    /// Largest `|∂f/∂x₍₁₎|` over all inputs, attained where `σ = ½`.
    pub fn max_gradient(&self) -> f64 {
        self.w1.abs() / 4.0
    }
}

impl DiffModel for SigmoidLinear {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_shapes(&self) -> Vec<Shape> {
        vec![Shape::Scalar, Shape::Scalar]
    }

    fn flat_params(&self) -> Vec<f64> {
        vec![self.w1, self.w0]
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(2, params.len())?;
        self.w1 = params[0];
        self.w0 = params[1];
        Ok(())
    }

    fn apply(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let x1 = g.index(x, 0)?;
        let z = g.mul(params[0], x1)?;
        let z = g.add(z, params[1])?;
        g.sigmoid(z)
    }
}

impl Critic for SigmoidLinear {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        sigmoid(self.w1 * x[0] + self.w0)
    }

    fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let s = self.value(x);
        let mut grad = vec![0.0; self.dim];
        grad[0] = self.w1 * s * (1.0 - s);
        grad
    }
}

// ── MLP ─────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu(f64),
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, g: &mut Graph, z: NodeId) -> Result<NodeId> {
        match self {
            Activation::LeakyRelu(s) => g.leaky_relu(z, s),
            Activation::Tanh => g.tanh(z),
            Activation::Identity => Ok(z),
        }
    }

    fn eval(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    z
                } else {
                    s * z
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> String {
        match self {
            Activation::LeakyRelu(s) => format!("leaky_relu:{s}"),
            Activation::Tanh => "tanh".into(),
            Activation::Identity => "identity".into(),
        }
    }

    fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            t => {
                let slope = t.strip_prefix("leaky_relu:")?.parse().ok()?;
                Some(Activation::LeakyRelu(slope))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    /// Multiplies the final activation (the generator uses `2·tanh`).
    pub output_scale: f64,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`. Weights are uniform in
    /// `±1/√fan_in`; biases start at zero.
    pub fn init(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        output_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config("model.dims", "need input and output widths"));
        }
        if dims.contains(&0) {
            return Err(Error::config("model.dims", "zero-width layer"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = 1.0 / (inputs as f64).sqrt();
                Layer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs)
                        .map(|_| rng.random_range(-bound..bound))
                        .collect(),
                    bias: vec![0.0; outputs],
                    activation: if i == last { output } else { hidden },
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            output_scale,
        })
    }

    /// The critic used for two-dimensional experiments.
    pub fn default_critic(input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::init(
            &[input_dim, 32, 32, 1],
            Activation::LeakyRelu(0.2),
            Activation::Identity,
            1.0,
            rng,
        )
    }

    /// Latent → data-space generator with a `2·tanh` output.
    pub fn default_generator(latent_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::init(
            &[latent_dim, 32, 32, output_dim],
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            2.0,
            rng,
        )
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].inputs];
        d.extend(self.layers.iter().map(|l| l.outputs));
        d
    }

    /// Numeric forward pass.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer_pre_activation(layer, &h)
                .into_iter()
                .map(|z| layer.activation.eval(z))
                .collect();
        }
        if self.output_scale != 1.0 {
            h.iter_mut().for_each(|v| *v *= self.output_scale);
        }
        h
    }
}

fn layer_pre_activation(layer: &Layer, h: &[f64]) -> Vec<f64> {
    layer
        .weights
        .chunks_exact(layer.inputs)
        .zip(&layer.bias)
        .map(|(row, b)| row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect()
}

impl DiffModel for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs
    }

    fn param_shapes(&self) -> Vec<Shape> {
        self.layers
            .iter()
            .flat_map(|l| [Shape::Matrix(l.outputs, l.inputs), Shape::Vector(l.outputs)])
            .collect()
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dim(self.num_params(), params.len())?;
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            let (b, r) = r.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn apply(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        let mut h = x;
        for (layer, p) in self.layers.iter().zip(params.chunks_exact(2)) {
            let z = g.matvec(p[0], h)?;
            let z = g.add(z, p[1])?;
            h = layer.activation.apply(g, z)?;
        }
        if self.output_scale != 1.0 {
            h = g.scale(h, self.output_scale)?;
        }
        if self.output_dim() == 1 {
            h = g.index(h, 0)?;
        }
        Ok(h)
    }
}

impl Critic for Mlp {
    fn dim(&self) -> usize {
        self.input_dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x)[0]
    }

    /// Hand-written backpropagation to the input, independent of the graph.
    fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer_pre_activation(layer, &h);
            h = z.iter().map(|&v| layer.activation.eval(v)).collect();
            pre.push(z);
        }
        let mut delta = vec![self.output_scale];
        for (layer, z) in self.layers.iter().zip(&pre).rev() {
            for (d, &zi) in delta.iter_mut().zip(z) {
                *d *= layer.activation.derivative(zi);
            }
            let mut back = vec![0.0; layer.inputs];
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                for (b, w) in back.iter_mut().zip(row) {
                    *b += w * d;
                }
            }
            delta = back;
        }
        delta
    }
}

// ── any critic ──────────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub enum CriticModel {
    Linear(LinearModel),
    SigmoidLinear(SigmoidLinear),
    Mlp(Mlp),
}

macro_rules! dispatch {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            CriticModel::Linear($m) => $e,
            CriticModel::SigmoidLinear($m) => $e,
            CriticModel::Mlp($m) => $e,
        }
    };
}

impl DiffModel for CriticModel {
    fn input_dim(&self) -> usize {
        dispatch!(self, m => m.input_dim())
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_shapes(&self) -> Vec<Shape> {
        dispatch!(self, m => m.param_shapes())
    }

    fn flat_params(&self) -> Vec<f64> {
        dispatch!(self, m => m.flat_params())
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        dispatch!(self, m => m.set_flat_params(params))
    }

    fn apply(&self, g: &mut Graph, params: &[NodeId], x: NodeId) -> Result<NodeId> {
        dispatch!(self, m => m.apply(g, params, x))
    }
}

impl Critic for CriticModel {
    fn dim(&self) -> usize {
        dispatch!(self, m => m.dim())
    }

    fn value(&self, x: &[f64]) -> f64 {
        dispatch!(self, m => m.value(x))
    }

    fn input_grad(&self, x: &[f64]) -> Vec<f64> {
        dispatch!(self, m => m.input_grad(x))
    }
}

// ── persistence ─────────────────────────────────────────────────────────

const MAGIC: &str = "marginlab-model";

fn join(v: &[usize]) -> String {
    v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
}

/// Header line, then one hex-float parameter per line in flat order.
pub fn save_critic(model: &CriticModel) -> String {
    let header = match model {
        CriticModel::Linear(m) => format!("{MAGIC} linear dims={}", m.w.len()),
        CriticModel::SigmoidLinear(m) => format!("{MAGIC} sigmoid_linear dims={}", m.dim),
        CriticModel::Mlp(m) => return save_mlp(m),
    };
    with_params(header, &model.flat_params())
}

pub fn save_mlp(model: &Mlp) -> String {
    let acts: Vec<String> = model.layers.iter().map(|l| l.activation.tag()).collect();
    let header = format!(
        "{MAGIC} mlp dims={} act={} scale={}",
        join(&model.dims()),
        acts.join(","),
        format_hex_f64(model.output_scale)
    );
    with_params(header, &model.flat_params())
}

fn with_params(header: String, params: &[f64]) -> String {
    let mut out = header;
    out.push('\n');
    for p in params {
        let _ = writeln!(out, "{}", format_hex_f64(*p));
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ModelFormat(msg.into())
}

struct Header<'a> {
    kind: &'a str,
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> Header<'a> {
    fn field(&self, key: &str) -> Result<&'a str> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| bad(format!("header lacks `{key}`")))
    }
}

fn split(text: &str) -> Result<(Header<'_>, Vec<f64>)> {
    let mut lines = text.lines();
    let head = lines.next().ok_or_else(|| bad("empty file"))?;
    let mut words = head.split_whitespace();
    if words.next() != Some(MAGIC) {
        return Err(bad("missing magic word"));
    }
    let kind = words.next().ok_or_else(|| bad("missing model kind"))?;
    let fields = words
        .map(|w| w.split_once('=').ok_or_else(|| bad(format!("bad header field `{w}`"))))
        .collect::<Result<_>>()?;
    let params = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_hex_f64(l).ok_or_else(|| bad(format!("bad parameter `{l}`"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((Header { kind, fields }, params))
}

fn parse_dims(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|d| d.parse().map_err(|_| bad(format!("bad width `{d}`"))))
        .collect()
}

fn mlp_from(header: &Header<'_>, params: &[f64]) -> Result<Mlp> {
    let dims = parse_dims(header.field("dims")?)?;
    let acts = header
        .field("act")?
        .split(',')
        .map(|t| Activation::from_tag(t).ok_or_else(|| bad(format!("bad activation `{t}`"))))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 || acts.len() != dims.len() - 1 || dims.contains(&0) {
        return Err(bad("inconsistent dims/act"));
    }
    let scale = parse_hex_f64(header.field("scale")?).ok_or_else(|| bad("bad scale"))?;
    let layers = dims
        .windows(2)
        .zip(acts)
        .map(|(w, activation)| Layer {
            inputs: w[0],
            outputs: w[1],
            weights: vec![0.0; w[0] * w[1]],
            bias: vec![0.0; w[1]],
            activation,
        })
        .collect();
    let mut mlp = Mlp {
        layers,
        output_scale: scale,
    };
    mlp.set_flat_params(params)
        .map_err(|_| bad("parameter count does not match header"))?;
    Ok(mlp)
}

pub fn load_critic(text: &str) -> Result<CriticModel> {
    let (header, params) = split(text)?;
    let single_dim = || -> Result<usize> {
        header
            .field("dims")?
            .parse()
            .map_err(|_| bad("bad dims"))
    };
    let mut model = match header.kind {
        "linear" => CriticModel::Linear(LinearModel::new(vec![0.0; single_dim()?], 0.0)),
        "sigmoid_linear" => CriticModel::SigmoidLinear(SigmoidLinear {
            w1: 0.0,
            w0: 0.0,
            dim: single_dim()?,
        }),
        "mlp" => return Ok(CriticModel::Mlp(mlp_from(&header, &params)?)),
        k => return Err(bad(format!("unknown model kind `{k}`"))),
    };
    model
        .set_flat_params(&params)
        .map_err(|_| bad("parameter count does not match header"))?;
    Ok(model)
}

pub fn load_mlp(text: &str) -> Result<Mlp> {
    let (header, params) = split(text)?;
    if header.kind != "mlp" {
        return Err(bad(format!("expected an mlp, found `{}`", header.kind)));
    }
    mlp_from(&header, &params)
}
