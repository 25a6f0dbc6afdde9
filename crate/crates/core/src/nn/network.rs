use std::fmt;

use super::layers::{BatchNorm, Conv2d, Dense, Dropout, Flatten, Relu};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, SimRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Conv2d { filters: usize, kh: usize, kw: usize },
    Norm,
    Relu,
    FullyConnected { units: usize },
    Dropout { p: f64 },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Norm => "norm",
            LayerSpec::Relu => "relu",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Flatten => "flatten",
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d { filters, kh, kw } => write!(f, "conv2d({filters}, {kh}x{kw})"),
            LayerSpec::FullyConnected { units } => write!(f, "fully_connected({units})"),
            LayerSpec::Dropout { p } => write!(f, "dropout({p})"),
            other => f.write_str(other.kind()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Input shape plus an ordered layer list; validated by shape inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    /// `[channels, height, width]`
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

/// Sizes of the convolutional regression network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnShape {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub conv_layers: usize,
    pub fc_units: usize,
    pub fc_layers: usize,
    pub dropout: f64,
}

impl Default for CnnShape {
    /// Two 256-filter 2×2 convolutions, two 2048-unit dense layers, 50% dropout.
    fn default() -> Self {
        CnnShape {
            filters: 256,
            kernel: (2, 2),
            conv_layers: 2,
            fc_units: 2048,
            fc_layers: 2,
            dropout: 0.5,
        }
    }
}

impl Architecture {
    /// conv → norm → relu (repeated), flatten, then dense → relu → dropout
    /// (repeated), and a linear regression head of width `K(N_T + N_R)`.
    pub fn cnn_mimo(n_r: usize, n_t: usize, users: usize, shape: &CnnShape) -> Self {
        let mut layers = Vec::new();
        for _ in 0..shape.conv_layers {
            layers.push(LayerSpec::Conv2d {
                filters: shape.filters,
                kh: shape.kernel.0,
                kw: shape.kernel.1,
            });
            layers.push(LayerSpec::Norm);
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::Flatten);
        for _ in 0..shape.fc_layers {
            layers.push(LayerSpec::FullyConnected { units: shape.fc_units });
            layers.push(LayerSpec::Relu);
            if shape.dropout > 0.0 {
                layers.push(LayerSpec::Dropout { p: shape.dropout });
            }
        }
        layers.push(LayerSpec::FullyConnected {
            units: users * (n_t + n_r),
        });
        Architecture {
            input: [3, n_r, n_t],
            layers,
        }
    }

    /// Fully connected baseline on the flattened input.
    pub fn mlp(n_r: usize, n_t: usize, users: usize, hidden: &[usize], dropout: f64) -> Self {
        let mut layers = vec![LayerSpec::Flatten];
        for &units in hidden {
            layers.push(LayerSpec::FullyConnected { units });
            layers.push(LayerSpec::Relu);
            if dropout > 0.0 {
                layers.push(LayerSpec::Dropout { p: dropout });
            }
        }
        layers.push(LayerSpec::FullyConnected {
            units: users * (n_t + n_r),
        });
        Architecture {
            input: [3, n_r, n_t],
            layers,
        }
    }

    /// Per-sample output shape after every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.contains(&0) {
            return Err(Error::invalid(format!(
                "input shape {:?} has a zero dimension",
                self.input
            )));
        }
        let mut cur = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            let err = |detail: String| Error::Shape {
                layer: i,
                kind: spec.kind(),
                detail,
            };
            cur = match (*spec, cur.as_slice()) {
                (LayerSpec::Conv2d { filters, kh, kw }, &[_, h, w]) => {
                    if filters == 0 || kh == 0 || kw == 0 || kh > h || kw > w {
                        return Err(err(format!("{filters} filters of {kh}x{kw} on a {h}x{w} map")));
                    }
                    vec![filters, h - kh + 1, w - kw + 1]
                }
                (LayerSpec::Norm, s) if s.len() == 3 || s.len() == 1 => s.to_vec(),
                (LayerSpec::Relu, s) => s.to_vec(),
                (LayerSpec::Dropout { p }, s) => {
                    if !(0.0..1.0).contains(&p) {
                        return Err(err(format!("drop probability {p} outside [0, 1)")));
                    }
                    s.to_vec()
                }
                (LayerSpec::Flatten, s) => vec![s.iter().product()],
                (LayerSpec::FullyConnected { units }, &[_]) if units > 0 => vec![units],
                (_, s) => return Err(err(format!("cannot follow a layer with output shape {s:?}"))),
            };
            out.push(cur.clone());
        }
        match out.last() {
            Some(s) if s.len() == 1 => Ok(out),
            _ => Err(Error::invalid("the network must end in a flat (vector) output")),
        }
    }

    pub fn output_width(&self) -> Result<usize> {
        Ok(self.shapes()?.last().map_or(0, |s| s.iter().product()))
    }

    /// Conventional count of weights and biases (norm scale/shift included,
    /// running statistics excluded).
    pub fn parameter_count(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        let mut prev: Vec<usize> = self.input.to_vec();
        let mut total = 0;
        for (spec, shape) in self.layers.iter().zip(&shapes) {
            total += match *spec {
                LayerSpec::Conv2d { filters, kh, kw } => filters * prev[0] * kh * kw + filters,
                LayerSpec::Norm => 2 * prev[0],
                LayerSpec::FullyConnected { units } => units * prev[0] + units,
                _ => 0,
            };
            prev = shape.clone();
        }
        Ok(total)
    }
}

/// Parameter count from the closed-form expression
/// `C²(2·N_cv·(wh+1) + ((N_fc1+1) + (N_fc2+1))·50/100)`, in exact integer
/// arithmetic (the final division truncates).
pub fn paper_parameter_count(c: u64, w: u64, h: u64, n_cv: u64, n_fc1: u64, n_fc2: u64) -> u64 {
    let conv = 2 * n_cv * (w * h + 1) * 100;
    let fc = ((n_fc1 + 1) + (n_fc2 + 1)) * 50;
    c * c * (conv + fc) / 100
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Conv(Conv2d),
    Norm(BatchNorm),
    Relu(Relu),
    Dense(Dense),
    Dropout(Dropout),
    Flatten(Flatten),
}

impl Layer {
    pub(crate) fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::Dense(l) => vec![&l.weight, &l.bias],
            Layer::Norm(l) => vec![&l.gamma, &l.beta],
            _ => vec![],
        }
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Dense(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Norm(l) => vec![&mut l.gamma, &mut l.beta],
            _ => vec![],
        }
    }

    fn grads_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv(l) => vec![&mut l.grad_weight, &mut l.grad_bias],
            Layer::Dense(l) => vec![&mut l.grad_weight, &mut l.grad_bias],
            Layer::Norm(l) => vec![&mut l.grad_gamma, &mut l.grad_beta],
            _ => vec![],
        }
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Norm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => vec![],
        }
    }

    pub(crate) fn buffers(&self) -> Vec<&[f64]> {
        match self {
            Layer::Norm(l) => vec![&l.running_mean, &l.running_var],
            _ => vec![],
        }
    }
}

/// Gradients in parameter order (layer by layer, weight before bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: Architecture,
    layers: Vec<Layer>,
}

impl Network {
    /// Instantiates the architecture with fan-in scaled uniform weights.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let shapes = arch.shapes()?;
        let mut rng = seeded(seed);
        let mut prev = arch.input.to_vec();
        let mut layers = Vec::with_capacity(arch.layers.len());
        for (spec, shape) in arch.layers.iter().zip(&shapes) {
            layers.push(match *spec {
                LayerSpec::Conv2d { filters, kh, kw } => Layer::Conv(Conv2d::new(prev[0], filters, kh, kw, &mut rng)),
                LayerSpec::Norm => Layer::Norm(BatchNorm::new(prev[0])),
                LayerSpec::Relu => Layer::Relu(Relu::default()),
                LayerSpec::FullyConnected { units } => Layer::Dense(Dense::new(prev[0], units, &mut rng)),
                LayerSpec::Dropout { p } => Layer::Dropout(Dropout::new(p)),
                LayerSpec::Flatten => Layer::Flatten(Flatten::default()),
            });
            prev = shape.clone();
        }
        Ok(Network { arch, layers })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.arch.input
    }

    pub fn input_len(&self) -> usize {
        self.arch.input.iter().product()
    }

    pub fn output_width(&self) -> usize {
        self.arch.output_width().expect("validated at construction")
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().flat_map(|l| l.params()).map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Normalized (pre scale/shift) activations of every norm layer from the
    /// most recent train-mode pass.
    pub fn norm_activations(&self) -> Vec<Option<&Tensor>> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Norm(n) => Some(n.last_normalized.as_ref()),
                _ => None,
            })
            .collect()
    }

    /// Runs a batch `[n, C, H, W]` through the network. Train mode caches
    /// activations for [`Network::backward`] and samples dropout masks.
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut SimRng) -> Result<Tensor> {
        let [c, h, w] = self.arch.input;
        if x.shape().len() != 4 || x.shape()[1..] != [c, h, w] {
            return Err(Error::Shape {
                layer: 0,
                kind: "input",
                detail: format!("expected [n, {c}, {h}, {w}], got {:?}", x.shape()),
            });
        }
        let train = mode == Mode::Train;
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = self.arch.layers[i].kind();
            let res = match layer {
                Layer::Conv(l) => l.forward(&cur, train),
                Layer::Norm(l) => l.forward(&cur, train),
                Layer::Relu(l) => Ok(l.forward(&cur, train)),
                Layer::Dense(l) => l.forward(&cur, train),
                Layer::Dropout(l) => Ok(l.forward(&cur, train, rng)),
                Layer::Flatten(l) => Ok(l.forward(&cur)),
            };
            cur = res.map_err(|detail| Error::Shape { layer: i, kind, detail })?;
        }
        Ok(cur)
    }

    /// Inference-mode forward pass.
    pub fn predict(&mut self, x: &Tensor) -> Result<Tensor> {
        // dropout is inert in infer mode, so the generator is never drawn from
        let mut rng = seeded(0);
        self.forward(x, Mode::Infer, &mut rng)
    }

    pub fn zero_grads(&mut self) {
        for l in &mut self.layers {
            for g in l.grads_mut() {
                g.fill(0.0);
            }
        }
    }

    /// Back-propagates `grad_out` (dL/d output) through the cached train-mode
    /// pass and returns the parameter gradients.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Gradients> {
        self.zero_grads();
        let mut g = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let kind = self.arch.layers[i].kind();
            let res = match &mut self.layers[i] {
                Layer::Conv(l) => l.backward(&g),
                Layer::Norm(l) => l.backward(&g),
                Layer::Relu(l) => l.backward(&g),
                Layer::Dense(l) => l.backward(&g),
                Layer::Dropout(l) => l.backward(&g),
                Layer::Flatten(l) => l.backward(&g),
            };
            g = res.map_err(|detail| Error::Shape { layer: i, kind, detail })?;
        }
        Ok(Gradients(
            self.layers
                .iter_mut()
                .flat_map(|l| l.grads_mut().into_iter().map(|g| g.clone()))
                .collect(),
        ))
    }

    /// Train-mode forward, MSE loss and backward in one call.
    pub fn loss_and_gradients(&mut self, x: &Tensor, target: &Tensor, rng: &mut SimRng) -> Result<(f64, Gradients)> {
        let out = self.forward(x, Mode::Train, rng)?;
        let (loss, grad) = mse_with_grad(&out, target)?;
        let grads = self.backward(&grad)?;
        Ok((loss, grads))
    }
}

/// Mean squared error over every element of the batch.
pub fn mse(output: &Tensor, target: &Tensor) -> Result<f64> {
    if output.shape() != target.shape() {
        return Err(Error::invalid(format!(
            "output {:?} and target {:?} differ in shape",
            output.shape(),
            target.shape()
        )));
    }
    let n = output.len().max(1) as f64;
    Ok(output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| (o - t).powi(2))
        .sum::<f64>()
        / n)
}

pub(crate) fn mse_with_grad(output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let loss = mse(output, target)?;
    let n = output.len().max(1) as f64;
    let g = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| 2.0 * (o - t) / n)
        .collect();
    Ok((loss, Tensor::new(output.shape().to_vec(), g)))
}
