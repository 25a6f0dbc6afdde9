use rand::seq::SliceRandom;

use super::network::{mse, Gradients, Network};
use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Learning rate 0.005, momentum 0.9, batches of 500, 100 epochs.
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 500,
            epochs: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub Vec<Vec<f64>>);

impl Velocity {
    pub fn zeros_like(model: &Network) -> Self {
        Velocity(model.params().iter().map(|p| vec![0.0; p.len()]).collect())
    }
}

/// Classical momentum: `v ← μv − η g`, `w ← w + v`.
pub fn sgd_momentum_step(
    model: &mut Network,
    grads: &Gradients,
    cfg: &TrainConfig,
    velocity: &mut Velocity,
) -> Result<()> {
    let mut params = model.params_mut();
    if params.len() != grads.0.len() || params.len() != velocity.0.len() {
        return Err(Error::invalid(
            "gradient, velocity and parameter lists differ in length",
        ));
    }
    for ((w, g), v) in params.iter_mut().zip(&grads.0).zip(&mut velocity.0) {
        if w.len() != g.len() || w.len() != v.len() {
            return Err(Error::invalid("gradient tensor shape differs from its parameter"));
        }
        for ((w, g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
            *v = cfg.momentum * *v - cfg.learning_rate * g;
            *w += *v;
        }
    }
    Ok(())
}

/// Flat input/target pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    /// `[C, H, W]` of a single input.
    pub input_shape: [usize; 3],
    pub target_len: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Examples {
    pub fn new(input_shape: [usize; 3], target_len: usize, inputs: Vec<f64>, targets: Vec<f64>) -> Result<Self> {
        let in_len: usize = input_shape.iter().product();
        if in_len == 0 || target_len == 0 {
            return Err(Error::invalid("examples need non-empty inputs and targets"));
        }
        if !inputs.len().is_multiple_of(in_len)
            || !targets.len().is_multiple_of(target_len)
            || inputs.len() / in_len != targets.len() / target_len
        {
            return Err(Error::invalid("input and target buffers disagree on the sample count"));
        }
        Ok(Examples {
            input_shape,
            target_len,
            inputs,
            targets,
        })
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> (Tensor, Tensor) {
        let (il, tl) = (self.input_len(), self.target_len);
        let mut x = Vec::with_capacity(indices.len() * il);
        let mut z = Vec::with_capacity(indices.len() * tl);
        for &i in indices {
            x.extend_from_slice(&self.inputs[i * il..(i + 1) * il]);
            z.extend_from_slice(&self.targets[i * tl..(i + 1) * tl]);
        }
        let [c, h, w] = self.input_shape;
        (
            Tensor::new(vec![indices.len(), c, h, w], x),
            Tensor::new(vec![indices.len(), tl], z),
        )
    }

    pub fn subset(&self, indices: &[usize]) -> Examples {
        let (x, z) = self.batch(indices);
        Examples {
            input_shape: self.input_shape,
            target_len: self.target_len,
            inputs: x.into_data(),
            targets: z.into_data(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Mean mini-batch loss of each epoch (train mode).
    pub train: Vec<f64>,
    /// Inference-mode MSE on the validation set after each epoch.
    pub validation: Vec<f64>,
}

/// Inference-mode MSE over all examples.
pub fn evaluate(model: &mut Network, data: &Examples, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, z) = data.batch(chunk);
        let out = model.predict(&x)?;
        total += mse(&out, &z)? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

fn check_shapes(model: &Network, data: &Examples) -> Result<()> {
    if data.input_shape != model.input_shape() || data.target_len != model.output_width() {
        return Err(Error::invalid(format!(
            "examples are {:?} -> {}, network is {:?} -> {}",
            data.input_shape,
            data.target_len,
            model.input_shape(),
            model.output_width()
        )));
    }
    Ok(())
}

/// Mini-batch SGD with momentum. Shuffling and dropout masks come from
/// streams derived from `cfg.seed` and the epoch number, so a run is exactly
/// reproducible. The model after the last epoch is kept.
pub fn train(model: &mut Network, train_set: &Examples, val_set: &Examples, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    check_shapes(model, train_set)?;
    if !val_set.is_empty() {
        check_shapes(model, val_set)?;
    }
    let mut velocity = Velocity::zeros_like(model);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = stream(cfg.seed, &[epoch as u64, 0]);
        let mut dropout_rng = stream(cfg.seed, &[epoch as u64, 1]);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, z) = train_set.batch(chunk);
            let (loss, grads) = model.loss_and_gradients(&x, &z, &mut dropout_rng)?;
            sgd_momentum_step(model, &grads, cfg, &mut velocity)?;
            total += loss * chunk.len() as f64;
        }
        history.train.push(total / train_set.len() as f64);
        history.validation.push(evaluate(model, val_set, cfg.batch_size)?);
    }
    Ok(history)
}
