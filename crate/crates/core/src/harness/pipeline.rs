use std::path::Path;

use super::tags;
use crate::config::KeyValues;
use crate::dataset::{generate_dataset, split_dataset, write_dataset, Dataset, DatasetConfig, Dimensions};
use crate::error::{Error, Result};
use crate::nn::{train, Architecture, CnnShape, History, Network, TrainConfig};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Cnn,
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub cnn: CnnShape,
    pub mlp_hidden: Vec<usize>,
    pub mlp_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Cnn,
            cnn: CnnShape::default(),
            mlp_hidden: vec![2048, 2048],
            mlp_dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let kind = match kv.get("train.model").unwrap_or("cnn") {
            "cnn" | "cnn_mimo" => ModelKind::Cnn,
            "mlp" => ModelKind::Mlp,
            other => return Err(Error::config(format!("train.model must be cnn or mlp, got {other:?}"))),
        };
        let kernel = match kv.get("train.kernel") {
            None => d.cnn.kernel,
            Some(s) => {
                let parsed = s
                    .split_once('x')
                    .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
                parsed.ok_or_else(|| Error::config(format!("train.kernel: expected HxW, got {s:?}")))?
            }
        };
        let cfg = ModelConfig {
            kind,
            cnn: CnnShape {
                filters: kv.parsed_or("train.filters", d.cnn.filters)?,
                kernel,
                conv_layers: kv.parsed_or("train.conv_layers", d.cnn.conv_layers)?,
                fc_units: kv.parsed_or("train.fc_units", d.cnn.fc_units)?,
                fc_layers: kv.parsed_or("train.fc_layers", d.cnn.fc_layers)?,
                dropout: kv.parsed_or("train.dropout", d.cnn.dropout)?,
            },
            mlp_hidden: kv.list("train.mlp_hidden")?.unwrap_or(d.mlp_hidden),
            mlp_dropout: kv.parsed_or("train.mlp_dropout", d.mlp_dropout)?,
        };
        Ok(cfg)
    }

    pub fn architecture(&self, dims: Dimensions) -> Architecture {
        match self.kind {
            ModelKind::Cnn => Architecture::cnn_mimo(dims.n_r, dims.n_t, dims.users, &self.cnn),
            ModelKind::Mlp => Architecture::mlp(dims.n_r, dims.n_t, dims.users, &self.mlp_hidden, self.mlp_dropout),
        }
    }

    /// Fresh network for the given dimensions, shape-checked.
    pub fn build(&self, dims: Dimensions, seed: u64) -> Result<Network> {
        Network::new(self.architecture(dims), seed).map_err(|e| Error::config(format!("model architecture: {e}")))
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub seed: u64,
}

impl TrainingPlan {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let seed = kv.parsed_or("seed", 0u64)?;
        let d = TrainConfig::default();
        let train = TrainConfig {
            learning_rate: kv.parsed_or("train.learning_rate", d.learning_rate)?,
            momentum: kv.parsed_or("train.momentum", d.momentum)?,
            batch_size: kv.parsed_or("train.batch_size", d.batch_size)?,
            epochs: kv.parsed_or("train.epochs", d.epochs)?,
            seed: derive_seed(seed, &[tags::TRAIN]),
        };
        train.validate().map_err(|e| Error::config(e.to_string()))?;
        let train_fraction = kv.parsed_or("train.train_fraction", 0.8)?;
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::config(format!(
                "train.train_fraction must be in (0, 1), got {train_fraction}"
            )));
        }
        Ok(TrainingPlan {
            model: ModelConfig::from_kv(kv)?,
            train,
            train_fraction,
            seed,
        })
    }
}

/// Seeded 80/20-style split, fresh network, full training run.
pub fn train_on_dataset(d: &Dataset, plan: &TrainingPlan) -> Result<(Network, History)> {
    if d.is_empty() {
        return Err(Error::config("dataset is empty"));
    }
    let (tr, val) = split_dataset(d, plan.train_fraction, &mut stream(plan.seed, &[tags::SPLIT]))?;
    if tr.is_empty() {
        return Err(Error::config("training split is empty; use more samples"));
    }
    let mut model = plan.model.build(d.dims, derive_seed(plan.seed, &[tags::INIT]))?;
    let history = train(&mut model, &tr.to_examples()?, &val.to_examples()?, &plan.train)?;
    Ok((model, history))
}

pub fn generate_and_write(cfg: &DatasetConfig, path: &Path) -> Result<Dataset> {
    let d = generate_dataset(cfg)?;
    write_dataset(&d, path)?;
    Ok(d)
}
