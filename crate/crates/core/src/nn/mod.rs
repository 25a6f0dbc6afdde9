//! A small, dependency-free neural-network engine.
//!
//! Supports exactly the layers the beamformer regressors need: 2-d valid
//! convolution, batch normalization, ReLU, fully connected, inverted dropout
//! and flatten, trained with MSE loss and heavy-ball SGD.

mod checkpoint;
mod layers;
mod network;
mod predict;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, write_train_config};
pub use network::{mse, paper_parameter_count, Architecture, CnnShape, Gradients, LayerSpec, Mode, Network};
pub use predict::{fuse_user_predictions, predict_and_quantize, predict_beamformers, rebuild_beamformers, AnalogPair};
pub use train::{evaluate, sgd_momentum_step, train, Examples, History, TrainConfig, Velocity};

/// Row-major `f64` tensor whose first axis is the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not fill shape {shape:?}"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Batch slice `i` as a 1-sample tensor.
    pub fn sample(&self, i: usize) -> Tensor {
        let per = self.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(shape, self.data[i * per..(i + 1) * per].to_vec())
    }
}
