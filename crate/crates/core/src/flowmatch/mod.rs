//! Toy conditional flow matching on small rasters.
//!
//! The path runs from data `x0` at `t = 0` to unit Gaussian noise `x1` at
//! `t = 1`, `x_t = (1 - t) x0 + t x1`, and the network regresses the velocity
//! target `x0 - x1`. Following that velocity from noise therefore moves toward
//! data, so the sampler integrates from `t = 1` down to `t = 0` with
//! `x <- x + (t_k - t_{k+1}) v`.

mod condition;
mod loss;
mod model;
mod net;
mod optim;
mod path;
mod sample;
mod train;

use thiserror::Error;

use crate::guidance::{GuidanceError, Shape};

pub use condition::{encode_condition, ClassVocab, ConditionEmbedding, DropFlags, SLOT_WIDTH};
pub use loss::{fm_loss, fm_loss_and_grad, fm_loss_batch};
pub use model::{Checkpoint, ModelConfig, ToyModel, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use net::{Dense, Mlp};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use path::{interpolate, shift_timestep};
pub use sample::{initial_noise, sample, sample_batch, SamplerConfig};
pub use train::{train, TrainConfig, TrainExample, TrainOutput};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("subject {0:?} is not in the class vocabulary")]
    UnknownClass(String),
    #[error("training diverged at step {step} (loss {loss})")]
    TrainingDiverged { step: usize, loss: f64 },
    #[error("empty training set")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("guidance: {0}")]
    Guidance(#[from] GuidanceError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// An `H x W x C` raster with values in `[0, 1]`, stored channel-major (CHW).
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ToyScene {
    pub fn filled(height: usize, width: usize, color: &[f64]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(plane * color.len());
        for &c in color {
            data.extend(std::iter::repeat_n(c, plane));
        }
        ToyScene { height, width, channels: color.len(), data }
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, FlowError> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(FlowError::ShapeMismatch { expected, got: data.len() });
        }
        Ok(ToyScene { height, width, channels, data })
    }

    pub fn shape(&self) -> Shape {
        Shape::Chw { channels: self.channels, height: self.height, width: self.width }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.channels).map(|c| self.get(c, y, x)).collect()
    }
}

/// Anything that predicts a velocity for a noisy state.
pub trait VelocityModel {
    /// Number of values in one state.
    fn state_len(&self) -> usize;

    fn velocity(&self, x_t: &[f64], t: f64, cond: &ConditionEmbedding) -> Result<Vec<f64>, FlowError>;
}
