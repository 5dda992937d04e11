//! The toy velocity network and its input featurization.
//!
//! One small MLP is shared across pixels. Each pixel sees its own position,
//! its noisy value, a time embedding and, per vocabulary class, a presence
//! bit plus the signed distances from the pixel to the four edges of that
//! class's box. The distances make "inside this box" a simple function of the
//! input, which a network of this size cannot otherwise learn cheaply.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassVocab, ConditionEmbedding, FlowError, Mlp, VelocityModel, SLOT_WIDTH};
use crate::flowmatch::net::Dense;

const TIME_FREQS: [f64; 3] = [1.0, 2.0, 4.0];
const TIME_DIM: usize = 1 + 2 * TIME_FREQS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: ClassVocab,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Multiplier on the pixel-to-edge distance features.
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_offset_scale() -> f64 {
    16.0
}

impl ModelConfig {
    pub fn new(height: usize, width: usize, channels: usize, classes: ClassVocab) -> Self {
        ModelConfig { height, width, channels, classes, hidden: default_hidden(), offset_scale: default_offset_scale() }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn state_len(&self) -> usize {
        self.pixels() * self.channels
    }

    pub fn input_dim(&self) -> usize {
        2 + self.channels + TIME_DIM + SLOT_WIDTH * self.classes.len()
    }

    pub fn check(&self) -> Result<(), FlowError> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(FlowError::Config("scene size must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(FlowError::Config("class vocabulary is empty".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(FlowError::Config("hidden layer widths must be positive".into()));
        }
        if !self.offset_scale.is_finite() {
            return Err(FlowError::Config("offset_scale must be finite".into()));
        }
        Ok(())
    }

    fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(&self.hidden);
        sizes.push(self.channels);
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ModelConfig,
    pub net: Mlp,
}

impl ToyModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, FlowError> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&config.layer_sizes(), &mut rng);
        Ok(ToyModel { config, net })
    }

    /// One feature row per listed pixel index (`y * width + x`).
    pub fn features(&self, pooled: &[f64], x_t: &[f64], t: f64, pixels: &[usize]) -> Array2<f64> {
        let cfg = &self.config;
        let (h, w, c, k) = (cfg.height, cfg.width, cfg.channels, cfg.classes.len());
        let d = cfg.input_dim();
        let plane = h * w;
        let mut time = [0.0; TIME_DIM];
        time[0] = t;
        for (i, f) in TIME_FREQS.iter().enumerate() {
            time[1 + 2 * i] = (PI * f * t).sin();
            time[2 + 2 * i] = (PI * f * t).cos();
        }
        let mut out = Array2::zeros((pixels.len(), d));
        for (row, &p) in out.rows_mut().into_iter().zip(pixels) {
            let row = row.into_slice().unwrap();
            let u = ((p % w) as f64 + 0.5) / w as f64;
            let v = ((p / w) as f64 + 0.5) / h as f64;
            row[0] = u;
            row[1] = v;
            for ch in 0..c {
                row[2 + ch] = x_t[ch * plane + p];
            }
            let base = 2 + c;
            row[base..base + TIME_DIM].copy_from_slice(&time);
            let pres = base + TIME_DIM;
            let offs = pres + k;
            for j in 0..k {
                let s = &pooled[SLOT_WIDTH * j..SLOT_WIDTH * (j + 1)];
                row[pres + j] = s[0];
                let g = cfg.offset_scale * s[0];
                row[offs + 4 * j] = g * (u - s[1]);
                row[offs + 4 * j + 1] = g * (s[3] - u);
                row[offs + 4 * j + 2] = g * (v - s[2]);
                row[offs + 4 * j + 3] = g * (s[4] - v);
            }
        }
        out
    }

    pub(crate) fn check_inputs(&self, x_t: &[f64], cond: &ConditionEmbedding) -> Result<(), FlowError> {
        let n = self.config.state_len();
        if x_t.len() != n {
            return Err(FlowError::ShapeMismatch { expected: n, got: x_t.len() });
        }
        let m = SLOT_WIDTH * self.config.classes.len();
        if cond.pooled.len() != m {
            return Err(FlowError::ShapeMismatch { expected: m, got: cond.pooled.len() });
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            layers: self
                .net
                .layers
                .iter()
                .map(|l| LayerJson {
                    shape: [l.w.nrows(), l.w.ncols()],
                    weights: l.w.iter().copied().collect(),
                    bias: l.b.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, FlowError> {
        let bad = |m: String| Err(FlowError::Checkpoint(m));
        if ck.format != CHECKPOINT_FORMAT {
            return bad(format!("unknown format {:?}", ck.format));
        }
        if ck.version != CHECKPOINT_VERSION {
            return bad(format!("unsupported version {}", ck.version));
        }
        ck.config.check()?;
        let sizes = ck.config.layer_sizes();
        if ck.layers.len() + 1 != sizes.len() {
            return bad(format!("expected {} layers, found {}", sizes.len() - 1, ck.layers.len()));
        }
        let mut layers = Vec::new();
        for (i, l) in ck.layers.into_iter().enumerate() {
            let [r, c] = l.shape;
            if [r, c] != [sizes[i], sizes[i + 1]] || l.bias.len() != c {
                return bad(format!("layer {i} has shape {:?}, expected {:?}", l.shape, [sizes[i], sizes[i + 1]]));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return bad(format!("layer {i} has non-finite weights"));
            }
            let w = Array2::from_shape_vec((r, c), l.weights).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
            layers.push(Dense { w, b: Array1::from(l.bias) });
        }
        Ok(ToyModel { config: ck.config, net: Mlp { layers } })
    }

    pub fn save(&self, path: &Path) -> Result<(), FlowError> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, FlowError> {
        let text = std::fs::read_to_string(path).map_err(|e| FlowError::Checkpoint(format!("{}: {e}", path.display())))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| FlowError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(ck)
    }
}

impl VelocityModel for ToyModel {
    fn state_len(&self) -> usize {
        self.config.state_len()
    }

    fn velocity(&self, x_t: &[f64], t: f64, cond: &ConditionEmbedding) -> Result<Vec<f64>, FlowError> {
        self.check_inputs(x_t, cond)?;
        let plane = self.config.pixels();
        let pixels: Vec<usize> = (0..plane).collect();
        let out = self.net.forward(self.features(&cond.pooled, x_t, t, &pixels));
        let c = self.config.channels;
        let mut v = vec![0.0; plane * c];
        for (p, row) in out.rows().into_iter().enumerate() {
            for ch in 0..c {
                v[ch * plane + p] = row[ch];
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(FlowError::NonFinite("velocity"));
        }
        Ok(v)
    }
}

pub const CHECKPOINT_FORMAT: &str = "layoutkit-toy-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: model config plus, per layer, its `[inputs, outputs]`
/// shape, row-major weights and biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub layers: Vec<LayerJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub shape: [usize; 2],
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}
