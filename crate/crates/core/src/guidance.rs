//! Coordinate-aware classifier-free guidance.
//!
//! Three guidance stages are chained, each of the form
//! `drop + s * (cond - drop)`:
//!
//! ```text
//! text  = v_text_drop  + s_text  * (v_full  - v_text_drop)
//! coord = v_coord_drop + s_coord * (text    - v_coord_drop)   (optionally renormalized)
//! final = v_img_drop   + s_img   * (coord   - v_img_drop)
//! ```
//!
//! With the coordinate stage disabled the chain is the usual two-branch
//! text/image guidance; disabling the image stage as well leaves plain text
//! guidance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GuidanceError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Shape, Shape),
    #[error("missing {0} branch for an enabled guidance stage")]
    MissingBranch(&'static str),
    #[error("velocity data length {len} does not match shape {shape:?}")]
    BadLength { len: usize, shape: Shape },
    #[error("non-finite velocity entry")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Flat(usize),
    Chw { channels: usize, height: usize, width: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Flat(n) => n,
            Shape::Chw { channels, height, width } => channels * height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One predicted velocity, stored channel-major when it has a `Chw` shape.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBatch {
    data: Vec<f64>,
    shape: Shape,
}

impl VelocityBatch {
    pub fn new(data: Vec<f64>, shape: Shape) -> Result<Self, GuidanceError> {
        if data.len() != shape.len() {
            return Err(GuidanceError::BadLength { len: data.len(), shape });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GuidanceError::NonFinite);
        }
        Ok(VelocityBatch { data, shape })
    }

    pub fn flat(data: Vec<f64>) -> Result<Self, GuidanceError> {
        let shape = Shape::Flat(data.len());
        Self::new(data, shape)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn norm(&self) -> f64 {
        l2(&self.data)
    }

    fn check_same(&self, other: &VelocityBatch) -> Result<(), GuidanceError> {
        if self.shape != other.shape {
            return Err(GuidanceError::ShapeMismatch(self.shape, other.shape));
        }
        Ok(())
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v_uncond + s * (v_cond - v_uncond)`, elementwise.
pub fn cfg_combine(v_uncond: &VelocityBatch, v_cond: &VelocityBatch, s: f64) -> Result<VelocityBatch, GuidanceError> {
    v_uncond.check_same(v_cond)?;
    // u + (c - u) is not exactly c in floating point
    if s == 1.0 {
        return Ok(v_cond.clone());
    }
    let data = v_uncond
        .data
        .iter()
        .zip(&v_cond.data)
        .map(|(&u, &c)| u + s * (c - u))
        .collect();
    Ok(VelocityBatch { data, shape: v_uncond.shape })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormDomain {
    #[default]
    Global,
    PerChannel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    #[serde(default)]
    pub domain: NormDomain,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    1e-8
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { domain: NormDomain::Global, epsilon: default_epsilon() }
    }
}

/// Rescales `v_guided` so its norm matches `v_base`:
/// `alpha = |v_base| / (|v_guided| + epsilon)`.
///
/// `PerChannel` computes one `alpha` per channel slice of a `Chw` velocity;
/// on a flat velocity it is the same as `Global`.
pub fn renormalize(v_guided: &VelocityBatch, v_base: &VelocityBatch, cfg: &NormConfig) -> Result<VelocityBatch, GuidanceError> {
    v_guided.check_same(v_base)?;
    let scale = |g: &[f64], b: &[f64]| l2(b) / (l2(g) + cfg.epsilon);
    let data = match (cfg.domain, v_guided.shape) {
        (NormDomain::PerChannel, Shape::Chw { channels, .. }) if channels > 0 => {
            let plane = v_guided.data.len() / channels;
            let mut out = Vec::with_capacity(v_guided.data.len());
            for (g, b) in v_guided.data.chunks(plane).zip(v_base.data.chunks(plane)) {
                let alpha = scale(g, b);
                out.extend(g.iter().map(|x| alpha * x));
            }
            out
        }
        _ => {
            let alpha = scale(&v_guided.data, &v_base.data);
            v_guided.data.iter().map(|x| alpha * x).collect()
        }
    };
    Ok(VelocityBatch { data, shape: v_guided.shape })
}

/// The four model evaluations guidance can draw on.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchSet {
    /// All conditions present.
    pub v_full: VelocityBatch,
    /// Text and coordinates dropped, image kept.
    pub v_text_drop: VelocityBatch,
    /// Coordinates dropped, text and image kept.
    pub v_coord_drop: Option<VelocityBatch>,
    /// Image dropped, text and coordinates kept.
    pub v_img_drop: Option<VelocityBatch>,
    pub coord_enabled: bool,
    pub img_enabled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceScales {
    pub s_text: f64,
    pub s_img: f64,
    pub s_coord: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        GuidanceScales { s_text: 1.0, s_img: 1.0, s_coord: 1.0 }
    }
}

/// Reference velocity for renormalization of the coordinate stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormBase {
    /// Text-guided velocity, before the coordinate stage.
    #[default]
    TextCfg,
    /// The coordinate-dropped branch.
    CoordDrop,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Renorm {
    #[serde(flatten)]
    pub norm: NormConfig,
    #[serde(default)]
    pub base: NormBase,
}

/// Chains the text, coordinate and image guidance stages.
pub fn hierarchical_fuse(
    branches: &BranchSet,
    scales: &GuidanceScales,
    renorm: Option<&Renorm>,
) -> Result<VelocityBatch, GuidanceError> {
    let text = cfg_combine(&branches.v_text_drop, &branches.v_full, scales.s_text)?;

    let coord = if branches.coord_enabled {
        let drop = branches
            .v_coord_drop
            .as_ref()
            .ok_or(GuidanceError::MissingBranch("coordinate-drop"))?;
        let guided = cfg_combine(drop, &text, scales.s_coord)?;
        match renorm {
            Some(r) => {
                let base = match r.base {
                    NormBase::TextCfg => &text,
                    NormBase::CoordDrop => drop,
                };
                renormalize(&guided, base, &r.norm)?
            }
            None => guided,
        }
    } else {
        text
    };

    if branches.img_enabled {
        let drop = branches
            .v_img_drop
            .as_ref()
            .ok_or(GuidanceError::MissingBranch("image-drop"))?;
        cfg_combine(drop, &coord, scales.s_img)
    } else {
        Ok(coord)
    }
}

/// Guidance block of the harness and sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub s_text: f64,
    pub s_img: f64,
    pub s_coord: f64,
    pub coord_enabled: bool,
    pub img_enabled: bool,
    #[serde(default)]
    pub norm: Option<Renorm>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            s_text: 1.0,
            s_img: 1.0,
            s_coord: 1.0,
            coord_enabled: true,
            img_enabled: false,
            norm: None,
        }
    }
}

impl GuidanceConfig {
    pub fn scales(&self) -> GuidanceScales {
        GuidanceScales { s_text: self.s_text, s_img: self.s_img, s_coord: self.s_coord }
    }

    pub fn check(&self) -> Result<(), String> {
        for (name, s) in [("s_text", self.s_text), ("s_img", self.s_img), ("s_coord", self.s_coord)] {
            if !s.is_finite() || s < 0.0 {
                return Err(format!("{name} must be finite and >= 0, got {s}"));
            }
        }
        if let Some(r) = &self.norm {
            if !(r.norm.epsilon > 0.0) {
                return Err(format!("norm epsilon must be > 0, got {}", r.norm.epsilon));
            }
        }
        Ok(())
    }
}
