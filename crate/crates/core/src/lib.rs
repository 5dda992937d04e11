//! Layout-grounded generation toolkit: coordinate-tag prompts, coordinate-aware
//! classifier-free guidance, a toy conditional flow-matching generator on
//! synthetic rectangle scenes, layout metrics, and dataset-construction math.

pub mod flowmatch;
pub mod guidance;
pub mod harness;
pub mod icbp;
pub mod metrics;
pub mod pipeline;
pub mod scenes;
pub mod seed;

pub use icbp::{BBox, InstanceTag, LayoutPrompt, Span};
