//! Synthetic rectangle scenes: random layouts, ground-truth rendering, an
//! oracle colour detector, and an on-disk archive format.

mod archive;
mod detect;

use rand::{seq::IndexedRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flowmatch::{ClassVocab, ToyScene};
use crate::icbp::{round3, BBox, IcbpError, InstanceTag, LayoutPrompt, Span};
use crate::metrics::iou;

pub use archive::{read_archive, write_archive, ArchiveEntry, ArchiveIndex, INDEX_FILE};
pub use detect::{detect, DetectConfig, DetectedBox};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("no layout satisfied the constraints after {0} attempts")]
    RejectionExhausted(usize),
    #[error("invalid layout config: {0}")]
    Config(String),
    #[error("class {0:?} is not in the palette")]
    UnknownClass(String),
    #[error("{0}")]
    Prompt(#[from] IcbpError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

/// Class names with their colours, plus the background colour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    pub names: Vec<String>,
    pub colors: Vec<[f64; 3]>,
    pub background: [f64; 3],
}

impl Default for Palette {
    /// The eight corners of the RGB cube on mid-grey.
    fn default() -> Self {
        let entries: [(&str, [f64; 3]); 8] = [
            ("black", [0.0, 0.0, 0.0]),
            ("white", [1.0, 1.0, 1.0]),
            ("red", [1.0, 0.0, 0.0]),
            ("green", [0.0, 1.0, 0.0]),
            ("blue", [0.0, 0.0, 1.0]),
            ("cyan", [0.0, 1.0, 1.0]),
            ("magenta", [1.0, 0.0, 1.0]),
            ("yellow", [1.0, 1.0, 0.0]),
        ];
        Palette {
            names: entries.iter().map(|(n, _)| format!("{n}_rect")).collect(),
            colors: entries.iter().map(|e| e.1).collect(),
            background: [0.5; 3],
        }
    }
}

impl Palette {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn vocab(&self) -> ClassVocab {
        ClassVocab::new(self.names.iter().cloned())
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub height: usize,
    pub width: usize,
    pub instances: Vec<Instance>,
}

impl LayoutSpec {
    /// `a red_rect <bbox>[..]</bbox>, a blue_rect <bbox>[..]</bbox> and ...`
    pub fn to_prompt(&self, palette: &Palette) -> LayoutPrompt {
        let mut spans = Vec::new();
        let n = self.instances.len();
        for (i, inst) in self.instances.iter().enumerate() {
            let lead = match i {
                0 => "a ",
                _ if i + 1 == n => " and a ",
                _ => ", a ",
            };
            spans.push(Span::Plain(lead.into()));
            spans.push(Span::Tagged(InstanceTag::new(palette.names[inst.class_id].clone(), vec![inst.bbox])));
        }
        LayoutPrompt::new(spans)
    }

    /// One instance per box of every tag.
    pub fn from_prompt(p: &LayoutPrompt, palette: &Palette, height: usize, width: usize) -> Result<Self, SceneError> {
        let mut instances = Vec::new();
        for tag in p.tags() {
            let class_id = palette.class_id(&tag.subject).ok_or_else(|| SceneError::UnknownClass(tag.subject.clone()))?;
            instances.extend(tag.boxes.iter().map(|&bbox| Instance { class_id, bbox }));
        }
        Ok(LayoutSpec { height, width, instances })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutConfig {
    #[serde(default = "d_nmin")]
    pub n_min: usize,
    #[serde(default = "d_nmax")]
    pub n_max: usize,
    /// Smallest box side as a fraction of the image.
    #[serde(default = "d_min_side")]
    pub min_side: f64,
    #[serde(default = "d_max_side")]
    pub max_side: f64,
    #[serde(default = "d_overlap")]
    pub max_overlap_iou: f64,
    #[serde(default = "d_size")]
    pub height: usize,
    #[serde(default = "d_size")]
    pub width: usize,
    #[serde(default = "d_attempts")]
    pub max_attempts: usize,
}

fn d_nmin() -> usize {
    2
}
fn d_nmax() -> usize {
    6
}
fn d_min_side() -> f64 {
    0.15
}
fn d_max_side() -> f64 {
    0.5
}
fn d_overlap() -> f64 {
    0.1
}
fn d_size() -> usize {
    32
}
fn d_attempts() -> usize {
    1000
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig {
            n_min: d_nmin(),
            n_max: d_nmax(),
            min_side: d_min_side(),
            max_side: d_max_side(),
            max_overlap_iou: d_overlap(),
            height: d_size(),
            width: d_size(),
            max_attempts: d_attempts(),
        }
    }
}

/// Boxes tried per instance before the whole layout is redrawn.
const TRIES_PER_BOX: usize = 100;
/// Minimum number of pixels a box must cover when rendered.
pub const MIN_BOX_PIXELS: usize = 4;

/// Draws the instance count uniformly from `n_min..=n_max`, distinct classes,
/// and boxes by rejection until every pair has IoU at most `max_overlap_iou`.
pub fn sample_layout(seed: u64, cfg: &LayoutConfig, palette: &Palette) -> Result<LayoutSpec, SceneError> {
    if !(2 <= cfg.n_min && cfg.n_min <= cfg.n_max && cfg.n_max <= 6) {
        return Err(SceneError::Config(format!("need 2 <= n_min <= n_max <= 6, got {}..{}", cfg.n_min, cfg.n_max)));
    }
    if cfg.n_max > palette.len() {
        return Err(SceneError::Config("palette has fewer classes than n_max".into()));
    }
    if !(0.0 < cfg.min_side && cfg.min_side <= cfg.max_side && cfg.max_side <= 1.0) {
        return Err(SceneError::Config("need 0 < min_side <= max_side <= 1".into()));
    }
    if cfg.height == 0 || cfg.width == 0 {
        return Err(SceneError::Config("image size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(cfg.n_min..=cfg.n_max);
    let ids: Vec<usize> = (0..palette.len()).collect();
    'attempt: for _ in 0..cfg.max_attempts {
        let classes: Vec<usize> = ids.choose_multiple(&mut rng, n).copied().collect();
        let mut instances: Vec<Instance> = Vec::with_capacity(n);
        for &class_id in &classes {
            let placed = (0..TRIES_PER_BOX).find_map(|_| {
                let w = rng.random_range(cfg.min_side..=cfg.max_side);
                let h = rng.random_range(cfg.min_side..=cfg.max_side);
                let x = rng.random_range(0.0..=1.0 - w);
                let y = rng.random_range(0.0..=1.0 - h);
                let b = BBox::new(round3(x), round3(y), round3(x + w).min(1.0), round3(y + h).min(1.0)).ok()?;
                let fits = pixel_span(b.x1, b.x2, cfg.width).len() * pixel_span(b.y1, b.y2, cfg.height).len() >= MIN_BOX_PIXELS;
                (fits && instances.iter().all(|o| iou(&o.bbox, &b) <= cfg.max_overlap_iou)).then_some(b)
            });
            match placed {
                Some(bbox) => instances.push(Instance { class_id, bbox }),
                None => continue 'attempt,
            }
        }
        return Ok(LayoutSpec { height: cfg.height, width: cfg.width, instances });
    }
    Err(SceneError::RejectionExhausted(cfg.max_attempts))
}

/// Pixel indices whose centres `(i + 0.5) / n` fall in `[lo, hi)`.
pub fn pixel_span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    // smallest i with (i + 0.5) / n >= lo, and with (i + 0.5) / n >= hi
    let first = |v: f64| {
        let mut i = (v * n as f64 - 0.5).ceil().max(0.0) as usize;
        while i > 0 && (i as f64 - 0.5) / n as f64 >= v {
            i -= 1;
        }
        while i < n && (i as f64 + 0.5) / (n as f64) < v {
            i += 1;
        }
        i.min(n)
    };
    let (a, b) = (first(lo), first(hi));
    a..b.max(a)
}

/// Background, then each rectangle in instance order (later ones on top).
pub fn render(spec: &LayoutSpec, palette: &Palette) -> ToyScene {
    let mut scene = ToyScene::filled(spec.height, spec.width, &palette.background);
    for inst in &spec.instances {
        let color = palette.colors[inst.class_id];
        for y in pixel_span(inst.bbox.y1, inst.bbox.y2, spec.height) {
            for x in pixel_span(inst.bbox.x1, inst.bbox.x2, spec.width) {
                for (c, &v) in color.iter().enumerate() {
                    scene.set(c, y, x, v);
                }
            }
        }
    }
    scene
}
