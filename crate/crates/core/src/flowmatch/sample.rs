use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{encode_condition, shift_timestep, ClassVocab, DropFlags, FlowError, ToyModel, ToyScene, VelocityModel};
use crate::guidance::{hierarchical_fuse, BranchSet, GuidanceConfig, Shape, VelocityBatch};
use crate::icbp::LayoutPrompt;
use crate::seed::split_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    #[serde(default = "d_steps")]
    pub num_steps: usize,
    #[serde(default = "d_shift")]
    pub timestep_shift: f64,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    #[serde(default)]
    pub seed: u64,
    /// Condition every branch on the prompt with its coordinates removed.
    #[serde(default)]
    pub drop_coordinates: bool,
}

fn d_steps() -> usize {
    20
}
fn d_shift() -> f64 {
    4.0
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            num_steps: d_steps(),
            timestep_shift: d_shift(),
            guidance: GuidanceConfig::default(),
            seed: 0,
            drop_coordinates: false,
        }
    }
}

impl SamplerConfig {
    pub fn check(&self) -> Result<(), FlowError> {
        if self.num_steps == 0 {
            return Err(FlowError::Config("num_steps must be at least 1".into()));
        }
        if !(self.timestep_shift >= 1.0 && self.timestep_shift.is_finite()) {
            return Err(FlowError::Config("timestep_shift must be finite and >= 1".into()));
        }
        self.guidance.check().map_err(FlowError::Config)
    }
}

/// Unit Gaussian starting state for a seed.
pub fn initial_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Euler integration from noise (`t = 1`) to data (`t = 0`) over the
/// shifted schedule `t_k = shift(1 - k / N)`, with guided velocities.
///
/// The toy model has no image condition, so its image-dropped branch is the
/// full branch. Branches whose value cannot affect the fused result are not
/// evaluated: the text-drop branch when `s_text == 1`, and the
/// coordinate-drop branch when the coordinate stage is off or the prompt
/// carries no coordinates. Returns the unclamped final state.
pub fn sample_state<M: VelocityModel + ?Sized>(
    model: &M,
    shape: Shape,
    vocab: &ClassVocab,
    prompt: &LayoutPrompt,
    cfg: &SamplerConfig,
) -> Result<Vec<f64>, FlowError> {
    cfg.check()?;
    let n = model.state_len();
    if shape.len() != n {
        return Err(FlowError::ShapeMismatch { expected: n, got: shape.len() });
    }
    let g = &cfg.guidance;
    let full_flags = if cfg.drop_coordinates { DropFlags::COORD } else { DropFlags::NONE };
    let full = encode_condition(prompt, vocab, full_flags)?;
    let text_drop = encode_condition(prompt, vocab, DropFlags::TEXT)?;
    let coord_enabled = g.coord_enabled && !cfg.drop_coordinates && prompt.has_coordinates();
    let coord_drop = encode_condition(prompt, vocab, DropFlags::COORD)?;
    let need_text_drop = g.s_text != 1.0;

    let mut x = initial_noise(n, cfg.seed);
    let steps = cfg.num_steps;
    let fuse_shape = |v| VelocityBatch::new(v, shape).map_err(FlowError::from);
    for k in 0..steps {
        let ta = shift_timestep(1.0 - k as f64 / steps as f64, cfg.timestep_shift);
        let tb = shift_timestep(1.0 - (k + 1) as f64 / steps as f64, cfg.timestep_shift);
        let v_full = fuse_shape(model.velocity(&x, ta, &full)?)?;
        let v_text_drop = if need_text_drop { fuse_shape(model.velocity(&x, ta, &text_drop)?)? } else { v_full.clone() };
        let v_coord_drop = if coord_enabled { Some(fuse_shape(model.velocity(&x, ta, &coord_drop)?)?) } else { None };
        let branches = BranchSet {
            v_img_drop: g.img_enabled.then(|| v_full.clone()),
            v_full,
            v_text_drop,
            v_coord_drop,
            coord_enabled,
            img_enabled: g.img_enabled,
        };
        let v = hierarchical_fuse(&branches, &g.scales(), g.norm.as_ref())?;
        let dt = ta - tb;
        for (xi, vi) in x.iter_mut().zip(v.data()) {
            *xi += dt * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite("sampler state"));
        }
    }
    Ok(x)
}

/// Guided sample clamped to `[0, 1]`.
pub fn sample(model: &ToyModel, prompt: &LayoutPrompt, cfg: &SamplerConfig) -> Result<ToyScene, FlowError> {
    let mc = &model.config;
    let shape = Shape::Chw { channels: mc.channels, height: mc.height, width: mc.width };
    let mut x = sample_state(model, shape, &mc.classes, prompt, cfg)?;
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    ToyScene::from_chw(mc.height, mc.width, mc.channels, x)
}

/// Samples every prompt, item `i` seeded with `split_seed(cfg.seed, i)`.
/// Items are spread over `threads` workers (0 = all cores); the output does
/// not depend on the thread count.
pub fn sample_batch(
    model: &ToyModel,
    prompts: &[LayoutPrompt],
    cfg: &SamplerConfig,
    threads: usize,
) -> Result<Vec<ToyScene>, FlowError> {
    cfg.check()?;
    let threads = match threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(prompts.len().max(1));
    let item = |i: usize| {
        let c = SamplerConfig { seed: split_seed(cfg.seed, i as u64), ..cfg.clone() };
        sample(model, &prompts[i], &c)
    };
    let mut out: Vec<Option<Result<ToyScene, FlowError>>> = vec![None; prompts.len()];
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let item = &item;
                scope.spawn(move || {
                    (w..prompts.len()).step_by(threads).map(|i| (i, item(i))).collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("sampler worker panicked") {
                out[i] = Some(r);
            }
        }
    });
    out.into_iter().map(|r| r.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmatch::ModelConfig;
    use crate::guidance::GuidanceConfig;
    use crate::icbp::{BBox, InstanceTag, Span};

    fn model() -> ToyModel {
        let cfg = ModelConfig { hidden: vec![8, 8], ..ModelConfig::new(4, 4, 3, ClassVocab::new(["a", "b"])) };
        ToyModel::new(cfg, 7).unwrap()
    }

    fn tagged() -> LayoutPrompt {
        LayoutPrompt::new(vec![
            Span::Plain("one ".into()),
            Span::Tagged(InstanceTag::new("a", vec![BBox::new(0.0, 0.25, 0.5, 1.0).unwrap()])),
        ])
    }

    fn untagged() -> LayoutPrompt {
        LayoutPrompt::new(vec![Span::Tagged(InstanceTag { subject: "b".into(), count: 1, boxes: vec![], source_image: None })])
    }

    #[test]
    fn single_step_by_hand() {
        let m = model();
        let cfg = SamplerConfig { num_steps: 1, seed: 42, ..Default::default() };
        let out = sample(&m, &tagged(), &cfg).unwrap();
        // s_text = s_coord = 1: the fused velocity is the full branch at t = 1
        let x1 = initial_noise(48, 42);
        let cond = encode_condition(&tagged(), &m.config.classes, DropFlags::NONE).unwrap();
        let v = m.velocity(&x1, 1.0, &cond).unwrap();
        let expect: Vec<f64> = x1.iter().zip(&v).map(|(a, b)| (a + 1.0 * b).clamp(0.0, 1.0)).collect();
        assert_eq!(out.data, expect);
    }

    #[test]
    fn coordinate_scale_matters_only_with_coordinates() {
        let m = model();
        let at = |s: f64, p: &LayoutPrompt| {
            let g = GuidanceConfig { s_coord: s, ..Default::default() };
            sample(&m, p, &SamplerConfig { num_steps: 4, seed: 3, guidance: g, ..Default::default() }).unwrap()
        };
        assert_ne!(at(0.0, &tagged()), at(1.0, &tagged()));
        assert_eq!(at(0.0, &untagged()), at(1.0, &untagged()));
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let m = model();
        let prompts = vec![tagged(), untagged(), tagged()];
        let cfg = SamplerConfig { num_steps: 3, seed: 9, ..Default::default() };
        let a = sample_batch(&m, &prompts, &cfg, 1).unwrap();
        let b = sample_batch(&m, &prompts, &cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[2]);
        assert!(a.iter().all(|s| s.data.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn stripped_coordinates_equal_coord_drop_branch() {
        let m = model();
        let g = GuidanceConfig { s_coord: 0.0, ..Default::default() };
        let guided = SamplerConfig { num_steps: 3, seed: 1, guidance: g, ..Default::default() };
        let stripped = SamplerConfig { drop_coordinates: true, ..guided.clone() };
        assert_eq!(sample(&m, &tagged(), &guided).unwrap(), sample(&m, &tagged(), &stripped).unwrap());
    }
}
