#![allow(dead_code)]

use layoutkit::icbp::{BBox, InstanceTag, LayoutPrompt, Span};
use rand::seq::IndexedRandom;
use rand::Rng;

const SUBJECT_WORDS: &[&str] = &[
    "cat", "dog", "dogs", "sofa", "brown", "red", "yarn", "ball", "lamp", "tall", "tree", "car", "wooden", "chair",
    "bird", "kite", "striped", "umbrella", "cup", "teapot", "old", "man", "woman", "bicycle", "clock", "vase",
];
const FILLER: &[&str] = &[
    "quietly", "sits", "near", "the", "park", "under", "sunny", "sky", "while", "and", "rests", "beside", "glows",
    "a", "big", "room", "calm", "evening", "with", "its", "shadow", "window",
];
const BOUNDARY: &[&str] = &["a", "an", "the", "and", "with", "beside", "near", "under", "behind", "of", "on", "some"];
const ENDINGS: &[&str] = &[".", "!", " tonight.", " in the park.", ", happily.", ""];

fn subject(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| *SUBJECT_WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

fn random_box(rng: &mut impl Rng) -> BBox {
    let axis = |rng: &mut dyn rand::RngCore| {
        let a = rng.random_range(0..1000);
        let b = rng.random_range(a + 1..=1000);
        (a as f64 / 1000.0, b as f64 / 1000.0)
    };
    let (x1, x2) = axis(rng);
    let (y1, y2) = axis(rng);
    BBox::new(x1, y1, x2, y2).unwrap()
}

/// Words ending in a boundary word, so the following subject is unambiguous.
fn lead_in(rng: &mut impl Rng, first: bool) -> String {
    let mut words: Vec<&str> = Vec::new();
    for _ in 0..rng.random_range(0..4) {
        words.push(FILLER.choose(rng).unwrap());
    }
    // plain text right after a tag may not start with "from"
    words.push(BOUNDARY.choose(rng).unwrap());
    let body = words.join(" ");
    if first {
        format!("{body} ")
    } else {
        let sep = [" ", ", ", "; "].choose(rng).unwrap();
        format!("{sep}{body} ")
    }
}

/// A well-formed prompt: optional lead-in, 1–5 tags separated by connectors,
/// and an optional ending.
pub fn random_prompt(rng: &mut impl Rng) -> LayoutPrompt {
    let mut spans = Vec::new();
    let n = rng.random_range(1..=5);
    for i in 0..n {
        if i > 0 || rng.random_bool(0.7) {
            spans.push(Span::Plain(lead_in(rng, i == 0)));
        }
        let boxes = (0..rng.random_range(1..=4)).map(|_| random_box(rng)).collect();
        let mut tag = InstanceTag::new(subject(rng), boxes);
        if rng.random_bool(0.3) {
            tag = tag.from_image(rng.random_range(1..=9));
        }
        spans.push(Span::Tagged(tag));
    }
    let end = *ENDINGS.choose(rng).unwrap();
    if !end.is_empty() {
        spans.push(Span::Plain(end.to_string()));
    }
    LayoutPrompt::new(spans)
}
