//! Coordinate-tag prompt grammar.
//!
//! A layout prompt is ordinary caption text in which each grounded subject
//! phrase is immediately followed by one or more inline box tags:
//!
//! ```text
//! a brown sofa <bbox>[0.1,0.2,0.3,0.4]</bbox> next to 3 dogs <bbox>[..]</bbox>, <bbox>[..]</bbox>, <bbox>[..]</bbox>
//! The cat<bbox>[0.1,0.2,0.3,0.4]</bbox> from image1 plays with the yarn ball<bbox>[0.5,0.6,0.7,0.8]</bbox> from image2
//! ```
//!
//! Canonical output trims trailing zeros, uses `, ` between boxes of one
//! subject, writes `from imageN` without a space, and attaches the tag
//! directly to the subject when a reference image is named (one space
//! otherwise). The parser accepts the looser variants and re-serializes them
//! canonically.
//!
//! Two limits of the grammar: plain text may not contain a literal `<bbox>`,
//! and plain text that directly follows a tag may not begin with
//! `from image`, since both would be read back as tag syntax.

mod bbox;
mod layout;
mod parse;

use std::collections::BTreeMap;
use thiserror::Error;

pub use bbox::{format_box, format_coord, normalize_box, round3, to_millis, BBox, BoxFault};
pub use layout::{InstanceJson, LayoutJson};
pub use parse::parse_prompt;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IcbpError {
    #[error("malformed tag at byte {offset}: {reason}")]
    MalformedTag { offset: usize, reason: String },
    #[error("box {bbox:?} out of range{}", at(*offset))]
    OutOfRange { bbox: BBox, offset: Option<usize> },
    #[error("degenerate box {bbox:?}{}", at(*offset))]
    DegenerateBox { bbox: BBox, offset: Option<usize> },
    #[error("invalid image size {width}x{height}")]
    InvalidImageSize { width: u32, height: u32 },
    #[error("subject {0:?} does not occur in the caption")]
    SubjectNotFound(String),
    #[error("instance {0} has no boxes")]
    NoBoxes(usize),
}

fn at(offset: Option<usize>) -> String {
    offset.map(|o| format!(" at byte {o}")).unwrap_or_default()
}

/// One grounded subject: its phrase, boxes, and optional 1-based reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceTag {
    pub subject: String,
    pub count: u32,
    pub boxes: Vec<BBox>,
    pub source_image: Option<u32>,
}

impl InstanceTag {
    pub fn new(subject: impl Into<String>, boxes: Vec<BBox>) -> Self {
        InstanceTag {
            subject: subject.into(),
            count: boxes.len() as u32,
            boxes,
            source_image: None,
        }
    }

    pub fn from_image(mut self, index: u32) -> Self {
        self.source_image = Some(index);
        self
    }

    /// Subject as it reads in the caption, count prefix included.
    pub fn mention(&self) -> String {
        if self.count > 1 {
            format!("{} {}", self.count, self.subject)
        } else {
            self.subject.clone()
        }
    }

    fn source_suffix(&self) -> String {
        self.source_image
            .map(|k| format!(" from image{k}"))
            .unwrap_or_default()
    }

    pub fn serialize(&self) -> String {
        let sep = if self.source_image.is_some() { "" } else { " " };
        let boxes: Vec<String> = self.boxes.iter().map(format_box).collect();
        format!("{}{sep}{}{}", self.mention(), boxes.join(", "), self.source_suffix())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Span {
    Plain(String),
    Tagged(InstanceTag),
}

/// A caption decomposed into plain text and grounded subject tags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayoutPrompt {
    pub spans: Vec<Span>,
}

impl LayoutPrompt {
    pub fn new(spans: Vec<Span>) -> Self {
        LayoutPrompt { spans }
    }

    pub fn parse(text: &str) -> Result<Self, IcbpError> {
        parse_prompt(text)
    }

    pub fn tags(&self) -> impl Iterator<Item = &InstanceTag> {
        self.spans.iter().filter_map(|s| match s {
            Span::Tagged(t) => Some(t),
            Span::Plain(_) => None,
        })
    }

    pub fn has_coordinates(&self) -> bool {
        self.tags().any(|t| !t.boxes.is_empty())
    }

    pub fn serialize(&self) -> String {
        self.spans
            .iter()
            .map(|s| match s {
                Span::Plain(text) => text.clone(),
                Span::Tagged(tag) => tag.serialize(),
            })
            .collect()
    }

    /// The caption with every tag replaced by its subject mention and reference
    /// suffixes dropped.
    pub fn original_caption(&self) -> String {
        self.render_without_boxes(false)
    }

    /// Prompt text with every `<bbox>` tag removed. Subject phrases, count
    /// prefixes and `from imageN` suffixes stay.
    pub fn strip_coordinates(&self) -> String {
        self.render_without_boxes(true)
    }

    fn render_without_boxes(&self, keep_source: bool) -> String {
        let mut out = String::new();
        for span in &self.spans {
            let piece = match span {
                Span::Plain(text) => text.clone(),
                Span::Tagged(tag) if keep_source => format!("{}{}", tag.mention(), tag.source_suffix()),
                Span::Tagged(tag) => tag.mention(),
            };
            push_collapsed(&mut out, &piece);
        }
        out
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        validate(self)
    }
}

fn push_collapsed(out: &mut String, piece: &str) {
    if out.ends_with(char::is_whitespace) {
        out.push_str(piece.trim_start());
    } else {
        out.push_str(piece);
    }
}

pub fn serialize_prompt(p: &LayoutPrompt) -> String {
    p.serialize()
}

pub fn strip_coordinates(p: &LayoutPrompt) -> String {
    p.strip_coordinates()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CountMismatch { instance: usize, count: u32, boxes: usize },
    EmptySubject { instance: usize },
    DegenerateBox { instance: usize, box_index: usize },
    OutOfRange { instance: usize, box_index: usize },
    InvalidSourceIndex { instance: usize },
    ConflictingSource { source_image: u32, subjects: Vec<String> },
}

/// Structural checks over a prompt. Violations are data, not failures.
pub fn validate(p: &LayoutPrompt) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut by_source: BTreeMap<u32, Vec<String>> = BTreeMap::new();
    for (instance, tag) in p.tags().enumerate() {
        if tag.subject.trim().is_empty() {
            violations.push(Violation::EmptySubject { instance });
        }
        if tag.count as usize != tag.boxes.len() || tag.count == 0 {
            violations.push(Violation::CountMismatch {
                instance,
                count: tag.count,
                boxes: tag.boxes.len(),
            });
        }
        for (box_index, b) in tag.boxes.iter().enumerate() {
            match b.fault() {
                None => {}
                Some(BoxFault::Degenerate) => {
                    violations.push(Violation::DegenerateBox { instance, box_index })
                }
                Some(_) => violations.push(Violation::OutOfRange { instance, box_index }),
            }
        }
        match tag.source_image {
            Some(0) => violations.push(Violation::InvalidSourceIndex { instance }),
            Some(k) => {
                let subjects = by_source.entry(k).or_default();
                if !subjects.contains(&tag.subject) {
                    subjects.push(tag.subject.clone());
                }
            }
            None => {}
        }
    }
    for (source_image, subjects) in by_source {
        if subjects.len() > 1 {
            violations.push(Violation::ConflictingSource { source_image, subjects });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
