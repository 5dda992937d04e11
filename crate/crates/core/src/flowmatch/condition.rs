use serde::{Deserialize, Serialize};

use super::FlowError;
use crate::icbp::LayoutPrompt;

/// Values per class slot in the pooled vector: presence then `x1, y1, x2, y2`.
pub const SLOT_WIDTH: usize = 5;

/// Ordered class names; a subject phrase must equal one of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassVocab {
    names: Vec<String>,
}

impl ClassVocab {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Self {
        ClassVocab { names: names.into_iter().map(Into::into).collect() }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DropFlags {
    pub text: bool,
    pub coord: bool,
}

impl DropFlags {
    pub const NONE: DropFlags = DropFlags { text: false, coord: false };
    pub const COORD: DropFlags = DropFlags { text: false, coord: true };
    /// The text-drop guidance branch drops coordinates along with the text.
    pub const TEXT: DropFlags = DropFlags { text: true, coord: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    /// One `[one-hot class | x1 y1 x2 y2]` vector per box, in prompt order.
    pub instances: Vec<Vec<f64>>,
    /// `SLOT_WIDTH` values per vocabulary class; what the toy network consumes.
    pub pooled: Vec<f64>,
    pub text_dropped: bool,
    pub coord_dropped: bool,
}

impl ConditionEmbedding {
    pub fn empty(classes: usize) -> Self {
        ConditionEmbedding {
            instances: Vec::new(),
            pooled: vec![0.0; SLOT_WIDTH * classes],
            text_dropped: true,
            coord_dropped: true,
        }
    }
}

/// Encodes every box of every tag.
///
/// The pooled vector has one slot per class; when a class occurs more than
/// once its first box fills the slot. Slots are keyed by class, so a dropped
/// text condition clears the pooled vector entirely: coordinates cannot be
/// bound to anything without the class.
pub fn encode_condition(p: &LayoutPrompt, vocab: &ClassVocab, drop: DropFlags) -> Result<ConditionEmbedding, FlowError> {
    let k = vocab.len();
    let mut instances = Vec::new();
    let mut pooled = vec![0.0; SLOT_WIDTH * k];
    for tag in p.tags() {
        let class = vocab
            .index(&tag.subject)
            .ok_or_else(|| FlowError::UnknownClass(tag.subject.clone()))?;
        for b in &tag.boxes {
            let mut v = vec![0.0; k + 4];
            if !drop.text {
                v[class] = 1.0;
            }
            if !drop.coord {
                v[k..].copy_from_slice(&b.coords());
            }
            let slot = &mut pooled[SLOT_WIDTH * class..SLOT_WIDTH * (class + 1)];
            if !drop.text && slot[0] == 0.0 {
                slot[0] = 1.0;
                slot[1..].copy_from_slice(&v[k..]);
            }
            instances.push(v);
        }
    }
    Ok(ConditionEmbedding { instances, pooled, text_dropped: drop.text, coord_dropped: drop.coord })
}
