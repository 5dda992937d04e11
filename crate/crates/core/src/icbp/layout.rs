//! Layout JSON: the tag-free caption plus one record per grounded subject.

use serde::{Deserialize, Serialize};

use super::{BBox, IcbpError, InstanceTag, LayoutPrompt, Span};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutJson {
    pub caption: String,
    pub instances: Vec<InstanceJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceJson {
    pub subject: String,
    pub boxes: Vec<BBox>,
    #[serde(default)]
    pub source_image: Option<u32>,
}

impl LayoutPrompt {
    pub fn to_layout(&self) -> LayoutJson {
        LayoutJson {
            caption: self.original_caption(),
            instances: self
                .tags()
                .map(|t| InstanceJson {
                    subject: t.subject.clone(),
                    boxes: t.boxes.clone(),
                    source_image: t.source_image,
                })
                .collect(),
        }
    }

    /// Builds a prompt by attaching each instance's tag right after the first
    /// unclaimed whole-word mention of its subject in the caption.
    ///
    /// A count written before a multi-box subject (`3 dogs`) is absorbed into
    /// the tag; a missing count prefix is added on serialization.
    pub fn from_layout(layout: &LayoutJson) -> Result<Self, IcbpError> {
        let caption = layout.caption.as_str();
        // (start, end, instance index), kept sorted by start
        let mut claims: Vec<(usize, usize, usize)> = Vec::new();

        for (idx, inst) in layout.instances.iter().enumerate() {
            if inst.boxes.is_empty() {
                return Err(IcbpError::NoBoxes(idx));
            }
            for b in &inst.boxes {
                BBox::new(b.x1, b.y1, b.x2, b.y2)?;
            }
            let (start, end) = find_mention(caption, &inst.subject, &claims)
                .ok_or_else(|| IcbpError::SubjectNotFound(inst.subject.clone()))?;
            let start = absorb_count(caption, start, inst.boxes.len(), &claims);
            let pos = claims.partition_point(|c| c.0 < start);
            claims.insert(pos, (start, end, idx));
        }

        let mut spans = Vec::new();
        let mut cursor = 0;
        for &(start, end, idx) in &claims {
            if start > cursor {
                spans.push(Span::Plain(caption[cursor..start].to_string()));
            }
            let inst = &layout.instances[idx];
            let boxes = inst.boxes.iter().map(BBox::rounded).collect();
            let mut tag = InstanceTag::new(inst.subject.clone(), boxes);
            tag.source_image = inst.source_image;
            spans.push(Span::Tagged(tag));
            cursor = end;
        }
        if cursor < caption.len() {
            spans.push(Span::Plain(caption[cursor..].to_string()));
        }
        Ok(LayoutPrompt { spans })
    }
}

fn overlaps(claims: &[(usize, usize, usize)], start: usize, end: usize) -> bool {
    claims.iter().any(|&(s, e, _)| start < e && s < end)
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_alphanumeric() || c == '_')
}

fn find_mention(caption: &str, subject: &str, claims: &[(usize, usize, usize)]) -> Option<(usize, usize)> {
    if subject.is_empty() {
        return None;
    }
    caption.match_indices(subject).map(|(s, _)| (s, s + subject.len())).find(|&(s, e)| {
        !is_word_char(caption[..s].chars().next_back())
            && !is_word_char(caption[e..].chars().next())
            && !overlaps(claims, s, e)
    })
}

fn absorb_count(caption: &str, start: usize, count: usize, claims: &[(usize, usize, usize)]) -> usize {
    if count < 2 {
        return start;
    }
    let prefix = format!("{count} ");
    if !caption[..start].ends_with(&prefix) {
        return start;
    }
    let s = start - prefix.len();
    if is_word_char(caption[..s].chars().next_back()) || overlaps(claims, s, start) {
        return start;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let json = r#"{"caption":"The cat plays with the yarn ball.","instances":[
            {"subject":"cat","boxes":[[0.1,0.2,0.3,0.4]],"source_image":1},
            {"subject":"yarn ball","boxes":[[0.5,0.6,0.7,0.8]],"source_image":null}]}"#;
        let layout: LayoutJson = serde_json::from_str(json).unwrap();
        let p = LayoutPrompt::from_layout(&layout).unwrap();
        assert_eq!(
            p.serialize(),
            "The cat<bbox>[0.1,0.2,0.3,0.4]</bbox> from image1 plays with the yarn ball <bbox>[0.5,0.6,0.7,0.8]</bbox>."
        );
        assert_eq!(p.to_layout(), layout);
        let v: serde_json::Value = serde_json::to_value(&layout).unwrap();
        assert_eq!(v["instances"][0]["boxes"][0][3], 0.4);
        assert!(v["instances"][1]["source_image"].is_null());
    }

    #[test]
    fn count_prefix_is_absorbed_or_added() {
        let boxes = vec![BBox::new(0.1, 0.1, 0.2, 0.2).unwrap(), BBox::new(0.3, 0.3, 0.4, 0.4).unwrap()];
        let with = LayoutJson {
            caption: "2 dogs run.".into(),
            instances: vec![InstanceJson { subject: "dogs".into(), boxes: boxes.clone(), source_image: None }],
        };
        let p = LayoutPrompt::from_layout(&with).unwrap();
        assert!(p.serialize().starts_with("2 dogs <bbox>"));
        assert_eq!(p.to_layout(), with);

        let without = LayoutJson { caption: "Some dogs run.".into(), ..with };
        let p = LayoutPrompt::from_layout(&without).unwrap();
        assert!(p.serialize().starts_with("Some 2 dogs <bbox>"));
    }

    #[test]
    fn repeated_subjects_claim_successive_mentions() {
        let b = |x: f64| vec![BBox::new(x, 0.1, x + 0.1, 0.2).unwrap()];
        let layout = LayoutJson {
            caption: "a cat and a cat".into(),
            instances: vec![
                InstanceJson { subject: "cat".into(), boxes: b(0.1), source_image: None },
                InstanceJson { subject: "cat".into(), boxes: b(0.5), source_image: None },
            ],
        };
        let p = LayoutPrompt::from_layout(&layout).unwrap();
        assert_eq!(
            p.serialize(),
            "a cat <bbox>[0.1,0.1,0.2,0.2]</bbox> and a cat <bbox>[0.5,0.1,0.6,0.2]</bbox>"
        );
    }

    #[test]
    fn missing_subject() {
        let layout = LayoutJson {
            caption: "a catalog".into(),
            instances: vec![InstanceJson {
                subject: "cat".into(),
                boxes: vec![BBox::unit()],
                source_image: None,
            }],
        };
        assert_eq!(
            LayoutPrompt::from_layout(&layout),
            Err(IcbpError::SubjectNotFound("cat".into()))
        );
    }
}
