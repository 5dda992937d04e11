use super::{BBox, IcbpError, InstanceTag, LayoutPrompt, Span};

const OPEN: &str = "<bbox>";
const CLOSE: &str = "</bbox>";

/// Words that end a subject phrase when scanning backwards from a tag.
const BOUNDARY_WORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "his", "her", "its", "their", "my",
    "your", "our", "some", "and", "or", "but", "with", "of", "in", "on", "at", "to", "from",
    "by", "for", "near", "under", "over", "behind", "beside", "between", "into", "onto",
    "above", "below", "beneath", "next", "is", "are", "was", "were", "be", "has", "have",
    "there", "while", "as", "also", "which", "who", "wears", "holds", "carries", "plays",
    "play", "sits", "stands", "lies", "chase", "chases", "featuring", "displaying",
];

/// Parses prompt text into plain spans and instance tags.
///
/// Accepts whitespace inside brackets, untrimmed decimals, either adjacency
/// between subject and tag, and both `from imageN` and `from image N`.
pub fn parse_prompt(text: &str) -> Result<LayoutPrompt, IcbpError> {
    let mut spans = Vec::new();
    let mut plain_start = 0;

    while let Some(rel) = text[plain_start..].find(OPEN) {
        let tag_start = plain_start + rel;
        let before = &text[plain_start..tag_start];
        reject_stray_close(before, plain_start)?;
        let (plain_len, subject, count) = split_subject(before, tag_start)?;

        let mut boxes = Vec::new();
        let mut cursor = tag_start;
        loop {
            let (b, end) = parse_box(text, cursor)?;
            boxes.push(b);
            match continuation(text, end) {
                Some(next) => cursor = next,
                None => {
                    cursor = end;
                    break;
                }
            }
        }
        let (source_image, end) = source_suffix(text, cursor);

        if plain_len > 0 {
            spans.push(Span::Plain(before[..plain_len].to_string()));
        }
        spans.push(Span::Tagged(InstanceTag {
            subject,
            count,
            boxes,
            source_image,
        }));
        plain_start = end;
    }

    let rest = &text[plain_start..];
    reject_stray_close(rest, plain_start)?;
    if !rest.is_empty() {
        spans.push(Span::Plain(rest.to_string()));
    }
    Ok(LayoutPrompt { spans })
}

fn reject_stray_close(segment: &str, base: usize) -> Result<(), IcbpError> {
    match segment.find(CLOSE) {
        Some(i) => Err(IcbpError::MalformedTag {
            offset: base + i,
            reason: "closing tag without opening <bbox>".into(),
        }),
        None => Ok(()),
    }
}

fn is_boundary_word(word: &str) -> bool {
    let lower = word.to_ascii_lowercase();
    BOUNDARY_WORDS.contains(&lower.as_str())
        || word.chars().all(|c| c.is_ascii_digit())
        || word.ends_with([',', '.', ';', ':', '!', '?', ')', '"'])
}

/// Splits the text preceding a tag into (plain prefix length, subject, count).
fn split_subject(before: &str, tag_start: usize) -> Result<(usize, String, u32), IcbpError> {
    let core = before.trim_end();
    if core.is_empty() {
        return Err(IcbpError::MalformedTag {
            offset: tag_start,
            reason: "tag without a subject phrase".into(),
        });
    }

    // (start, end) byte ranges of whitespace-separated words in `core`
    let mut words = Vec::new();
    let mut start = None;
    for (i, c) in core.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                words.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        words.push((s, core.len()));
    }

    let mut first = words.len() - 1;
    while first > 0 {
        let (s, e) = words[first - 1];
        if is_boundary_word(&core[s..e]) {
            break;
        }
        first -= 1;
    }
    let subject_start = words[first].0;
    let subject = core[subject_start..].to_string();

    if first > 0 {
        let (s, e) = words[first - 1];
        let word = &core[s..e];
        let single_space = &core[e..subject_start] == " ";
        if single_space && !word.starts_with('0') && word.chars().all(|c| c.is_ascii_digit()) {
            if let Ok(n) = word.parse::<u32>() {
                if n >= 2 {
                    return Ok((s, subject, n));
                }
            }
        }
    }
    Ok((subject_start, subject, 1))
}

fn skip_ws(text: &str, mut i: usize) -> usize {
    while let Some(c) = text[i..].chars().next() {
        if !c.is_whitespace() {
            break;
        }
        i += c.len_utf8();
    }
    i
}

/// Parses one `<bbox>[a,b,c,d]</bbox>` starting at `at`; returns the box and
/// the byte offset just past the closing tag.
fn parse_box(text: &str, at: usize) -> Result<(BBox, usize), IcbpError> {
    let malformed = |offset: usize, reason: &str| IcbpError::MalformedTag {
        offset,
        reason: reason.to_string(),
    };
    debug_assert!(text[at..].starts_with(OPEN));
    let mut i = skip_ws(text, at + OPEN.len());
    if !text[i..].starts_with('[') {
        return Err(malformed(i, "expected '[' after <bbox>"));
    }
    i += 1;
    let body_start = i;
    let close_bracket = match text[body_start..].find(']') {
        Some(rel) => body_start + rel,
        None => return Err(malformed(at, "unclosed <bbox>")),
    };
    let body = &text[body_start..close_bracket];
    if let Some(rel) = body.find('<') {
        return Err(malformed(body_start + rel, "unclosed <bbox>"));
    }

    let mut coords = [0.0f64; 4];
    let mut n = 0;
    let mut field_start = body_start;
    for field in body.split(',') {
        let trimmed = field.trim();
        let offset = field_start + (field.len() - field.trim_start().len());
        field_start += field.len() + 1;
        if n == 4 {
            return Err(malformed(offset, "expected exactly 4 coordinates"));
        }
        let numeric = !trimmed.is_empty()
            && trimmed.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '+' | '-'));
        let value = match trimmed.parse::<f64>() {
            Ok(v) if numeric => v,
            _ => return Err(malformed(offset, &format!("non-numeric coordinate {trimmed:?}"))),
        };
        coords[n] = value;
        n += 1;
    }
    if n != 4 {
        return Err(malformed(body_start, "expected exactly 4 coordinates"));
    }

    i = skip_ws(text, close_bracket + 1);
    if !text[i..].starts_with(CLOSE) {
        return Err(malformed(at, "unclosed <bbox>"));
    }
    let end = i + CLOSE.len();

    let raw = BBox::from(coords);
    let b = match BBox::new(raw.x1, raw.y1, raw.x2, raw.y2) {
        Ok(b) => b,
        Err(IcbpError::DegenerateBox { bbox, .. }) => {
            return Err(IcbpError::DegenerateBox { bbox, offset: Some(at) })
        }
        Err(_) => return Err(IcbpError::OutOfRange { bbox: raw, offset: Some(at) }),
    };
    Ok((b, end))
}

/// Offset of the next `<bbox>` if it continues the current box list (`, <bbox>`).
fn continuation(text: &str, end: usize) -> Option<usize> {
    let i = skip_ws(text, end);
    if !text[i..].starts_with(',') {
        return None;
    }
    let j = skip_ws(text, i + 1);
    text[j..].starts_with(OPEN).then_some(j)
}

/// Reads a trailing ` from imageN` / ` from image N` reference.
fn source_suffix(text: &str, end: usize) -> (Option<u32>, usize) {
    let i = skip_ws(text, end);
    if i == end || !text[i..].starts_with("from") {
        return (None, end);
    }
    let j = skip_ws(text, i + "from".len());
    if j == i + "from".len() || !text[j..].starts_with("image") {
        return (None, end);
    }
    let k = skip_ws(text, j + "image".len());
    let digits = text[k..].chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return (None, end);
    }
    match text[k..k + digits].parse::<u32>() {
        Ok(n) => (Some(n), k + digits),
        Err(_) => (None, end),
    }
}
