use serde::{Deserialize, Serialize};
use std::fmt;

use super::IcbpError;

/// Normalized axis-aligned box with top-left `(x1, y1)` and bottom-right `(x2, y2)` corners.
///
/// Fields are public so that layouts read from untrusted sources can be held
/// and reported on by [`validate`](super::validate); use [`BBox::new`] to build
/// a box that is known to satisfy the invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Why a box fails the invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxFault {
    NonFinite,
    OutOfRange,
    Unordered,
    Degenerate,
}

impl From<[f64; 4]> for BBox {
    fn from(c: [f64; 4]) -> Self {
        BBox { x1: c[0], y1: c[1], x2: c[2], y2: c[3] }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.coords()
    }
}

impl BBox {
    /// Rounds every coordinate to three decimals and checks the invariants.
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, IcbpError> {
        let b = BBox { x1, y1, x2, y2 }.rounded();
        match b.fault() {
            None => Ok(b),
            Some(BoxFault::Degenerate) => Err(IcbpError::DegenerateBox { bbox: b, offset: None }),
            Some(_) => Err(IcbpError::OutOfRange { bbox: b, offset: None }),
        }
    }

    pub const fn unit() -> Self {
        BBox { x1: 0.0, y1: 0.0, x2: 1.0, y2: 1.0 }
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn rounded(&self) -> Self {
        BBox {
            x1: round3(self.x1),
            y1: round3(self.y1),
            x2: round3(self.x2),
            y2: round3(self.y2),
        }
    }

    /// First invariant the box violates, if any. Equal corners are reported
    /// as [`BoxFault::Degenerate`]; reversed corners as [`BoxFault::Unordered`].
    pub fn fault(&self) -> Option<BoxFault> {
        let c = self.coords();
        if c.iter().any(|v| !v.is_finite()) {
            return Some(BoxFault::NonFinite);
        }
        if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Some(BoxFault::OutOfRange);
        }
        if self.x1 > self.x2 || self.y1 > self.y2 {
            return Some(BoxFault::Unordered);
        }
        if self.x1 == self.x2 || self.y1 == self.y2 {
            return Some(BoxFault::Degenerate);
        }
        None
    }

    pub fn is_valid(&self) -> bool {
        self.fault().is_none()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{},{},{},{}]",
            format_coord(self.x1),
            format_coord(self.y1),
            format_coord(self.x2),
            format_coord(self.y2)
        )
    }
}

/// Coordinate in thousandths, rounded half-up.
///
/// Values within 1e-9 of a half-thousandth are treated as lying on it, so
/// that decimals such as `0.1235` (stored as `0.12349999…`) round up as they
/// read.
pub fn to_millis(v: f64) -> i64 {
    (v * 1000.0 + 0.5 + 1e-9).floor() as i64
}

pub fn round3(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    to_millis(v) as f64 / 1000.0
}

/// Three-decimal rendering with trailing zeros trimmed: `0.2`, `0.326`, `1`, `0`.
pub fn format_coord(v: f64) -> String {
    let m = to_millis(v);
    let sign = if m < 0 { "-" } else { "" };
    let m = m.unsigned_abs();
    let (int, frac) = (m / 1000, m % 1000);
    if frac == 0 {
        return format!("{sign}{int}");
    }
    let digits = format!("{frac:03}");
    format!("{sign}{int}.{}", digits.trim_end_matches('0'))
}

/// Converts a pixel-space box to normalized coordinates.
pub fn normalize_box(pixel_box: [u32; 4], width: u32, height: u32) -> Result<BBox, IcbpError> {
    let [x1, y1, x2, y2] = pixel_box;
    if width == 0 || height == 0 {
        return Err(IcbpError::InvalidImageSize { width, height });
    }
    let raw = BBox {
        x1: f64::from(x1) / f64::from(width),
        y1: f64::from(y1) / f64::from(height),
        x2: f64::from(x2) / f64::from(width),
        y2: f64::from(y2) / f64::from(height),
    };
    if x1 > x2 || y1 > y2 || x2 > width || y2 > height {
        return Err(IcbpError::OutOfRange { bbox: raw, offset: None });
    }
    BBox::new(raw.x1, raw.y1, raw.x2, raw.y2)
}

/// Canonical `<bbox>[a,b,c,d]</bbox>` tag.
pub fn format_box(b: &BBox) -> String {
    format!("<bbox>{b}</bbox>")
}
