//! Integer rectangles, IOU and scale+translate coordinate transforms.
//!
//! Rectangles are half-open: a rect covers pixels `[left, right) x [top, bottom)`,
//! so `area = (right - left) * (bottom - top)` and adjacent tiles never share a
//! pixel column.

use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate rect ({left}, {top}, {right}, {bottom})")]
    Degenerate {
        left: i64,
        top: i64,
        right: i64,
        bottom: i64,
    },
    #[error("rect has negative coordinates ({left}, {top}, {right}, {bottom})")]
    Negative {
        left: i64,
        top: i64,
        right: i64,
        bottom: i64,
    },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("transform scale must be strictly positive")]
    NonPositiveScale,
}

/// Axis-aligned, non-degenerate integer pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawRect", into = "RawRect")]
pub struct Rect {
    left: u32,
    top: u32,
    right: u32,
    bottom: u32,
}

#[derive(Serialize, Deserialize)]
struct RawRect {
    left: i64,
    top: i64,
    right: i64,
    bottom: i64,
}

impl TryFrom<RawRect> for Rect {
    type Error = GeometryError;
    fn try_from(r: RawRect) -> Result<Self, Self::Error> {
        Rect::from_i64(r.left, r.top, r.right, r.bottom)
    }
}

impl From<Rect> for RawRect {
    fn from(r: Rect) -> Self {
        RawRect {
            left: r.left as i64,
            top: r.top as i64,
            right: r.right as i64,
            bottom: r.bottom as i64,
        }
    }
}

impl Rect {
    pub fn new(left: u32, top: u32, right: u32, bottom: u32) -> Result<Self, GeometryError> {
        if left >= right || top >= bottom {
            return Err(GeometryError::Degenerate {
                left: left as i64,
                top: top as i64,
                right: right as i64,
                bottom: bottom as i64,
            });
        }
        Ok(Rect {
            left,
            top,
            right,
            bottom,
        })
    }

    /// Validating constructor for signed inputs (parsers, transforms).
    pub fn from_i64(left: i64, top: i64, right: i64, bottom: i64) -> Result<Self, GeometryError> {
        if left < 0 || top < 0 || right < 0 || bottom < 0 {
            return Err(GeometryError::Negative {
                left,
                top,
                right,
                bottom,
            });
        }
        if left >= right || top >= bottom || right > u32::MAX as i64 || bottom > u32::MAX as i64 {
            return Err(GeometryError::Degenerate {
                left,
                top,
                right,
                bottom,
            });
        }
        Ok(Rect {
            left: left as u32,
            top: top as u32,
            right: right as u32,
            bottom: bottom as u32,
        })
    }

    pub fn from_xywh(x: u32, y: u32, width: u32, height: u32) -> Result<Self, GeometryError> {
        Rect::new(x, y, x.saturating_add(width), y.saturating_add(height))
    }

    #[inline]
    pub const fn left(&self) -> u32 {
        self.left
    }
    #[inline]
    pub const fn top(&self) -> u32 {
        self.top
    }
    #[inline]
    pub const fn right(&self) -> u32 {
        self.right
    }
    #[inline]
    pub const fn bottom(&self) -> u32 {
        self.bottom
    }
    #[inline]
    pub const fn width(&self) -> u32 {
        // constructors guarantee right > left
        self.right.wrapping_sub(self.left)
    }
    #[inline]
    pub const fn height(&self) -> u32 {
        self.bottom.wrapping_sub(self.top)
    }
    #[inline]
    pub const fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    /// Width over height.
    pub fn aspect_ratio(&self) -> f64 {
        self.width() as f64 / self.height() as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.left as f64 + self.right as f64) / 2.0,
            (self.top as f64 + self.bottom as f64) / 2.0,
        )
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.left && x < self.right && y >= self.top && y < self.bottom
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.left >= self.left
            && other.right <= self.right
            && other.top >= self.top
            && other.bottom <= self.bottom
    }

    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right.min(other.right);
        let bottom = self.bottom.min(other.bottom);
        (left < right && top < bottom).then_some(Rect {
            left,
            top,
            right,
            bottom,
        })
    }

    #[inline]
    pub fn intersection_area(&self, other: &Rect) -> u64 {
        let w = self
            .right
            .min(other.right)
            .saturating_sub(self.left.max(other.left));
        let h = self
            .bottom
            .min(other.bottom)
            .saturating_sub(self.top.max(other.top));
        w as u64 * h as u64
    }

    /// Smallest rect containing both.
    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            left: self.left.min(other.left),
            top: self.top.min(other.top),
            right: self.right.max(other.right),
            bottom: self.bottom.max(other.bottom),
        }
    }

    pub fn union_all<'a, I: IntoIterator<Item = &'a Rect>>(rects: I) -> Option<Rect> {
        rects.into_iter().fold(None, |acc: Option<Rect>, r| {
            Some(acc.map_or(*r, |a| a.union(r)))
        })
    }

    /// Grow by `margin` on every side, saturating at zero.
    pub fn expand(&self, margin: u32) -> Rect {
        Rect {
            left: self.left.saturating_sub(margin),
            top: self.top.saturating_sub(margin),
            right: self.right.saturating_add(margin),
            bottom: self.bottom.saturating_add(margin),
        }
    }

    pub fn translate(&self, dx: i64, dy: i64) -> Result<Rect, GeometryError> {
        Rect::from_i64(
            self.left as i64 + dx,
            self.top as i64 + dy,
            self.right as i64 + dx,
            self.bottom as i64 + dy,
        )
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.left, self.top, self.right, self.bottom
        )
    }
}

/// Exact IOU as `(intersection area, union area)`.
#[inline]
pub fn iou_parts(a: &Rect, b: &Rect) -> (u64, u64) {
    let inter = a.intersection_area(b);
    (inter, a.area() + b.area() - inter)
}

/// Intersection over union; 0 for disjoint rects.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let (inter, union) = iou_parts(a, b);
    inter as f64 / union as f64
}

pub fn aspect_ratio(r: &Rect) -> f64 {
    r.aspect_ratio()
}

/// A rect with a detection confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredRect {
    pub rect: Rect,
    confidence: f64,
}

impl ScoredRect {
    pub fn new(rect: Rect, confidence: f64) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(GeometryError::Confidence(confidence));
        }
        Ok(ScoredRect { rect, confidence })
    }

    #[inline]
    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn with_rect(&self, rect: Rect) -> ScoredRect {
        ScoredRect {
            rect,
            confidence: self.confidence,
        }
    }
}

/// Per-axis map `x' = scale * x + offset`, in exact rational arithmetic.
///
/// Applying to a rect rounds `left`/`top` down and `right`/`bottom` up, so the
/// image of a rect always covers every pixel the exact image touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Transform {
    scale_x: Ratio<i64>,
    scale_y: Ratio<i64>,
    offset_x: Ratio<i64>,
    offset_y: Ratio<i64>,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            scale_x: Ratio::from_integer(1),
            scale_y: Ratio::from_integer(1),
            offset_x: Ratio::from_integer(0),
            offset_y: Ratio::from_integer(0),
        }
    }

    pub fn new(
        scale_x: Ratio<i64>,
        scale_y: Ratio<i64>,
        offset_x: i64,
        offset_y: i64,
    ) -> Result<Self, GeometryError> {
        Transform::with_rational_offsets(
            scale_x,
            scale_y,
            Ratio::from_integer(offset_x),
            Ratio::from_integer(offset_y),
        )
    }

    pub fn with_rational_offsets(
        scale_x: Ratio<i64>,
        scale_y: Ratio<i64>,
        offset_x: Ratio<i64>,
        offset_y: Ratio<i64>,
    ) -> Result<Self, GeometryError> {
        if *scale_x.numer() <= 0 || *scale_y.numer() <= 0 {
            return Err(GeometryError::NonPositiveScale);
        }
        Ok(Transform {
            scale_x,
            scale_y,
            offset_x,
            offset_y,
        })
    }

    pub fn scale(num: i64, den: i64) -> Result<Self, GeometryError> {
        if den <= 0 {
            return Err(GeometryError::NonPositiveScale);
        }
        let s = Ratio::new(num, den);
        Transform::new(s, s, 0, 0)
    }

    pub fn translation(dx: i64, dy: i64) -> Self {
        Transform {
            offset_x: Ratio::from_integer(dx),
            offset_y: Ratio::from_integer(dy),
            ..Transform::identity()
        }
    }

    pub fn scale_x(&self) -> Ratio<i64> {
        self.scale_x
    }
    pub fn scale_y(&self) -> Ratio<i64> {
        self.scale_y
    }
    pub fn offset_x(&self) -> Ratio<i64> {
        self.offset_x
    }
    pub fn offset_y(&self) -> Ratio<i64> {
        self.offset_y
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Transform) -> Transform {
        Transform {
            scale_x: self.scale_x * first.scale_x,
            scale_y: self.scale_y * first.scale_y,
            offset_x: self.scale_x * first.offset_x + self.offset_x,
            offset_y: self.scale_y * first.offset_y + self.offset_y,
        }
    }

    pub fn inverse(&self) -> Transform {
        let sx = self.scale_x.recip();
        let sy = self.scale_y.recip();
        Transform {
            scale_x: sx,
            scale_y: sy,
            offset_x: -self.offset_x * sx,
            offset_y: -self.offset_y * sy,
        }
    }

    fn map_x(&self, x: u32) -> Ratio<i64> {
        self.scale_x * Ratio::from_integer(x as i64) + self.offset_x
    }

    fn map_y(&self, y: u32) -> Ratio<i64> {
        self.scale_y * Ratio::from_integer(y as i64) + self.offset_y
    }

    /// Maps `r` with outward rounding. Fails if the image is negative or has
    /// zero area.
    pub fn apply(&self, r: &Rect) -> Result<Rect, GeometryError> {
        let left = self.map_x(r.left).floor().to_integer();
        let top = self.map_y(r.top).floor().to_integer();
        let right = self.map_x(r.right).ceil().to_integer();
        let bottom = self.map_y(r.bottom).ceil().to_integer();
        Rect::from_i64(left, top, right, bottom)
    }

    /// True when every corner of `r` maps onto an integer coordinate.
    pub fn maps_exactly(&self, r: &Rect) -> bool {
        self.map_x(r.left).is_integer()
            && self.map_x(r.right).is_integer()
            && self.map_y(r.top).is_integer()
            && self.map_y(r.bottom).is_integer()
    }
}

impl Default for Transform {
    fn default() -> Self {
        Transform::identity()
    }
}

pub fn apply_transform(t: &Transform, r: &Rect) -> Result<Rect, GeometryError> {
    t.apply(r)
}

pub fn inverse_transform(t: &Transform) -> Transform {
    t.inverse()
}
