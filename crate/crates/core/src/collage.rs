//! Distance-ranked collage: segmented objects are pasted into fixed slots of
//! a canvas, the closest object into the largest slot.
//!
//! Default geometry on the 512x512 canvas (x, y, w, h):
//!
//! | slot | rect |
//! |------|------|
//! | 0 | (0, 0, 256, 256) |
//! | 1, 2 | (256, 0, 128, 128), (384, 0, 128, 128) |
//! | 3, 4 | (256, 128, 128, 128), (384, 128, 128, 128) |
//! | 5..=9 | bottom strip at y = 256, height 256, widths 103, 103, 102, 102, 102 |

use thiserror::Error;

use crate::geometry::BoundingBox;
use crate::metrics::Mask;
use crate::pnm::RgbImage;

pub const CANVAS_SIZE: u32 = 512;
pub const SLOT_COUNT: usize = 10;
pub const SKY_BLUE: [u8; 3] = [135, 206, 235];

#[derive(Debug, Error, PartialEq)]
pub enum CollageError {
    #[error("{items} items but only {slots} slots")]
    TooManyItems { items: usize, slots: usize },
    #[error("invalid collage layout: {0}")]
    BadSpec(String),
    #[error("mask is {0}x{1} but the region is {2}x{3}")]
    MaskSize(u32, u32, u32, u32),
    #[error("distance {0} is not a finite non-negative number")]
    BadDistance(f64),
    #[error("assignment does not match the items or slots")]
    BadAssignment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollageSpec {
    width: u32,
    height: u32,
    slots: Vec<BoundingBox>,
    background: [u8; 3],
}

impl Default for CollageSpec {
    fn default() -> Self {
        Self::standard(SKY_BLUE)
    }
}

impl CollageSpec {
    /// The 512x512, ten-slot layout with the given background.
    pub fn standard(background: [u8; 3]) -> Self {
        let r = |x, y, w, h| BoundingBox::new(x, y, w, h).expect("static slot sizes are positive");
        let mut slots = vec![
            r(0, 0, 256, 256),
            r(256, 0, 128, 128),
            r(384, 0, 128, 128),
            r(256, 128, 128, 128),
            r(384, 128, 128, 128),
        ];
        let mut x = 0;
        for w in [103u32, 103, 102, 102, 102] {
            slots.push(r(x, 256, w, 256));
            x += w as i32;
        }
        Self {
            width: CANVAS_SIZE,
            height: CANVAS_SIZE,
            slots,
            background,
        }
    }

    /// Custom layout: slots must be disjoint, inside the canvas, and slot 0
    /// strictly larger than every other slot.
    pub fn new(
        width: u32,
        height: u32,
        slots: Vec<BoundingBox>,
        background: [u8; 3],
    ) -> Result<Self, CollageError> {
        if width == 0 || height == 0 || slots.is_empty() {
            return Err(CollageError::BadSpec("empty canvas or no slots".into()));
        }
        for (i, s) in slots.iter().enumerate() {
            if s.x() < 0 || s.y() < 0 || s.right() > width as i64 || s.bottom() > height as i64 {
                return Err(CollageError::BadSpec(format!("slot {i} leaves the canvas")));
            }
            if i > 0 && s.area() >= slots[0].area() {
                return Err(CollageError::BadSpec(format!(
                    "slot {i} is not smaller than slot 0"
                )));
            }
            if let Some(j) = (0..i).find(|&j| slots[j].intersection_area(s) > 0) {
                return Err(CollageError::BadSpec(format!("slots {j} and {i} overlap")));
            }
        }
        Ok(Self {
            width,
            height,
            slots,
            background,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn slots(&self) -> &[BoundingBox] {
        &self.slots
    }

    pub fn background(&self) -> [u8; 3] {
        self.background
    }
}

/// Parses `r,g,b` with components in 0..=255.
pub fn parse_color(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected `r,g,b`, got `{s}`"));
    }
    let mut out = [0u8; 3];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse()
            .map_err(|e| format!("colour component `{p}`: {e}"))?;
    }
    Ok(out)
}

/// A segmented object and its embedding distance to the collage anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct CollageItem {
    region: RgbImage,
    mask: Mask,
    distance: f64,
}

impl CollageItem {
    pub fn new(region: RgbImage, mask: Mask, distance: f64) -> Result<Self, CollageError> {
        if mask.width() != region.width() || mask.height() != region.height() {
            return Err(CollageError::MaskSize(
                mask.width(),
                mask.height(),
                region.width(),
                region.height(),
            ));
        }
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(CollageError::BadDistance(distance));
        }
        Ok(Self {
            region,
            mask,
            distance,
        })
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub item: usize,
    pub slot: usize,
}

/// Item-to-slot mapping, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub placements: Vec<Placement>,
}

/// Ranks items by ascending distance (ties keep input order) and gives rank
/// `r` slot `r`.
pub fn layout(items: &[CollageItem], spec: &CollageSpec) -> Result<Assignment, CollageError> {
    if items.len() > spec.slots.len() {
        return Err(CollageError::TooManyItems {
            items: items.len(),
            slots: spec.slots.len(),
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].distance.total_cmp(&items[b].distance));
    Ok(Assignment {
        placements: order
            .into_iter()
            .enumerate()
            .map(|(slot, item)| Placement { item, slot })
            .collect(),
    })
}

/// Paints the background, then every placed item stretched into its slot
/// with nearest-neighbour sampling. Only mask foreground is copied.
pub fn compose(
    items: &[CollageItem],
    assignment: &Assignment,
    spec: &CollageSpec,
) -> Result<RgbImage, CollageError> {
    let mut canvas = RgbImage::new(spec.width, spec.height, spec.background);
    for p in &assignment.placements {
        let item = items.get(p.item).ok_or(CollageError::BadAssignment)?;
        let slot = spec.slots.get(p.slot).ok_or(CollageError::BadAssignment)?;
        let (sw, sh) = (slot.width() as u64, slot.height() as u64);
        let (w, h) = (item.region.width() as u64, item.region.height() as u64);
        for dy in 0..sh {
            let sy = (((2 * dy + 1) * h) / (2 * sh)) as u32;
            for dx in 0..sw {
                let sx = (((2 * dx + 1) * w) / (2 * sw)) as u32;
                if item.mask.get(sx, sy) {
                    canvas.put(
                        slot.x() as u32 + dx as u32,
                        slot.y() as u32 + dy as u32,
                        item.region.get(sx, sy),
                    );
                }
            }
        }
    }
    Ok(canvas)
}
