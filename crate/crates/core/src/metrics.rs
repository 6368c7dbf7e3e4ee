//! Pixel precision and Jaccard similarity of binary segmentation masks, and
//! per-class / dataset averaging.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoundingBox;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(u32, u32, u32, u32),
    #[error("mask of {width}x{height} needs {expected} bits, got {got}")]
    BitCount {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("mask dimensions must be positive")]
    EmptyDimensions,
}

/// Row-major binary grid, `true` marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MetricsError> {
        if width == 0 || height == 0 {
            return Err(MetricsError::EmptyDimensions);
        }
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(MetricsError::BitCount {
                width,
                height,
                expected,
                got: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self, MetricsError> {
        Self::new(width, height, vec![value; width as usize * height as usize])
    }

    /// A `width x height` mask whose foreground is the part of `bbox` inside it.
    pub fn from_box(width: u32, height: u32, bbox: &BoundingBox) -> Result<Self, MetricsError> {
        let mut m = Self::filled(width, height, false)?;
        if let Some(c) = bbox.clip_to(width, height) {
            for y in c.y() as u32..c.y() as u32 + c.height() {
                for x in c.x() as u32..c.x() as u32 + c.width() {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn transpose(&self) -> Mask {
        let mut bits = Vec::with_capacity(self.bits.len());
        for x in 0..self.width {
            for y in 0..self.height {
                bits.push(self.get(x, y));
            }
        }
        Mask {
            width: self.height,
            height: self.width,
            bits,
        }
    }

    /// Sub-mask covered by `bbox`, clipped to this mask. `None` when the box
    /// lies outside.
    pub fn crop(&self, bbox: &BoundingBox) -> Option<Mask> {
        let c = bbox.clip_to(self.width, self.height)?;
        let (x0, y0) = (c.x() as u32, c.y() as u32);
        let mut bits = Vec::with_capacity(c.area() as usize);
        for y in y0..y0 + c.height() {
            for x in x0..x0 + c.width() {
                bits.push(self.get(x, y));
            }
        }
        Some(Mask {
            width: c.width(),
            height: c.height(),
            bits,
        })
    }

    fn overlap_counts(&self, other: &Mask) -> Result<(usize, usize), MetricsError> {
        if self.width != other.width || self.height != other.height {
            return Err(MetricsError::SizeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        let mut inter = 0;
        let mut union = 0;
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        Ok((inter, union))
    }
}

/// Fraction of segmented pixels that are ground-truth foreground,
/// `|seg ∩ gt| / |seg|`. An empty segmentation scores 0.
pub fn precision(seg: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    let (inter, _) = seg.overlap_counts(gt)?;
    let n = seg.count();
    Ok(if n == 0 { 0.0 } else { inter as f64 / n as f64 })
}

/// `|seg ∩ gt| / |seg ∪ gt|`; two empty masks score 1.
pub fn jaccard(seg: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    let (inter, union) = seg.overlap_counts(gt)?;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub jaccard: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemIssue {
    pub item: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<String, ClassScore>,
    /// Unweighted mean over the classes in `per_class` (0 when there are none).
    pub avg_precision: f64,
    pub avg_jaccard: f64,
    pub items_scored: usize,
    /// Items whose segmentation was empty (precision taken as 0).
    pub empty_segmentations: Vec<String>,
    /// Items that could not be scored; excluded from the averages.
    pub excluded: Vec<ItemIssue>,
}

/// Scores each item's segmentation against its ground truth, averages per
/// class, then takes the unweighted mean over classes.
pub fn evaluate<'a, I>(
    items: I,
    masks: &HashMap<String, Mask>,
    gt_masks: &HashMap<String, Mask>,
    class_map: &HashMap<String, String>,
) -> MetricsReport
where
    I: IntoIterator<Item = &'a str>,
{
    let mut sums: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
    let mut empty_segmentations = Vec::new();
    let mut excluded = Vec::new();
    let mut items_scored = 0;
    for item in items {
        let issue = |reason: &str| ItemIssue {
            item: item.to_string(),
            reason: reason.to_string(),
        };
        let (Some(seg), Some(gt), Some(class)) =
            (masks.get(item), gt_masks.get(item), class_map.get(item))
        else {
            let reason = if !masks.contains_key(item) {
                "missing segmentation mask"
            } else if !gt_masks.contains_key(item) {
                "missing ground-truth mask"
            } else {
                "missing class"
            };
            excluded.push(issue(reason));
            continue;
        };
        let (p, j) = match (precision(seg, gt), jaccard(seg, gt)) {
            (Ok(p), Ok(j)) => (p, j),
            (Err(e), _) | (_, Err(e)) => {
                excluded.push(issue(&e.to_string()));
                continue;
            }
        };
        if seg.count() == 0 {
            empty_segmentations.push(item.to_string());
        }
        let e = sums.entry(class.clone()).or_insert((0.0, 0.0, 0));
        e.0 += p;
        e.1 += j;
        e.2 += 1;
        items_scored += 1;
    }
    let per_class: BTreeMap<String, ClassScore> = sums
        .into_iter()
        .map(|(c, (p, j, n))| {
            (
                c,
                ClassScore {
                    precision: p / n as f64,
                    jaccard: j / n as f64,
                    count: n,
                },
            )
        })
        .collect();
    let n = per_class.len();
    let (avg_precision, avg_jaccard) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            per_class.values().map(|s| s.precision).sum::<f64>() / n as f64,
            per_class.values().map(|s| s.jaccard).sum::<f64>() / n as f64,
        )
    };
    MetricsReport {
        per_class,
        avg_precision,
        avg_jaccard,
        items_scored,
        empty_segmentations,
        excluded,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        let bits = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        Mask::new(w, h, bits).unwrap()
    }

    #[test]
    fn precision_examples() {
        let a = mask_from(&["##..", "##..", "...."]);
        assert_eq!(precision(&a, &a).unwrap(), 1.0);
        let far = mask_from(&["....", "....", "..##"]);
        assert_eq!(precision(&a, &far).unwrap(), 0.0);
        // 4-pixel block, ground truth covers 3 of them
        let gt = mask_from(&["##..", "#...", "...."]);
        assert_eq!(precision(&a, &gt).unwrap(), 0.75);
        let empty = Mask::filled(4, 3, false).unwrap();
        assert_eq!(precision(&empty, &gt).unwrap(), 0.0);
    }

    #[test]
    fn jaccard_examples() {
        let a = mask_from(&["##..", "##.."]);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let b = mask_from(&["...#", "...#"]);
        assert_eq!(jaccard(&a, &b).unwrap(), 0.0);
        let empty = Mask::filled(4, 2, false).unwrap();
        assert_eq!(jaccard(&empty, &empty).unwrap(), 1.0);

        // |seg| = |gt| = 100 with 50 shared pixels: 50 / 150
        let seg = Mask::new(10, 15, (0..150).map(|i| i < 100).collect()).unwrap();
        let gt = Mask::new(10, 15, (0..150).map(|i| i >= 50).collect()).unwrap();
        assert_eq!(jaccard(&seg, &gt).unwrap(), 50.0 / 150.0);
    }

    #[test]
    fn precision_is_asymmetric() {
        let small = mask_from(&["#...", "...."]);
        let big = mask_from(&["####", "####"]);
        assert_eq!(precision(&small, &big).unwrap(), 1.0);
        assert_eq!(precision(&big, &small).unwrap(), 0.125);
        assert_eq!(
            jaccard(&small, &big).unwrap(),
            jaccard(&big, &small).unwrap()
        );
    }

    #[test]
    fn size_mismatch() {
        let a = Mask::filled(2, 2, true).unwrap();
        let b = Mask::filled(2, 3, true).unwrap();
        assert_eq!(
            precision(&a, &b),
            Err(MetricsError::SizeMismatch(2, 2, 2, 3))
        );
        assert!(jaccard(&a, &b).is_err());
        assert!(Mask::new(2, 2, vec![true; 3]).is_err());
        assert!(Mask::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn box_masks_and_crop() {
        let b = BoundingBox::new(-1, 1, 3, 5).unwrap();
        let m = Mask::from_box(4, 4, &b).unwrap();
        assert_eq!(m.count(), 2 * 3);
        let c = m.crop(&BoundingBox::new(0, 0, 2, 2).unwrap()).unwrap();
        assert_eq!(c.bits(), &[false, false, true, true]);
        assert!(m.crop(&BoundingBox::new(9, 9, 2, 2).unwrap()).is_none());
    }

    fn owned(pairs: &[(&str, &str)]) -> HashMap<String, String> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn evaluate_averages() {
        let full = Mask::filled(3, 3, true).unwrap();
        let empty = Mask::filled(3, 3, false).unwrap();
        let masks: HashMap<String, Mask> = [
            ("a".to_string(), full.clone()),
            ("b".to_string(), full.clone()),
        ]
        .into();
        let gts: HashMap<String, Mask> = [
            ("a".to_string(), full.clone()),
            ("b".to_string(), empty.clone()),
        ]
        .into();
        let classes = owned(&[("a", "cat"), ("b", "dog")]);

        let one = evaluate(["a"], &masks, &gts, &classes);
        assert_eq!((one.avg_precision, one.avg_jaccard), (1.0, 1.0));

        let two = evaluate(["a", "b"], &masks, &gts, &classes);
        assert_eq!((two.avg_precision, two.avg_jaccard), (0.5, 0.5));
        assert_eq!(two.per_class["dog"].count, 1);

        let missing = evaluate(["a", "zzz"], &masks, &gts, &classes);
        assert_eq!(missing.items_scored, 1);
        assert_eq!(missing.excluded[0].item, "zzz");
        assert_eq!(missing.excluded[0].reason, "missing segmentation mask");
    }

    #[test]
    fn evaluate_is_per_class_unweighted() {
        let full = Mask::filled(2, 1, true).unwrap();
        let half = Mask::new(2, 1, vec![true, false]).unwrap();
        let mut masks = HashMap::new();
        let mut gts = HashMap::new();
        let mut classes = HashMap::new();
        // three perfect "cat" items, one half-right "dog" item
        for (id, class, seg) in [
            ("c1", "cat", &full),
            ("c2", "cat", &full),
            ("c3", "cat", &full),
            ("d1", "dog", &full),
        ] {
            masks.insert(id.to_string(), seg.clone());
            gts.insert(
                id.to_string(),
                if class == "dog" {
                    half.clone()
                } else {
                    full.clone()
                },
            );
            classes.insert(id.to_string(), class.to_string());
        }
        let r = evaluate(["c1", "c2", "c3", "d1"], &masks, &gts, &classes);
        assert_eq!(r.avg_precision, (1.0 + 0.5) / 2.0);
        assert_eq!(r.avg_jaccard, (1.0 + 0.5) / 2.0);
        let json = serde_json::to_string(&r).unwrap();
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    fn arb_mask_pair() -> impl Strategy<Value = (Mask, Mask)> {
        (1u32..8, 1u32..8).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(a, b)| (Mask::new(w, h, a).unwrap(), Mask::new(w, h, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn metric_properties((a, b) in arb_mask_pair()) {
            let p = precision(&a, &b).unwrap();
            let j = jaccard(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&j));
            if a.count() > 0 {
                prop_assert!(j <= p);
            }
            prop_assert_eq!(j, jaccard(&b, &a).unwrap());
            prop_assert_eq!(p, precision(&a.transpose(), &b.transpose()).unwrap());
            prop_assert_eq!(j, jaccard(&a.transpose(), &b.transpose()).unwrap());
        }
    }
}
