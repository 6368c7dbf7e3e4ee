//! Bounding boxes, IoU, and the proposal clean-up chain (near-duplicate
//! rejection, non-maximum suppression, top-k selection).
//!
//! Areas use the `w * h` convention on integer pixel boxes, which is the same
//! count a binary mask of the box would produce.

use std::cmp::Ordering;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_NMS_THRESHOLD: f64 = 0.7;
pub const DEFAULT_DEDUP_THRESHOLD: f64 = 0.95;
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("box width and height must be >= 1 (got {w}x{h})")]
    EmptyBox { w: i64, h: i64 },
    #[error("proposal score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("iou threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("proposals span several images ({first} and {other})")]
    MixedImages { first: String, other: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned box in pixel coordinates: `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    x: i32,
    y: i32,
    w: u32,
    h: u32,
}

impl BoundingBox {
    pub fn new(x: i32, y: i32, w: u32, h: u32) -> Result<Self, GeometryError> {
        if w == 0 || h == 0 {
            return Err(GeometryError::EmptyBox {
                w: w as i64,
                h: h as i64,
            });
        }
        Ok(Self { x, y, w, h })
    }

    pub fn x(&self) -> i32 {
        self.x
    }

    pub fn y(&self) -> i32 {
        self.y
    }

    pub fn width(&self) -> u32 {
        self.w
    }

    pub fn height(&self) -> u32 {
        self.h
    }

    /// Exclusive right edge.
    pub fn right(&self) -> i64 {
        self.x as i64 + self.w as i64
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> i64 {
        self.y as i64 + self.h as i64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> u64 {
        let left = (self.x as i64).max(other.x as i64);
        let top = (self.y as i64).max(other.y as i64);
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        if right <= left || bottom <= top {
            0
        } else {
            ((right - left) * (bottom - top)) as u64
        }
    }

    /// Clips the box to a `width x height` image. `None` when nothing is left.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<BoundingBox> {
        let left = (self.x as i64).max(0);
        let top = (self.y as i64).max(0);
        let right = self.right().min(width as i64);
        let bottom = self.bottom().min(height as i64);
        if right <= left || bottom <= top {
            return None;
        }
        Some(BoundingBox {
            x: left as i32,
            y: top as i32,
            w: (right - left) as u32,
            h: (bottom - top) as u32,
        })
    }
}

/// Intersection over union of two boxes. Symmetric, exactly 1 for equal boxes
/// and exactly 0 for disjoint ones.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// A candidate object region within one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub image_id: String,
    pub bbox: BoundingBox,
    score: f64,
    pub source: String,
}

impl Proposal {
    pub fn new(
        image_id: impl Into<String>,
        bbox: BoundingBox,
        score: f64,
        source: impl Into<String>,
    ) -> Result<Self, GeometryError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(GeometryError::ScoreOutOfRange(score));
        }
        Ok(Self {
            image_id: image_id.into(),
            bbox,
            score,
            source: source.into(),
        })
    }

    pub fn score(&self) -> f64 {
        self.score
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{},{},{}",
            self.image_id,
            self.bbox.x,
            self.bbox.y,
            self.bbox.w,
            self.bbox.h,
            self.score,
            self.source
        )
    }
}

impl FromStr for Proposal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split(',').collect();
        if fields.len() != 7 {
            return Err(format!("expected 7 fields, found {}", fields.len()));
        }
        let int = |i: usize, name: &str| -> Result<i64, String> {
            fields[i]
                .trim()
                .parse::<i64>()
                .map_err(|e| format!("field `{name}`: {e}"))
        };
        let (x, y, w, h) = (int(1, "x")?, int(2, "y")?, int(3, "w")?, int(4, "h")?);
        let x = i32::try_from(x).map_err(|_| "field `x` out of range".to_string())?;
        let y = i32::try_from(y).map_err(|_| "field `y` out of range".to_string())?;
        if w < 1 || h < 1 || w > u32::MAX as i64 || h > u32::MAX as i64 {
            return Err(format!("box size {w}x{h} is not positive"));
        }
        let score: f64 = fields[5]
            .trim()
            .parse()
            .map_err(|e| format!("field `score`: {e}"))?;
        let bbox = BoundingBox::new(x, y, w as u32, h as u32).map_err(|e| e.to_string())?;
        Proposal::new(fields[0].trim(), bbox, score, fields[6].trim()).map_err(|e| e.to_string())
    }
}

/// Reads a proposal file (`image_id,x,y,w,h,score,source` per line). Blank
/// lines are skipped; errors carry 1-based line numbers.
pub fn read_proposals<R: BufRead>(reader: R) -> Result<Vec<Proposal>, GeometryError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let p = line
            .parse::<Proposal>()
            .map_err(|msg| GeometryError::Parse { line: i + 1, msg })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_proposals<W: std::io::Write>(
    mut writer: W,
    props: &[Proposal],
) -> Result<(), GeometryError> {
    for p in props {
        writeln!(writer, "{p}")?;
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<(), GeometryError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(GeometryError::BadThreshold(t))
    }
}

fn check_single_image(props: &[Proposal]) -> Result<(), GeometryError> {
    if let Some(first) = props.first() {
        if let Some(other) = props.iter().find(|p| p.image_id != first.image_id) {
            return Err(GeometryError::MixedImages {
                first: first.image_id.clone(),
                other: other.image_id.clone(),
            });
        }
    }
    Ok(())
}

fn by_score_desc(a: &Proposal, b: &Proposal) -> Ordering {
    b.score.total_cmp(&a.score)
}

/// Greedy non-maximum suppression. Proposals are visited by descending score
/// (ties keep input order) and dropped when their IoU with any kept proposal
/// reaches `iou_threshold`.
pub fn nms(props: &[Proposal], iou_threshold: f64) -> Result<Vec<Proposal>, GeometryError> {
    check_threshold(iou_threshold)?;
    check_single_image(props)?;
    let mut order: Vec<&Proposal> = props.iter().collect();
    order.sort_by(|a, b| by_score_desc(a, b));
    let mut kept: Vec<Proposal> = Vec::new();
    for p in order {
        if kept.iter().all(|k| iou(&k.bbox, &p.bbox) < iou_threshold) {
            kept.push(p.clone());
        }
    }
    Ok(kept)
}

/// Order-stable, score-agnostic duplicate removal: for every pair with
/// IoU >= `iou_threshold` the later proposal is dropped, whether or not the
/// earlier one survives. A chain A~B~C (A and C apart) keeps only A.
pub fn dedup_near(props: &[Proposal], iou_threshold: f64) -> Result<Vec<Proposal>, GeometryError> {
    check_threshold(iou_threshold)?;
    check_single_image(props)?;
    Ok(props
        .iter()
        .enumerate()
        .filter(|(j, p)| {
            props[..*j]
                .iter()
                .all(|q| iou(&q.bbox, &p.bbox) < iou_threshold)
        })
        .map(|(_, p)| p.clone())
        .collect())
}

/// The `k` best-scoring proposals in descending score order (stable).
pub fn top_k(props: &[Proposal], k: usize) -> Vec<Proposal> {
    let mut sorted = props.to_vec();
    sorted.sort_by(by_score_desc);
    sorted.truncate(k);
    sorted
}

/// Dedup, then NMS, then top-k: the per-image clean-up applied at ingest.
pub fn clean_proposals(
    props: &[Proposal],
    dedup_threshold: f64,
    nms_threshold: f64,
    k: usize,
) -> Result<Vec<Proposal>, GeometryError> {
    let deduped = dedup_near(props, dedup_threshold)?;
    let suppressed = nms(&deduped, nms_threshold)?;
    Ok(top_k(&suppressed, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: i32, y: i32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn prop(b: BoundingBox, score: f64) -> Proposal {
        Proposal::new("img", b, score, "test").unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&bx(0, 0, 10, 10), &bx(0, 0, 10, 10)), 1.0);
        assert_eq!(iou(&bx(0, 0, 10, 10), &bx(20, 20, 5, 5)), 0.0);
        // 5x5 overlap, union 100 + 100 - 25
        assert_eq!(iou(&bx(0, 0, 10, 10), &bx(5, 5, 10, 10)), 25.0 / 175.0);
        // touching edges do not overlap
        assert_eq!(iou(&bx(0, 0, 10, 10), &bx(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn invalid_box_and_score_rejected() {
        assert!(BoundingBox::new(0, 0, 0, 3).is_err());
        assert!(Proposal::new("a", bx(0, 0, 1, 1), 1.5, "s").is_err());
        assert!(Proposal::new("a", bx(0, 0, 1, 1), f64::NAN, "s").is_err());
    }

    #[test]
    fn nms_examples() {
        let single = vec![prop(bx(0, 0, 3, 3), 0.4)];
        assert_eq!(nms(&single, 0.5).unwrap(), single);

        let twins = vec![prop(bx(0, 0, 10, 10), 0.8), prop(bx(0, 0, 10, 10), 0.9)];
        let out = nms(&twins, 0.5).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score(), 0.9);

        let a = prop(bx(0, 0, 10, 10), 0.9);
        let b = prop(bx(5, 5, 10, 10), 0.8);
        let c = prop(bx(40, 40, 10, 10), 0.7);
        let out = nms(&[a.clone(), b, c.clone()], 0.1).unwrap();
        assert_eq!(out, vec![a, c]);
    }

    #[test]
    fn nms_rejects_mixed_images_and_bad_threshold() {
        let a = prop(bx(0, 0, 4, 4), 0.5);
        let mut b = a.clone();
        b.image_id = "other".into();
        assert!(matches!(
            nms(&[a.clone(), b], 0.5),
            Err(GeometryError::MixedImages { .. })
        ));
        assert!(matches!(
            nms(&[a.clone()], 0.0),
            Err(GeometryError::BadThreshold(_))
        ));
        assert!(dedup_near(&[a], 1.5).is_err());
    }

    #[test]
    fn dedup_examples() {
        assert!(dedup_near(&[], 0.5).unwrap().is_empty());

        let twins = vec![prop(bx(0, 0, 10, 10), 0.1), prop(bx(0, 0, 10, 10), 0.9)];
        let out = dedup_near(&twins, 0.5).unwrap();
        assert_eq!(out, vec![twins[0].clone()]);

        // IoU(A, B) = 81 / 119
        let a = prop(bx(0, 0, 10, 10), 0.2);
        let b = prop(bx(1, 1, 10, 10), 0.9);
        let c = prop(bx(30, 0, 10, 10), 0.5);
        assert!((iou(&a.bbox, &b.bbox) - 81.0 / 119.0).abs() < 1e-15);
        let out = dedup_near(&[a.clone(), b, c.clone()], 0.6).unwrap();
        assert_eq!(out, vec![a, c]);

        // B overlaps A and C, A and C are apart: B and C both go
        let a = prop(bx(0, 0, 10, 10), 0.5);
        let b = prop(bx(2, 0, 10, 10), 0.5);
        let c = prop(bx(4, 0, 10, 10), 0.5);
        assert!(
            iou(&a.bbox, &c.bbox) < 0.6
                && iou(&a.bbox, &b.bbox) >= 0.6
                && iou(&b.bbox, &c.bbox) >= 0.6
        );
        assert_eq!(dedup_near(&[a.clone(), b, c], 0.6).unwrap(), vec![a]);
    }

    #[test]
    fn top_k_examples() {
        let ps: Vec<Proposal> = [0.1, 0.9, 0.5]
            .iter()
            .map(|&s| prop(bx(0, 0, 2, 2), s))
            .collect();
        let all = top_k(&ps, 10);
        assert_eq!(
            all.iter().map(|p| p.score()).collect::<Vec<_>>(),
            vec![0.9, 0.5, 0.1]
        );
        let two = top_k(&ps, 2);
        assert_eq!(
            two.iter().map(|p| p.score()).collect::<Vec<_>>(),
            vec![0.9, 0.5]
        );
    }

    #[test]
    fn top_k_stable_on_ties() {
        let ps: Vec<Proposal> = (0..5).map(|i| prop(bx(i, 0, 2, 2), 0.5)).collect();
        let out = top_k(&ps, 3);
        assert_eq!(out, ps[..3].to_vec());
    }

    #[test]
    fn proposal_line_parsing() {
        let text = "im1,1,2,3,4,0.5,mcg\n\nim1,-3,0,10,10,1,ss\r\n";
        let ps = read_proposals(text.as_bytes()).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].bbox, bx(-3, 0, 10, 10));
        assert_eq!(ps[1].source, "ss");

        let mut buf = Vec::new();
        write_proposals(&mut buf, &ps).unwrap();
        assert_eq!(read_proposals(buf.as_slice()).unwrap(), ps);

        let err =
            read_proposals("im1,1,2,3,4,0.5,mcg\nim1,1,2,0,4,0.5,mcg\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 2, .. }), "{err}");
        let err = read_proposals("a,b\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 1, .. }));
    }

    #[test]
    fn clip() {
        assert_eq!(bx(-2, -2, 5, 5).clip_to(10, 10), Some(bx(0, 0, 3, 3)));
        assert_eq!(bx(8, 8, 5, 5).clip_to(10, 10), Some(bx(8, 8, 2, 2)));
        assert_eq!(bx(20, 0, 5, 5).clip_to(10, 10), None);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0i32..40, 0i32..40, 1u32..25, 1u32..25).prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    fn arb_props() -> impl Strategy<Value = Vec<Proposal>> {
        prop::collection::vec((arb_box(), 0u32..=20), 0..25).prop_map(|v| {
            v.into_iter()
                .map(|(b, s)| prop(b, s as f64 / 20.0))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a), 1.0);
        }

        #[test]
        fn nms_subset_separated_idempotent(ps in arb_props(), t in 0.05f64..1.0) {
            let once = nms(&ps, t).unwrap();
            for p in &once {
                prop_assert!(ps.contains(p));
            }
            for i in 0..once.len() {
                for j in i + 1..once.len() {
                    prop_assert!(iou(&once[i].bbox, &once[j].bbox) < t);
                }
                if i > 0 {
                    prop_assert!(once[i - 1].score() >= once[i].score());
                }
            }
            prop_assert_eq!(nms(&once, t).unwrap(), once);
        }

        #[test]
        fn top_k_is_sorted_prefix(ps in arb_props(), k in 1usize..30) {
            let mut full = ps.clone();
            full.sort_by(|a, b| b.score().partial_cmp(&a.score()).unwrap());
            full.truncate(k);
            prop_assert_eq!(top_k(&ps, k), full);
        }
    }
}
