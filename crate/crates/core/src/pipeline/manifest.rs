//! Dataset manifest: one CSV row per image with its class, split and
//! optional ground truth.
//!
//! Columns: `item_id,image_path,class,split,gt_x,gt_y,gt_w,gt_h,gt_mask_path`.
//! The four box columns are either all empty or all set; `gt_mask_path` may
//! be empty. Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::geometry::BoundingBox;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("manifest line {line}: duplicate item id `{id}`")]
    DuplicateId { line: u64, id: String },
    #[error("train fraction {0} is outside (0, 1)")]
    Fraction(f64),
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            other => Err(format!("split must be `train` or `test`, got `{other}`")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub item_id: String,
    pub image_path: PathBuf,
    pub class: String,
    pub split: Split,
    pub gt_box: Option<BoundingBox>,
    pub gt_mask_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct Row {
    item_id: String,
    image_path: String,
    class: String,
    split: String,
    gt_x: Option<i32>,
    gt_y: Option<i32>,
    gt_w: Option<u32>,
    gt_h: Option<u32>,
    gt_mask_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Checks that item ids are unique.
    pub fn new(records: Vec<ManifestRecord>) -> Result<Self, ManifestError> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.item_id.as_str()) {
                return Err(ManifestError::DuplicateId {
                    line: i as u64 + 2,
                    id: r.item_id.clone(),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let file = File::open(path).map_err(|source| ManifestError::File {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file, path.parent().unwrap_or(Path::new("")))
    }

    pub fn from_reader<R: Read>(reader: R, base_dir: &Path) -> Result<Self, ManifestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| ManifestError::Parse {
                line: 1,
                msg: e.to_string(),
            })?
            .clone();
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_relative() {
                base_dir.join(p)
            } else {
                p.to_path_buf()
            }
        };
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ManifestError::Parse {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let parse = |msg: String| ManifestError::Parse { line, msg };
            let row: Row = rec
                .deserialize(Some(&headers))
                .map_err(|e| parse(e.to_string()))?;
            if row.item_id.is_empty() {
                return Err(parse("empty item_id".into()));
            }
            if !seen.insert(row.item_id.clone()) {
                return Err(ManifestError::DuplicateId {
                    line,
                    id: row.item_id,
                });
            }
            let gt_box = match (row.gt_x, row.gt_y, row.gt_w, row.gt_h) {
                (None, None, None, None) => None,
                (Some(x), Some(y), Some(w), Some(h)) => {
                    Some(BoundingBox::new(x, y, w, h).map_err(|e| parse(e.to_string()))?)
                }
                _ => {
                    return Err(parse(
                        "gt_x, gt_y, gt_w, gt_h must be all set or all empty".into(),
                    ))
                }
            };
            records.push(ManifestRecord {
                split: row.split.parse().map_err(parse)?,
                image_path: resolve(&row.image_path),
                class: row.class,
                gt_box,
                gt_mask_path: row
                    .gt_mask_path
                    .filter(|p| !p.is_empty())
                    .map(|p| resolve(&p)),
                item_id: row.item_id,
            });
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.item_id == item_id)
    }

    /// Distinct class names, sorted.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.records.iter().map(|r| r.class.clone()).collect();
        c.sort();
        c.dedup();
        c
    }
}

/// Stratified split: each class is shuffled with one seeded generator
/// (classes visited in sorted order) and its first `round(n·fraction)` items,
/// clamped to `1..=n−1`, go to train. A class with a single item goes to
/// train with a warning. Both halves keep manifest order, with `split`
/// rewritten.
pub fn split_dataset(
    manifest: &Manifest,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<ManifestRecord>, Vec<ManifestRecord>), ManifestError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(ManifestError::Fraction(train_fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        by_class.entry(r.class.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_train = vec![false; manifest.records.len()];
    for (class, mut members) in by_class {
        let n = members.len();
        if n == 1 {
            warn!("class `{class}` has a single item; it goes to the training split");
            is_train[members[0]] = true;
            continue;
        }
        members.shuffle(&mut rng);
        let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
        for &i in &members[..n_train] {
            is_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in manifest.records.iter().zip(is_train) {
        let mut r = r.clone();
        if t {
            r.split = Split::Train;
            train.push(r);
        } else {
            r.split = Split::Test;
            test.push(r);
        }
    }
    Ok((train, test))
}
