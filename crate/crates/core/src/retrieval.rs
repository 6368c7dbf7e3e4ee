//! Embedding of test proposals, per-anchor similarity groups, and the
//! ground-truth IoU filter applied before scoring.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annindex::{AnnIndex, IndexError, Neighbor};
use crate::embedder::{EmbedError, Embedding, EncoderParams};
use crate::geometry::{iou, BoundingBox, Proposal};

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("member {0} has no proposal")]
    UnknownMember(usize),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Nearest neighbours of one anchor item, the anchor itself excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityGroup {
    pub anchor: usize,
    pub members: Vec<Neighbor>,
    pub class_hint: Option<String>,
}

/// Runs the encoder over every descriptor, in parallel, keeping input order.
pub fn embed_all<D>(params: &EncoderParams, descriptors: &[D]) -> Result<Vec<Embedding>, EmbedError>
where
    D: AsRef<[f64]> + Sync,
{
    descriptors
        .par_iter()
        .map(|d| params.forward(d.as_ref()))
        .collect()
}

/// Similarity group of stored item `anchor`: its `k` nearest other items
/// with their distances.
pub fn retrieve_for(
    index: &AnnIndex,
    anchor: usize,
    k: usize,
    search_k: usize,
) -> Result<SimilarityGroup, RetrievalError> {
    let mut result = index.query_item(anchor, k + 1, search_k)?;
    result.neighbors.retain(|n| n.id != anchor);
    result.neighbors.truncate(k);
    Ok(SimilarityGroup {
        anchor,
        members: result.neighbors,
        class_hint: None,
    })
}

/// One group per indexed item, in item order.
pub fn retrieve_similar(
    index: &AnnIndex,
    k: usize,
    search_k: usize,
) -> Result<Vec<SimilarityGroup>, RetrievalError> {
    (0..index.len())
        .into_par_iter()
        .map(|anchor| retrieve_for(index, anchor, k, search_k))
        .collect()
}

/// Sets each group's `class_hint` from per-item class names.
pub fn annotate_classes(groups: &mut [SimilarityGroup], classes: &[String]) {
    for g in groups {
        g.class_hint = classes.get(g.anchor).cloned();
    }
}

/// Keeps the members whose proposal box overlaps its image's ground-truth box
/// with IoU >= `threshold`. Members from images without a ground-truth box
/// are kept.
pub fn filter_candidates(
    group: &SimilarityGroup,
    proposals: &[Proposal],
    gt_boxes: &HashMap<String, BoundingBox>,
    threshold: f64,
) -> Result<SimilarityGroup, RetrievalError> {
    let mut members = Vec::with_capacity(group.members.len());
    for m in &group.members {
        let p = proposals
            .get(m.id)
            .ok_or(RetrievalError::UnknownMember(m.id))?;
        let keep = match gt_boxes.get(&p.image_id) {
            Some(gt) => iou(&p.bbox, gt) >= threshold,
            None => true,
        };
        if keep {
            members.push(*m);
        }
    }
    Ok(SimilarityGroup {
        anchor: group.anchor,
        members,
        class_hint: group.class_hint.clone(),
    })
}

/// One JSON object per line.
pub fn write_groups<W: Write>(
    mut writer: W,
    groups: &[SimilarityGroup],
) -> Result<(), RetrievalError> {
    for g in groups {
        serde_json::to_writer(&mut writer, g)
            .map_err(|source| RetrievalError::Json { line: 0, source })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_groups<R: BufRead>(reader: R) -> Result<Vec<SimilarityGroup>, RetrievalError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| RetrievalError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annindex::IndexConfig;

    fn index_of(points: &[Vec<f64>]) -> AnnIndex {
        let cfg = IndexConfig {
            n_trees: 4,
            search_k: 100,
            leaf_capacity: 4,
            seed: 3,
            ..IndexConfig::default()
        };
        AnnIndex::build(points, &cfg).unwrap()
    }

    #[test]
    fn embed_all_matches_pointwise() {
        let params = EncoderParams::init(&[3, 4, 2], 8).unwrap();
        let none: Vec<Vec<f64>> = vec![];
        assert!(embed_all(&params, &none).unwrap().is_empty());
        let xs: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![i as f64 * 0.1, -(i as f64) * 0.05, (i % 7) as f64])
            .collect();
        let all = embed_all(&params, &xs).unwrap();
        for (x, e) in xs.iter().zip(&all) {
            assert_eq!(&params.forward(x).unwrap(), e);
        }
        assert!(embed_all(&params, &[vec![1.0]]).is_err());
    }

    #[test]
    fn two_items() {
        let idx = index_of(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let g = retrieve_for(&idx, 0, 10, 50).unwrap();
        assert_eq!(
            g.members,
            vec![Neighbor {
                id: 1,
                distance: 5.0
            }]
        );
    }

    #[test]
    fn identical_items_in_id_order() {
        let idx = index_of(&vec![vec![1.0, 1.0]; 6]);
        let groups = retrieve_similar(&idx, 10, 50).unwrap();
        assert_eq!(groups.len(), 6);
        for g in &groups {
            let ids: Vec<usize> = g.members.iter().map(|m| m.id).collect();
            let want: Vec<usize> = (0..6).filter(|&i| i != g.anchor).collect();
            assert_eq!(ids, want);
            assert!(g.members.iter().all(|m| m.distance == 0.0));
        }
    }

    #[test]
    fn groups_exclude_anchor_and_keep_exact_distances() {
        let pts: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                vec![
                    (i % 5) as f64,
                    (i / 5) as f64 * 0.7,
                    ((i * 13) % 11) as f64 * 0.3,
                ]
            })
            .collect();
        let idx = index_of(&pts);
        let mut groups = retrieve_similar(&idx, 5, 40).unwrap();
        let names: Vec<String> = (0..40).map(|i| format!("c{}", i % 2)).collect();
        annotate_classes(&mut groups, &names);
        for g in &groups {
            assert_eq!(g.members.len(), 5);
            assert!(g.members.iter().all(|m| m.id != g.anchor));
            assert_eq!(g.class_hint.as_deref(), Some(names[g.anchor].as_str()));
            for m in &g.members {
                let d = idx
                    .item(g.anchor)
                    .iter()
                    .zip(idx.item(m.id))
                    .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert_eq!(d, m.distance);
            }
        }
    }

    fn proposal(image: &str, x: i32) -> Proposal {
        Proposal::new(image, BoundingBox::new(x, x, 10, 10).unwrap(), 0.5, "t").unwrap()
    }

    #[test]
    fn filter_against_ground_truth() {
        let props = vec![
            proposal("a", 0),
            proposal("a", 0),   // equals gt: kept
            proposal("b", 100), // disjoint: dropped
            proposal("c", 0),   // no gt: kept
            proposal("b", 3),   // IoU 49/151 < 0.5: dropped
            proposal("b", 2),   // IoU 64/136 < 0.5: dropped
            proposal("b", 1),   // IoU 81/119 >= 0.5: kept
        ];
        let gt: HashMap<String, BoundingBox> = [
            ("a".to_string(), BoundingBox::new(0, 0, 10, 10).unwrap()),
            ("b".to_string(), BoundingBox::new(0, 0, 10, 10).unwrap()),
        ]
        .into();
        let group = SimilarityGroup {
            anchor: 0,
            members: (1..7)
                .map(|id| Neighbor {
                    id,
                    distance: id as f64 * 0.5,
                })
                .collect(),
            class_hint: Some("x".into()),
        };
        let out = filter_candidates(&group, &props, &gt, 0.5).unwrap();
        let brute: Vec<Neighbor> = group
            .members
            .iter()
            .filter(|m| {
                let p = &props[m.id];
                gt.get(&p.image_id).is_none_or(|g| iou(&p.bbox, g) >= 0.5)
            })
            .copied()
            .collect();
        assert_eq!(out.members, brute);
        let ids: Vec<usize> = out.members.iter().map(|m| m.id).collect();
        assert_eq!(ids, vec![1, 3, 6]);
        assert_eq!(out.class_hint, group.class_hint);

        let bad = SimilarityGroup {
            members: vec![Neighbor {
                id: 99,
                distance: 1.0,
            }],
            ..group
        };
        assert!(matches!(
            filter_candidates(&bad, &props, &gt, 0.5),
            Err(RetrievalError::UnknownMember(99))
        ));
    }

    #[test]
    fn jsonl_round_trip() {
        let groups = vec![
            SimilarityGroup {
                anchor: 2,
                members: vec![Neighbor {
                    id: 0,
                    distance: 0.25,
                }],
                class_hint: Some("cow".into()),
            },
            SimilarityGroup {
                anchor: 0,
                members: vec![],
                class_hint: None,
            },
        ];
        let mut buf = Vec::new();
        write_groups(&mut buf, &groups).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"anchor":2,"members":[{"id":0,"distance":0.25}],"class_hint":"cow"}"#
        );
        assert_eq!(read_groups(buf.as_slice()).unwrap(), groups);
        assert!(matches!(
            read_groups("{}\n".as_bytes()),
            Err(RetrievalError::Json { line: 1, .. })
        ));
    }
}
