//! Approximate nearest-neighbour search over a forest of random-projection
//! trees.
//!
//! Every internal node splits its items with the hyperplane halfway between
//! two sampled items. A query walks all trees at once through one priority
//! queue keyed by the distance to the planes on the way down, collects the
//! items of the visited leaves until the search budget is met, and re-ranks
//! that candidate set by exact distance.
//!
//! Items are stored as `f32`; every distance and plane margin is evaluated in
//! `f64` over the stored values, so results are identical before and after a
//! save/load cycle.
//!
//! File layout (`CSGI`, little-endian): magic, u32 version, config block
//! (u32 n_trees, u32 search_k, u32 leaf_capacity, u64 seed, u8 metric), item
//! block (u32 dim, u64 count, f32 values), then per tree a u32 node count and
//! its nodes in pre-order: tag u8 0 = leaf (u32 len, u32 ids), 1 = split
//! (dim f32 normal, f64 offset, u32 left, u32 right).

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio::{checked_len, DecodeError, LeReader, LeWriter};

pub const INDEX_MAGIC: &[u8; 4] = b"CSGI";
pub const INDEX_VERSION: u32 = 1;

/// Draws of a sample pair before a node is declared degenerate.
const SPLIT_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index over zero items")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid index config: {0}")]
    Config(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("item {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("bad index file: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Metric {
    #[default]
    Euclidean,
    /// Euclidean distance between unit-normalized vectors.
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Self::Euclidean),
            "cosine" => Ok(Self::Cosine),
            other => Err(format!("unknown metric `{other}` (euclidean|cosine)")),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Euclidean => "euclidean",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexConfig {
    pub n_trees: usize,
    /// Candidate items inspected per query, summed over all trees.
    pub search_k: usize,
    pub leaf_capacity: usize,
    pub seed: u64,
    pub metric: Metric,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            n_trees: 350,
            search_k: 50,
            leaf_capacity: 16,
            seed: 0,
            metric: Metric::Euclidean,
        }
    }
}

impl IndexConfig {
    pub fn validate(&self) -> Result<(), IndexError> {
        if self.n_trees == 0 || self.n_trees > u32::MAX as usize {
            return Err(IndexError::Config("n_trees must be >= 1".into()));
        }
        if self.search_k == 0 || self.search_k > u32::MAX as usize {
            return Err(IndexError::Config("search_k must be >= 1".into()));
        }
        if self.leaf_capacity < 2 || self.leaf_capacity > u32::MAX as usize {
            return Err(IndexError::Config("leaf_capacity must be >= 2".into()));
        }
        Ok(())
    }
}

/// A node of one tree. Children are indices into the tree's node list.
#[derive(Debug, Clone, PartialEq)]
pub enum RpNode {
    Split {
        normal: Vec<f32>,
        offset: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        items: Vec<u32>,
    },
}

/// Hyperplane `normal · x = offset`; the positive side holds the first
/// sample point.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlane {
    pub normal: Vec<f32>,
    pub offset: f64,
}

impl SplitPlane {
    /// Perpendicular bisector of `p` and `q`. `None` when they coincide.
    pub fn bisecting(p: &[f32], q: &[f32]) -> Option<SplitPlane> {
        if p == q {
            return None;
        }
        let normal: Vec<f32> = p.iter().zip(q).map(|(a, b)| a - b).collect();
        if normal.iter().all(|&v| v == 0.0) {
            return None;
        }
        let offset = normal
            .iter()
            .zip(p.iter().zip(q))
            .map(|(&n, (&a, &b))| n as f64 * ((a as f64 + b as f64) * 0.5))
            .sum();
        Some(SplitPlane { normal, offset })
    }

    /// Signed, unnormalized distance of `x` from the plane.
    pub fn margin(&self, x: &[f32]) -> f64 {
        dot_f32(&self.normal, x) - self.offset
    }
}

/// Samples two distinct points and returns their bisecting plane, retrying a
/// few draws when the sampled points coincide. `None` signals a degenerate
/// set that the caller should keep as one leaf.
pub fn split_plane<R: Rng>(points: &[&[f32]], rng: &mut R) -> Option<SplitPlane> {
    pick_plane(points.len(), |i| points[i], rng)
}

fn pick_plane<'a, R: Rng>(
    n: usize,
    point: impl Fn(usize) -> &'a [f32],
    rng: &mut R,
) -> Option<SplitPlane> {
    if n < 2 {
        return None;
    }
    for _ in 0..SPLIT_ATTEMPTS {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        if let Some(plane) = SplitPlane::bisecting(point(i), point(j)) {
            return Some(plane);
        }
    }
    None
}

fn dot_f32(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn dot_mixed(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<RpNode>,
    /// `1 / |normal|` per split node (unused for leaves).
    inv_norm: Vec<f64>,
}

impl Tree {
    fn new(nodes: Vec<RpNode>) -> Self {
        let inv_norm = nodes
            .iter()
            .map(|n| match n {
                RpNode::Split { normal, .. } => 1.0 / dot_f32(normal, normal).sqrt(),
                RpNode::Leaf { .. } => 0.0,
            })
            .collect();
        Self { nodes, inv_norm }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub distance: f64,
}

/// Neighbours in ascending distance order (ties by id), without duplicates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub neighbors: Vec<Neighbor>,
}

/// Immutable forest of random-projection trees over a fixed item set.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnIndex {
    config: IndexConfig,
    dim: usize,
    items: Vec<f32>,
    trees: Vec<Tree>,
}

struct Builder<'a> {
    items: &'a [f32],
    dim: usize,
    leaf_capacity: usize,
    nodes: Vec<RpNode>,
}

impl Builder<'_> {
    fn item(&self, id: u32) -> &[f32] {
        let s = id as usize * self.dim;
        &self.items[s..s + self.dim]
    }

    fn build(&mut self, ids: Vec<u32>, rng: &mut ChaCha8Rng) -> u32 {
        let here = self.nodes.len() as u32;
        if ids.len() <= self.leaf_capacity {
            self.nodes.push(RpNode::Leaf { items: ids });
            return here;
        }
        let Some(plane) = pick_plane(ids.len(), |i| self.item(ids[i]), rng) else {
            self.nodes.push(RpNode::Leaf { items: ids });
            return here;
        };
        let (right, left): (Vec<u32>, Vec<u32>) = ids
            .into_iter()
            .partition(|&id| plane.margin(self.item(id)) > 0.0);
        // placeholder, patched once the children exist (keeps pre-order)
        self.nodes.push(RpNode::Leaf { items: Vec::new() });
        let l = self.build(left, rng);
        let r = self.build(right, rng);
        self.nodes[here as usize] = RpNode::Split {
            normal: plane.normal,
            offset: plane.offset,
            left: l,
            right: r,
        };
        here
    }
}

#[derive(PartialEq)]
struct Pending {
    priority: f64,
    tree: u32,
    node: u32,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.tree.cmp(&self.tree))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

impl AnnIndex {
    /// Builds `cfg.n_trees` trees over `items`. Tree `t` draws its sample
    /// pairs from a stream seeded with `cfg.seed + t`, so the forest is the
    /// same however many threads build it.
    pub fn build<V: AsRef<[f64]>>(items: &[V], cfg: &IndexConfig) -> Result<AnnIndex, IndexError> {
        cfg.validate()?;
        let first = items.first().ok_or(IndexError::Empty)?;
        let dim = first.as_ref().len();
        if items.len() > u32::MAX as usize {
            return Err(IndexError::Config("too many items".into()));
        }
        let mut flat = Vec::with_capacity(items.len() * dim);
        for (i, v) in items.iter().enumerate() {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(IndexError::Dimension {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(IndexError::NonFinite(i));
            }
            let mut v = v.to_vec();
            if cfg.metric == Metric::Cosine {
                normalize(&mut v);
            }
            flat.extend(v.iter().map(|&x| x as f32));
        }
        let n = items.len() as u32;
        let trees = (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(t as u64));
                let mut b = Builder {
                    items: &flat,
                    dim,
                    leaf_capacity: cfg.leaf_capacity,
                    nodes: Vec::new(),
                };
                b.build((0..n).collect(), &mut rng);
                Tree::new(b.nodes)
            })
            .collect();
        Ok(AnnIndex {
            config: cfg.clone(),
            dim,
            items: flat,
            trees,
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.items.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stored (possibly normalized) vector of item `id`.
    pub fn item(&self, id: usize) -> &[f32] {
        &self.items[id * self.dim..(id + 1) * self.dim]
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Nodes of tree `t` in pre-order; the root is node 0.
    pub fn tree_nodes(&self, t: usize) -> &[RpNode] {
        &self.trees[t].nodes
    }

    /// Euclidean distance from `q` (already in index space) to item `id`.
    fn distance_to(&self, q: &[f64], id: usize) -> f64 {
        self.item(id)
            .iter()
            .zip(q)
            .map(|(&a, &b)| {
                let d = a as f64 - b;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Query with the configured `search_k`.
    pub fn query(&self, q: &[f64], k: usize) -> Result<RetrievalResult, IndexError> {
        self.query_with(q, k, self.config.search_k)
    }

    /// Approximate `k` nearest items to `q`. The walk stops once
    /// `max(search_k, k * n_trees)` distinct candidates were collected or
    /// every tree is exhausted.
    pub fn query_with(
        &self,
        q: &[f64],
        k: usize,
        search_k: usize,
    ) -> Result<RetrievalResult, IndexError> {
        if q.len() != self.dim {
            return Err(IndexError::Dimension {
                expected: self.dim,
                got: q.len(),
            });
        }
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let mut q = q.to_vec();
        if self.config.metric == Metric::Cosine {
            normalize(&mut q);
        }
        let n = self.len();
        let budget = search_k.max(k.saturating_mul(self.trees.len())).min(n);

        let mut seen = vec![false; n];
        let mut candidates: Vec<u32> = Vec::with_capacity(budget + self.config.leaf_capacity);
        let mut heap: BinaryHeap<Pending> = (0..self.trees.len() as u32)
            .map(|t| Pending {
                priority: f64::INFINITY,
                tree: t,
                node: 0,
            })
            .collect();
        while candidates.len() < budget {
            let Some(top) = heap.pop() else { break };
            let tree = &self.trees[top.tree as usize];
            match &tree.nodes[top.node as usize] {
                RpNode::Leaf { items } => {
                    for &id in items {
                        if !seen[id as usize] {
                            seen[id as usize] = true;
                            candidates.push(id);
                        }
                    }
                }
                RpNode::Split {
                    normal,
                    offset,
                    left,
                    right,
                } => {
                    let m = (dot_mixed(normal, &q) - offset) * tree.inv_norm[top.node as usize];
                    heap.push(Pending {
                        priority: top.priority.min(m),
                        tree: top.tree,
                        node: *right,
                    });
                    heap.push(Pending {
                        priority: top.priority.min(-m),
                        tree: top.tree,
                        node: *left,
                    });
                }
            }
        }

        let mut neighbors: Vec<Neighbor> = candidates
            .into_iter()
            .map(|id| Neighbor {
                id: id as usize,
                distance: self.distance_to(&q, id as usize),
            })
            .collect();
        neighbors.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
        neighbors.truncate(k);
        Ok(RetrievalResult { neighbors })
    }

    /// Query using stored item `id` as the query vector.
    pub fn query_item(
        &self,
        id: usize,
        k: usize,
        search_k: usize,
    ) -> Result<RetrievalResult, IndexError> {
        let q: Vec<f64> = self.item(id).iter().map(|&v| v as f64).collect();
        self.query_with(&q, k, search_k)
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), IndexError> {
        let mut w = LeWriter::new(writer);
        w.bytes(INDEX_MAGIC)?;
        w.u32(INDEX_VERSION)?;
        w.u32(self.config.n_trees as u32)?;
        w.u32(self.config.search_k as u32)?;
        w.u32(self.config.leaf_capacity as u32)?;
        w.u64(self.config.seed)?;
        w.u8(match self.config.metric {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
        })?;
        w.u32(self.dim as u32)?;
        w.u64(self.len() as u64)?;
        for &v in &self.items {
            w.f32(v)?;
        }
        for tree in &self.trees {
            w.u32(tree.nodes.len() as u32)?;
            for node in &tree.nodes {
                match node {
                    RpNode::Leaf { items } => {
                        w.u8(0)?;
                        w.u32(items.len() as u32)?;
                        for &id in items {
                            w.u32(id)?;
                        }
                    }
                    RpNode::Split {
                        normal,
                        offset,
                        left,
                        right,
                    } => {
                        w.u8(1)?;
                        for &v in normal {
                            w.f32(v)?;
                        }
                        w.f64(*offset)?;
                        w.u32(*left)?;
                        w.u32(*right)?;
                    }
                }
            }
        }
        w.finish()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load<R: Read>(reader: R) -> Result<AnnIndex, IndexError> {
        let mut r = LeReader::new(reader);
        r.magic(INDEX_MAGIC)?;
        r.version(INDEX_VERSION)?;
        let n_trees = r.u32("n_trees")? as usize;
        let search_k = r.u32("search_k")? as usize;
        let leaf_capacity = r.u32("leaf_capacity")? as usize;
        let seed = r.u64("seed")?;
        let metric = match r.u8("metric")? {
            0 => Metric::Euclidean,
            1 => Metric::Cosine,
            other => return Err(DecodeError::Invalid(format!("unknown metric tag {other}")).into()),
        };
        let config = IndexConfig {
            n_trees,
            search_k,
            leaf_capacity,
            seed,
            metric,
        };
        config
            .validate()
            .map_err(|e| DecodeError::Invalid(e.to_string()))?;
        let dim = checked_len(r.u32("dim")? as u64, 1 << 24, "dim")?;
        let count = checked_len(r.u64("count")?, u32::MAX as u64, "count")?;
        if count == 0 || dim == 0 {
            return Err(DecodeError::Invalid("empty item block".into()).into());
        }
        let items = (0..count * dim)
            .map(|_| r.f32("items"))
            .collect::<Result<Vec<_>, _>>()?;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 12));
        for _ in 0..n_trees {
            let len = checked_len(r.u32("node count")? as u64, 2 * count as u64, "node count")?;
            if len == 0 {
                return Err(DecodeError::Invalid("tree without nodes".into()).into());
            }
            let mut nodes = Vec::with_capacity(len);
            for i in 0..len {
                let node = match r.u8("node tag")? {
                    0 => {
                        let m = checked_len(r.u32("leaf size")? as u64, count as u64, "leaf size")?;
                        let ids = (0..m)
                            .map(|_| r.u32("leaf item"))
                            .collect::<Result<Vec<_>, _>>()?;
                        if ids.iter().any(|&id| id as usize >= count) {
                            return Err(
                                DecodeError::Invalid("leaf item out of range".into()).into()
                            );
                        }
                        RpNode::Leaf { items: ids }
                    }
                    1 => {
                        let normal = (0..dim)
                            .map(|_| r.f32("normal"))
                            .collect::<Result<Vec<_>, _>>()?;
                        let offset = r.f64("offset")?;
                        let left = r.u32("left child")?;
                        let right = r.u32("right child")?;
                        for c in [left, right] {
                            if c as usize <= i || c as usize >= len {
                                return Err(DecodeError::Invalid(format!(
                                    "child {c} of node {i} breaks pre-order"
                                ))
                                .into());
                            }
                        }
                        RpNode::Split {
                            normal,
                            offset,
                            left,
                            right,
                        }
                    }
                    other => {
                        return Err(DecodeError::Invalid(format!("unknown node tag {other}")).into())
                    }
                };
                nodes.push(node);
            }
            trees.push(Tree::new(nodes));
        }
        r.finish()?;
        Ok(AnnIndex {
            config,
            dim,
            items,
            trees,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AnnIndex, IndexError> {
        Self::load(bytes)
    }
}
