use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::EncoderParams;
use super::{EmbedError, Embedding, PatchDescriptor};

/// Similarity label of a pair: `Similar` is Y = 1, `Dissimilar` is Y = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Dissimilar = 0,
    Similar = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Self::Dissimilar),
            1 => Some(Self::Similar),
            _ => None,
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// Descriptors with integer class labels, all of one dimension.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    descriptors: Vec<PatchDescriptor>,
    labels: Vec<u32>,
    by_class: BTreeMap<u32, Vec<usize>>,
}

impl LabeledSet {
    pub fn new(descriptors: Vec<PatchDescriptor>, labels: Vec<u32>) -> Result<Self, EmbedError> {
        if descriptors.len() != labels.len() {
            return Err(EmbedError::LabelCount(descriptors.len(), labels.len()));
        }
        if let Some(first) = descriptors.first() {
            if let Some(bad) = descriptors.iter().find(|d| d.len() != first.len()) {
                return Err(EmbedError::Dimension {
                    expected: first.len(),
                    got: bad.len(),
                });
            }
        }
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        Ok(Self {
            descriptors,
            labels,
            by_class,
        })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.descriptors.first().map(PatchDescriptor::len)
    }

    pub fn descriptor(&self, i: usize) -> &PatchDescriptor {
        &self.descriptors[i]
    }

    pub fn descriptors(&self) -> &[PatchDescriptor] {
        &self.descriptors
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.by_class.len()
    }
}

/// Two items of a [`LabeledSet`] (by index) and their similarity label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub a: usize,
    pub b: usize,
    pub label: Label,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draws `count` random pairs: `ceil(count/2)` same-class positives and
/// `floor(count/2)` cross-class negatives, alternating starting with a
/// positive. Deterministic in `seed`.
pub fn sample_pairs(
    set: &LabeledSet,
    count: usize,
    seed: u64,
) -> Result<Vec<PairSample>, EmbedError> {
    if set.class_count() < 2 {
        return Err(EmbedError::TooFewClasses(set.class_count()));
    }
    let classes: Vec<&Vec<usize>> = set.by_class.values().collect();
    let eligible: Vec<&Vec<usize>> = classes.iter().copied().filter(|c| c.len() >= 2).collect();
    if eligible.is_empty() && count > 0 {
        return Err(EmbedError::NoPositivePairs);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        if i % 2 == 0 {
            let members = *eligible.choose(&mut rng).expect("eligible is non-empty");
            let first = rng.random_range(0..members.len());
            let mut second = rng.random_range(0..members.len() - 1);
            if second >= first {
                second += 1;
            }
            out.push(PairSample {
                a: members[first],
                b: members[second],
                label: Label::Similar,
            });
        } else {
            let ca = rng.random_range(0..classes.len());
            let mut cb = rng.random_range(0..classes.len() - 1);
            if cb >= ca {
                cb += 1;
            }
            let a = *classes[ca].choose(&mut rng).expect("classes are non-empty");
            let b = *classes[cb].choose(&mut rng).expect("classes are non-empty");
            out.push(PairSample {
                a,
                b,
                label: Label::Dissimilar,
            });
        }
    }
    Ok(out)
}

/// Aggressive mining: draws a pool of `pool_factor * count` random pairs and
/// keeps the hardest ones under the current encoder, i.e. the positives with
/// the largest embedding distance and the negatives with the smallest.
///
/// Returns the `floor(count/2)` negatives (hardest first) followed by the
/// `ceil(count/2)` positives (hardest first). Ties keep pool order.
pub fn mine_hard_pairs(
    params: &EncoderParams,
    set: &LabeledSet,
    count: usize,
    pool_factor: usize,
    seed: u64,
) -> Result<Vec<PairSample>, EmbedError> {
    let pool = sample_pairs(set, count * pool_factor.max(1), seed)?;
    let mut cache: Vec<Option<Embedding>> = vec![None; set.len()];
    let mut embed = |i: usize| -> Result<(), EmbedError> {
        if cache[i].is_none() {
            cache[i] = Some(params.forward(set.descriptor(i).as_slice())?);
        }
        Ok(())
    };
    for p in &pool {
        embed(p.a)?;
        embed(p.b)?;
    }
    let d2 = |p: &PairSample| {
        squared_distance(
            cache[p.a].as_deref().expect("embedded above"),
            cache[p.b].as_deref().expect("embedded above"),
        )
    };
    let mut positives: Vec<(f64, PairSample)> = Vec::new();
    let mut negatives: Vec<(f64, PairSample)> = Vec::new();
    for p in &pool {
        match p.label {
            Label::Similar => positives.push((d2(p), *p)),
            Label::Dissimilar => negatives.push((d2(p), *p)),
        }
    }
    positives.sort_by(|x, y| y.0.total_cmp(&x.0));
    negatives.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n_pos = count.div_ceil(2);
    let n_neg = count / 2;
    Ok(negatives
        .into_iter()
        .take(n_neg)
        .chain(positives.into_iter().take(n_pos))
        .map(|(_, p)| p)
        .collect())
}
