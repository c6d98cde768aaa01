//! Accepted relation sets and the post-inference score over the
//! concatenated label space.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Side;
use crate::ingest::PosteriorEntry;
use crate::taxonomy::{ClassRef, RelationHypothesis, Taxonomy};

/// Disjoint union of two taxonomies; `a` occupies indices `0..|a|`, `b`
/// follows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcatSpace {
    pub a: Taxonomy,
    pub b: Taxonomy,
}

impl ConcatSpace {
    pub fn new(a: Taxonomy, b: Taxonomy) -> Result<Self> {
        if a.dataset_id == b.dataset_id {
            return Err(Error::TaxonomyMismatch {
                expected: "two distinct taxonomies".into(),
                found: a.dataset_id,
            });
        }
        Ok(Self { a, b })
    }

    /// Taxonomy id of the concatenated space, `"<a>|<b>"`.
    pub fn id(&self) -> String {
        concat_id(&self.a.dataset_id, &self.b.dataset_id)
    }

    pub fn len(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn side(&self, dataset: &str) -> Option<Side> {
        if dataset == self.a.dataset_id {
            Some(Side::A)
        } else if dataset == self.b.dataset_id {
            Some(Side::B)
        } else {
            None
        }
    }

    pub fn taxonomy(&self, side: Side) -> &Taxonomy {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }

    pub fn offset(&self, side: Side) -> usize {
        match side {
            Side::A => 0,
            Side::B => self.a.len(),
        }
    }

    pub fn index_of(&self, c: &ClassRef) -> Result<usize> {
        let unknown = || Error::UnknownClass {
            dataset: c.dataset.clone(),
            class: c.class,
        };
        let side = self.side(&c.dataset).ok_or_else(unknown)?;
        if c.index() >= self.taxonomy(side).len() {
            return Err(unknown());
        }
        Ok(self.offset(side) + c.index())
    }

    /// Flat taxonomy over the concatenated space with qualified names.
    pub fn as_taxonomy(&self) -> Taxonomy {
        let classes = (0..self.a.len())
            .map(|i| self.a.qualified_name(i))
            .chain((0..self.b.len()).map(|j| self.b.qualified_name(j)))
            .collect();
        Taxonomy {
            dataset_id: self.id(),
            classes,
            qualified: true,
        }
    }
}

pub fn concat_id(a: &str, b: &str) -> String {
    format!("{a}|{b}")
}

/// Set of accepted overlap and subset relations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationSet {
    relations: BTreeSet<RelationHypothesis>,
}

impl RelationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, h: RelationHypothesis) -> bool {
        self.relations.insert(h)
    }

    pub fn remove(&mut self, h: &RelationHypothesis) -> bool {
        self.relations.remove(h)
    }

    pub fn contains(&self, h: &RelationHypothesis) -> bool {
        self.relations.contains(h)
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelationHypothesis> {
        self.relations.iter()
    }

    /// True iff some relation links `x` and `y`, in either direction.
    pub fn related(&self, x: &ClassRef, y: &ClassRef) -> bool {
        self.relations
            .iter()
            .any(|r| (&r.subject == x && &r.object == y) || (&r.subject == y && &r.object == x))
    }

    /// Copy with one more relation.
    pub fn with(&self, h: &RelationHypothesis) -> Self {
        let mut s = self.clone();
        s.insert(h.clone());
        s
    }
}

impl FromIterator<RelationHypothesis> for RelationSet {
    fn from_iter<I: IntoIterator<Item = RelationHypothesis>>(iter: I) -> Self {
        Self {
            relations: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a RelationSet {
    type Item = &'a RelationHypothesis;
    type IntoIter = std::collections::btree_set::Iter<'a, RelationHypothesis>;

    fn into_iter(self) -> Self::IntoIter {
        self.relations.iter()
    }
}

/// Per native class of the evaluated dataset: its own concat index and the
/// ascending concat indices of every related foreign class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreIndex {
    pub native: Vec<usize>,
    pub foreign: Vec<Vec<usize>>,
    pub concat_len: usize,
}

impl ScoreIndex {
    pub fn new(space: &ConcatSpace, dataset: &str, relations: &RelationSet) -> Result<Self> {
        let side = space.side(dataset).ok_or_else(|| Error::TaxonomyMismatch {
            expected: space.id(),
            found: dataset.to_owned(),
        })?;
        let n = space.taxonomy(side).len();
        let offset = space.offset(side);
        let mut foreign = vec![BTreeSet::new(); n];
        for r in relations {
            let s = space.index_of(&r.subject)?;
            let o = space.index_of(&r.object)?;
            if r.subject.dataset == r.object.dataset {
                return Err(Error::InvalidParameter(format!("relation {r} stays within one dataset")));
            }
            for (native, other, c) in [(s, o, &r.subject), (o, s, &r.object)] {
                if c.dataset == dataset {
                    foreign[native - offset].insert(other);
                }
            }
        }
        Ok(Self {
            native: (offset..offset + n).collect(),
            foreign: foreign.into_iter().map(|s| s.into_iter().collect()).collect(),
            concat_len: space.len(),
        })
    }

    pub fn classes(&self) -> usize {
        self.native.len()
    }

    /// Unnormalized scores from a dense concat-space probability vector:
    /// `S(c) = P(c) + sum of P(f)` over related foreign `f`, ascending.
    pub fn score_dense(&self, p: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.native.iter().zip(&self.foreign).map(|(&c, fs)| {
            let mut s = p[c];
            for &f in fs {
                s += p[f];
            }
            s
        }));
    }
}

/// Argmax with ties going to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Reusable per-pixel scorer over sparse posterior entries.
#[derive(Debug, Clone)]
pub struct Scorer<'a> {
    index: &'a ScoreIndex,
    dense: Vec<f64>,
    scores: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub fn new(index: &'a ScoreIndex) -> Self {
        Self {
            index,
            dense: vec![0.0; index.concat_len],
            scores: Vec::with_capacity(index.classes()),
        }
    }

    pub fn scores(&mut self, pixel: &[PosteriorEntry]) -> &[f64] {
        let active = || pixel.iter().take_while(|e| !e.is_pad());
        for e in active() {
            self.dense[e.class as usize] = e.prob as f64;
        }
        self.index.score_dense(&self.dense, &mut self.scores);
        for e in active() {
            self.dense[e.class as usize] = 0.0;
        }
        &self.scores
    }

    pub fn predict(&mut self, pixel: &[PosteriorEntry]) -> usize {
        self.scores(pixel);
        argmax(&self.scores)
    }
}

/// Scores of one pixel given its sparse posterior; classes outside the
/// stored entries have probability 0.
pub fn score(pixel: &[PosteriorEntry], index: &ScoreIndex) -> Vec<f64> {
    Scorer::new(index).scores(pixel).to_vec()
}
