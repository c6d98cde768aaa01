//! The mcfp bipartite graph and its pattern classification.
//!
//! Every class of either taxonomy points at its most common foreign
//! prediction. Mutual edges are overlaps, one-way edges are subset
//! hypotheses, and chains `x -> y -> z` with `z -/-> y` are inconsistent
//! triplets that yield a pair of competing subset hypotheses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::CooccurrenceMatrix;
use crate::taxonomy::{ClassRef, ConflictPair, RelationHypothesis, Taxonomy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vertex {
    pub side: Side,
    pub index: usize,
}

impl Vertex {
    pub fn a(index: usize) -> Self {
        Self { side: Side::A, index }
    }

    pub fn b(index: usize) -> Self {
        Self { side: Side::B, index }
    }
}

/// Outgoing mcfp edge; `count` is the supporting co-occurrence count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub target: usize,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexState {
    Observed,
    Unobserved,
    Removed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GraphOptions {
    /// Edges whose count is below this fraction of the row total are dropped.
    pub min_support: f64,
}

/// Most common foreign prediction of `row`: the argmax column, lowest index
/// on ties, `None` when the row is all zero.
pub fn mcfp(m: &CooccurrenceMatrix, row: usize) -> Result<Option<usize>> {
    if row >= m.rows() {
        return Err(Error::ClassOutOfRange {
            dataset: m.row_taxonomy_id.clone(),
            index: row,
            classes: m.rows(),
        });
    }
    Ok(argmax(m.row(row)).map(|(c, _)| c))
}

fn argmax(row: &[u64]) -> Option<(usize, u64)> {
    let mut best: Option<(usize, u64)> = None;
    for (c, &v) in row.iter().enumerate() {
        if v > 0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub taxonomy_a: Taxonomy,
    pub taxonomy_b: Taxonomy,
    out_a: Vec<Option<Edge>>,
    out_b: Vec<Option<Edge>>,
    removed: BTreeSet<Vertex>,
}

/// Builds the graph with taxonomies recovered from the matrices.
pub fn build_graph(m_ab: &CooccurrenceMatrix, m_ba: &CooccurrenceMatrix, opts: GraphOptions) -> Result<BipartiteGraph> {
    build_graph_with(&m_ab.row_taxonomy(), &m_ab.col_taxonomy(), m_ab, m_ba, opts)
}

pub fn build_graph_with(
    ta: &Taxonomy,
    tb: &Taxonomy,
    m_ab: &CooccurrenceMatrix,
    m_ba: &CooccurrenceMatrix,
    opts: GraphOptions,
) -> Result<BipartiteGraph> {
    check_matrix(m_ab, ta, tb)?;
    check_matrix(m_ba, tb, ta)?;
    let edges = |m: &CooccurrenceMatrix| -> Vec<Option<Edge>> {
        (0..m.rows())
            .map(|r| {
                let row = m.row(r);
                let total: u64 = row.iter().sum();
                argmax(row)
                    .filter(|&(_, count)| count as f64 >= opts.min_support * total as f64)
                    .map(|(target, count)| Edge { target, count })
            })
            .collect()
    };
    Ok(BipartiteGraph {
        taxonomy_a: ta.clone(),
        taxonomy_b: tb.clone(),
        out_a: edges(m_ab),
        out_b: edges(m_ba),
        removed: BTreeSet::new(),
    })
}

fn check_matrix(m: &CooccurrenceMatrix, rows: &Taxonomy, cols: &Taxonomy) -> Result<()> {
    for (found, t) in [(&m.row_taxonomy_id, rows), (&m.col_taxonomy_id, cols)] {
        if found != &t.dataset_id {
            return Err(Error::TaxonomyMismatch {
                expected: t.dataset_id.clone(),
                found: found.clone(),
            });
        }
    }
    if m.rows() != rows.len() || m.cols() != cols.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix for {} x {} taxonomies",
            m.rows(),
            m.cols(),
            rows.len(),
            cols.len()
        )));
    }
    Ok(())
}

impl BipartiteGraph {
    /// Graph from explicit per-vertex targets; used by loaders and tests.
    pub fn from_edges(
        taxonomy_a: Taxonomy,
        taxonomy_b: Taxonomy,
        out_a: Vec<Option<Edge>>,
        out_b: Vec<Option<Edge>>,
    ) -> Result<Self> {
        if out_a.len() != taxonomy_a.len() || out_b.len() != taxonomy_b.len() {
            return Err(Error::DimensionMismatch("edge list length differs from taxonomy".into()));
        }
        for (edges, t) in [(&out_a, &taxonomy_b), (&out_b, &taxonomy_a)] {
            if let Some(e) = edges.iter().flatten().find(|e| e.target >= t.len()) {
                return Err(Error::ClassOutOfRange {
                    dataset: t.dataset_id.clone(),
                    index: e.target,
                    classes: t.len(),
                });
            }
        }
        if taxonomy_a.dataset_id == taxonomy_b.dataset_id {
            return Err(Error::TaxonomyMismatch {
                expected: "two distinct taxonomies".into(),
                found: taxonomy_a.dataset_id,
            });
        }
        Ok(Self {
            taxonomy_a,
            taxonomy_b,
            out_a,
            out_b,
            removed: BTreeSet::new(),
        })
    }

    pub fn taxonomy(&self, side: Side) -> &Taxonomy {
        match side {
            Side::A => &self.taxonomy_a,
            Side::B => &self.taxonomy_b,
        }
    }

    pub fn side_len(&self, side: Side) -> usize {
        self.taxonomy(side).len()
    }

    pub fn vertex_count(&self) -> usize {
        self.out_a.len() + self.out_b.len()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> + '_ {
        (0..self.out_a.len())
            .map(Vertex::a)
            .chain((0..self.out_b.len()).map(Vertex::b))
    }

    pub fn out(&self, v: Vertex) -> Option<Edge> {
        match v.side {
            Side::A => self.out_a[v.index],
            Side::B => self.out_b[v.index],
        }
    }

    pub fn target(&self, v: Vertex) -> Option<Vertex> {
        self.out(v).map(|e| Vertex {
            side: v.side.other(),
            index: e.target,
        })
    }

    pub fn has_edge(&self, from: Vertex, to: Vertex) -> bool {
        self.target(from) == Some(to)
    }

    /// All directed edges as `(source, target, count)`, side A first.
    pub fn edges(&self) -> impl Iterator<Item = (Vertex, Vertex, u64)> + '_ {
        self.vertices()
            .filter_map(move |v| self.out(v).map(|e| (v, self.target(v).unwrap(), e.count)))
    }

    pub fn edge_count(&self) -> usize {
        self.out_a.iter().chain(&self.out_b).filter(|e| e.is_some()).count()
    }

    pub fn state(&self, v: Vertex) -> VertexState {
        if self.removed.contains(&v) {
            VertexState::Removed
        } else if self.out(v).is_some() {
            VertexState::Observed
        } else {
            VertexState::Unobserved
        }
    }

    pub fn class_ref(&self, v: Vertex) -> ClassRef {
        self.taxonomy(v.side).class_ref(v.index)
    }

    pub fn vertex_of(&self, c: &ClassRef) -> Option<Vertex> {
        let side = if c.dataset == self.taxonomy_a.dataset_id {
            Side::A
        } else if c.dataset == self.taxonomy_b.dataset_id {
            Side::B
        } else {
            return None;
        };
        (c.index() < self.side_len(side)).then_some(Vertex { side, index: c.index() })
    }

    pub fn name(&self, v: Vertex) -> String {
        self.taxonomy(v.side).qualified_name(v.index)
    }

    /// Deletes the outgoing edge of `v`, if any. Returns whether an edge
    /// was removed.
    pub fn remove_edge(&mut self, v: Vertex) -> bool {
        let slot = match v.side {
            Side::A => &mut self.out_a[v.index],
            Side::B => &mut self.out_b[v.index],
        };
        let had = slot.take().is_some();
        if had {
            self.removed.insert(v);
        }
        had
    }

    /// Removes the edges backing rejected subset hypotheses.
    pub fn without_hypotheses<'a, I>(&self, rejected: I) -> Result<BipartiteGraph>
    where
        I: IntoIterator<Item = &'a RelationHypothesis>,
    {
        let mut g = self.clone();
        for h in rejected {
            let from = g.vertex_of(&h.subject).ok_or_else(|| unknown(&h.subject))?;
            let to = g.vertex_of(&h.object).ok_or_else(|| unknown(&h.object))?;
            if g.has_edge(from, to) {
                g.remove_edge(from);
            }
        }
        Ok(g)
    }
}

fn unknown(c: &ClassRef) -> Error {
    Error::UnknownClass {
        dataset: c.dataset.clone(),
        class: c.class,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTag {
    Overlap,
    Subset,
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Classification {
    pub overlaps: Vec<RelationHypothesis>,
    pub subsets: Vec<RelationHypothesis>,
    pub conflicts: Vec<ConflictPair>,
    /// Per source vertex of every edge.
    #[serde(skip)]
    pub tags: BTreeMap<Vertex, EdgeTag>,
}

impl Classification {
    /// Overlaps and unconflicted subset hypotheses.
    pub fn base_relations(&self) -> Vec<RelationHypothesis> {
        self.overlaps.iter().chain(&self.subsets).cloned().collect()
    }

    pub fn tag_count(&self, tag: EdgeTag) -> usize {
        self.tags.values().filter(|&&t| t == tag).count()
    }
}

pub fn classify(g: &BipartiteGraph) -> Classification {
    let mut out = Classification::default();
    let mutual = |v: Vertex| g.target(v).is_some_and(|t| g.has_edge(t, v));

    for (v, t, count) in g.edges() {
        if mutual(v) {
            out.tags.insert(v, EdgeTag::Overlap);
            if v.side == Side::A {
                let back = g.out(t).map_or(0, |e| e.count);
                out.overlaps
                    .push(RelationHypothesis::overlap(g.class_ref(v), g.class_ref(t), count + back));
            }
        }
    }

    // inconsistent triplets x -> y -> z with z -/-> y
    for (x, y, count_xy) in g.edges() {
        if mutual(x) {
            continue;
        }
        let Some(z) = g.target(y) else { continue };
        if mutual(y) {
            continue;
        }
        let count_yz = g.out(y).unwrap().count;
        out.conflicts.push(ConflictPair {
            hypothesis_a: RelationHypothesis::subset(g.class_ref(x), g.class_ref(y), count_xy),
            hypothesis_b: RelationHypothesis::subset(g.class_ref(y), g.class_ref(z), count_yz),
            triplet: [g.class_ref(x), g.class_ref(y), g.class_ref(z)],
        });
        out.tags.insert(x, EdgeTag::Conflict);
        out.tags.insert(y, EdgeTag::Conflict);
    }

    for (v, t, count) in g.edges() {
        if let std::collections::btree_map::Entry::Vacant(e) = out.tags.entry(v) {
            e.insert(EdgeTag::Subset);
            out.subsets
                .push(RelationHypothesis::subset(g.class_ref(v), g.class_ref(t), count));
        }
    }

    out.overlaps.sort();
    out.subsets.sort();
    out.conflicts
        .sort_by(|p, q| p.triplet.cmp(&q.triplet));
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VertexRecord {
    dataset: String,
    class: u32,
    name: String,
    state: VertexState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EdgeRecord {
    source: ClassRef,
    target: ClassRef,
    count: u64,
    tag: EdgeTag,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GraphFile {
    taxonomy_a: Taxonomy,
    taxonomy_b: Taxonomy,
    vertices: Vec<VertexRecord>,
    edges: Vec<EdgeRecord>,
    classification: Classification,
}

impl BipartiteGraph {
    /// JSON export with vertices, tagged edges and the classification.
    pub fn to_json(&self) -> String {
        let cls = classify(self);
        let file = GraphFile {
            taxonomy_a: self.taxonomy_a.clone(),
            taxonomy_b: self.taxonomy_b.clone(),
            vertices: self
                .vertices()
                .map(|v| VertexRecord {
                    dataset: self.taxonomy(v.side).dataset_id.clone(),
                    class: v.index as u32,
                    name: self.name(v),
                    state: self.state(v),
                })
                .collect(),
            edges: self
                .edges()
                .map(|(s, t, count)| EdgeRecord {
                    source: self.class_ref(s),
                    target: self.class_ref(t),
                    count,
                    tag: cls.tags[&s],
                })
                .collect(),
            classification: cls,
        };
        let mut s = serde_json::to_string_pretty(&file).expect("graph serializes");
        s.push('\n');
        s
    }

    /// Loads a graph exported by [`BipartiteGraph::to_json`]. Tags and the
    /// classification are recomputed, not trusted.
    pub fn from_json(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s)?;
        let mut out_a = vec![None; file.taxonomy_a.len()];
        let mut out_b = vec![None; file.taxonomy_b.len()];
        let mut g = BipartiteGraph::from_edges(
            file.taxonomy_a.clone(),
            file.taxonomy_b.clone(),
            out_a.clone(),
            out_b.clone(),
        )?;
        for e in &file.edges {
            let s = g.vertex_of(&e.source).ok_or_else(|| unknown(&e.source))?;
            let t = g.vertex_of(&e.target).ok_or_else(|| unknown(&e.target))?;
            if s.side == t.side {
                return Err(Error::InvalidParameter(format!(
                    "edge {} -> {} stays within one taxonomy",
                    e.source, e.target
                )));
            }
            let slot = match s.side {
                Side::A => &mut out_a[s.index],
                Side::B => &mut out_b[s.index],
            };
            if slot.is_some() {
                return Err(Error::InvalidParameter(format!("{} has two outgoing edges", e.source)));
            }
            *slot = Some(Edge {
                target: t.index,
                count: e.count,
            });
        }
        g.out_a = out_a;
        g.out_b = out_b;
        for v in &file.vertices {
            if v.state == VertexState::Removed {
                let c = ClassRef::new(v.dataset.clone(), v.class);
                let vx = g.vertex_of(&c).ok_or_else(|| unknown(&c))?;
                g.removed.insert(vx);
            }
        }
        Ok(g)
    }

    /// Graphviz rendering: two columns of classes, edges colored by pattern.
    pub fn to_dot(&self) -> String {
        let cls = classify(self);
        let id = |v: Vertex| match v.side {
            Side::A => format!("a{}", v.index),
            Side::B => format!("b{}", v.index),
        };
        let mut s = String::from("digraph mcfp {\n  rankdir=LR;\n  node [shape=box];\n");
        for side in [Side::A, Side::B] {
            let t = self.taxonomy(side);
            let _ = writeln!(s, "  subgraph cluster_{} {{", if side == Side::A { "a" } else { "b" });
            let _ = writeln!(s, "    label={:?};", t.dataset_id);
            for i in 0..t.len() {
                let v = Vertex { side, index: i };
                let style = match self.state(v) {
                    VertexState::Observed => "",
                    VertexState::Unobserved => ", style=dashed",
                    VertexState::Removed => ", style=dotted",
                };
                let _ = writeln!(s, "    {} [label={:?}{style}];", id(v), self.name(v));
            }
            s.push_str("  }\n");
        }
        for (src, dst, count) in self.edges() {
            let color = match cls.tags[&src] {
                EdgeTag::Overlap => "green",
                EdgeTag::Subset => "orange",
                EdgeTag::Conflict => "red",
            };
            let _ = writeln!(s, "  {} -> {} [color={color}, label=\"{count}\"];", id(src), id(dst));
        }
        s.push_str("}\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::RelationKind;
    use proptest::prelude::*;

    fn tax(id: &str, n: usize) -> Taxonomy {
        Taxonomy::new(id, (0..n).map(|i| format!("c{i}")).collect())
    }

    fn graph(out_a: &[Option<usize>], out_b: &[Option<usize>]) -> BipartiteGraph {
        let e = |v: &[Option<usize>]| -> Vec<Option<Edge>> {
            v.iter()
                .map(|t| t.map(|target| Edge { target, count: 10 }))
                .collect()
        };
        BipartiteGraph::from_edges(tax("a", out_a.len()), tax("b", out_b.len()), e(out_a), e(out_b)).unwrap()
    }

    #[test]
    fn mcfp_is_row_argmax() {
        let m = CooccurrenceMatrix::from_counts(
            "a".into(),
            "b".into(),
            vec!["x".into(), "y".into()],
            vec!["p".into(), "q".into(), "r".into()],
            vec![0, 90, 10, 0, 0, 0],
        )
        .unwrap();
        assert_eq!(mcfp(&m, 0).unwrap(), Some(1));
        assert_eq!(mcfp(&m, 1).unwrap(), None);
        assert!(matches!(mcfp(&m, 2), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn mcfp_ties_pick_lowest_index() {
        assert_eq!(argmax(&[0, 5, 5, 1]), Some((1, 5)));
    }

    #[test]
    fn min_support_drops_weak_edges() {
        let ta = tax("a", 1);
        let tb = tax("b", 3);
        let m_ab = CooccurrenceMatrix::from_counts("a".into(), "b".into(), ta.classes.clone(), tb.classes.clone(), vec![4, 3, 3]).unwrap();
        let m_ba = CooccurrenceMatrix::from_counts("b".into(), "a".into(), tb.classes.clone(), ta.classes.clone(), vec![1, 1, 1]).unwrap();
        let g = build_graph(&m_ab, &m_ba, GraphOptions { min_support: 0.5 }).unwrap();
        assert_eq!(g.out(Vertex::a(0)), None);
        assert_eq!(g.out(Vertex::b(0)), Some(Edge { target: 0, count: 1 }));
        let g = build_graph(&m_ab, &m_ba, GraphOptions::default()).unwrap();
        assert_eq!(g.out(Vertex::a(0)), Some(Edge { target: 0, count: 4 }));
    }

    #[test]
    fn mismatched_matrices_are_rejected() {
        let ta = tax("a", 1);
        let tc = tax("c", 1);
        let m_ab = CooccurrenceMatrix::new(&ta, &tax("b", 1)).unwrap();
        let m_ca = CooccurrenceMatrix::new(&tc, &ta).unwrap();
        assert!(matches!(
            build_graph(&m_ab, &m_ca, GraphOptions::default()),
            Err(Error::TaxonomyMismatch { .. })
        ));
    }

    /// Matrices whose row argmax realizes the given targets.
    fn matrices(out_a: &[Option<usize>], out_b: &[Option<usize>]) -> (CooccurrenceMatrix, CooccurrenceMatrix) {
        let (na, nb) = (out_a.len(), out_b.len());
        let fill = |out: &[Option<usize>], cols: usize| -> Vec<u64> {
            let mut m = vec![0u64; out.len() * cols];
            for (r, t) in out.iter().enumerate() {
                if let Some(t) = t {
                    for c in 0..cols {
                        m[r * cols + c] = 1;
                    }
                    m[r * cols + t] = 50 + r as u64;
                }
            }
            m
        };
        let (ta, tb) = (tax("a", na), tax("b", nb));
        (
            CooccurrenceMatrix::from_counts("a".into(), "b".into(), ta.classes.clone(), tb.classes.clone(), fill(out_a, nb)).unwrap(),
            CooccurrenceMatrix::from_counts("b".into(), "a".into(), tb.classes, ta.classes, fill(out_b, na)).unwrap(),
        )
    }

    #[test]
    fn seven_by_seven_toy() {
        let out_a = [Some(0), Some(1), Some(2), Some(0), Some(4), None, Some(6)];
        let out_b = [Some(0), Some(1), Some(2), Some(1), Some(5), Some(6), None];
        let (m_ab, m_ba) = matrices(&out_a, &out_b);
        let g = build_graph(&m_ab, &m_ba, GraphOptions::default()).unwrap();
        let c = classify(&g);
        assert_eq!(c.overlaps.len(), 3);
        assert_eq!(c.subsets.len(), 2);
        assert_eq!(c.conflicts.len(), 2);
        let triplets: Vec<String> = c
            .conflicts
            .iter()
            .map(|p| p.triplet.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" "))
            .collect();
        assert_eq!(triplets, ["a:4 b:4 a:5", "b:5 a:6 b:6"]);
        let subsets: Vec<String> = c.subsets.iter().map(|h| h.to_string()).collect();
        assert_eq!(subsets, ["a:3 < b:0", "b:3 < a:1"]);
        assert_eq!(g.state(Vertex::a(5)), VertexState::Unobserved);
        assert_eq!(g.state(Vertex::b(6)), VertexState::Unobserved);
        assert_eq!(c.tag_count(EdgeTag::Overlap), 6);
        assert_eq!(c.tag_count(EdgeTag::Conflict), 4);
    }

    #[test]
    fn identity_matching_is_all_overlaps() {
        let g = graph(&[Some(0), Some(1), Some(2)], &[Some(0), Some(1), Some(2)]);
        let c = classify(&g);
        assert_eq!(c.overlaps.len(), 3);
        assert!(c.subsets.is_empty());
        assert!(c.conflicts.is_empty());
        assert_eq!(c.overlaps[0].support, 20);
    }

    #[test]
    fn incoming_edge_to_overlap_is_a_subset_not_a_conflict() {
        // a0 <-> b0, a1 -> b0
        let g = graph(&[Some(0), Some(0)], &[Some(0)]);
        let c = classify(&g);
        assert_eq!(c.overlaps.len(), 1);
        assert!(c.conflicts.is_empty());
        assert_eq!(c.subsets.len(), 1);
        assert_eq!(c.subsets[0].kind, RelationKind::Subset);
        assert_eq!(c.subsets[0].subject, ClassRef::new("a", 1));
        assert_eq!(c.subsets[0].object, ClassRef::new("b", 0));
    }

    #[test]
    fn triplet_yields_competing_hypotheses() {
        // a0 -> b0 -> a1, a1 unobserved
        let g = graph(&[Some(0), None], &[Some(1)]);
        let c = classify(&g);
        assert_eq!(c.conflicts.len(), 1);
        let p = &c.conflicts[0];
        assert_eq!(p.hypothesis_a.subject, ClassRef::new("a", 0));
        assert_eq!(p.hypothesis_a.object, ClassRef::new("b", 0));
        assert_eq!(p.hypothesis_b.subject, ClassRef::new("b", 0));
        assert_eq!(p.hypothesis_b.object, ClassRef::new("a", 1));
        assert!(c.subsets.is_empty());
    }

    #[test]
    fn shared_outgoing_edge_forms_one_pair_per_incoming_edge() {
        // a0 -> b0, a1 -> b0, b0 -> a2, a2 -> b1, b1 -> a2
        let g = graph(&[Some(0), Some(0), Some(1)], &[Some(2), Some(2)]);
        let c = classify(&g);
        assert_eq!(c.conflicts.len(), 2);
        assert_eq!(c.overlaps.len(), 1);
        assert_eq!(c.tag_count(EdgeTag::Conflict), 3);
    }

    #[test]
    fn removing_edges_marks_vertices() {
        let mut g = graph(&[Some(0), None], &[Some(1)]);
        assert_eq!(g.state(Vertex::a(1)), VertexState::Unobserved);
        assert!(g.remove_edge(Vertex::b(0)));
        assert!(!g.remove_edge(Vertex::b(0)));
        assert_eq!(g.state(Vertex::b(0)), VertexState::Removed);
        assert!(classify(&g).conflicts.is_empty());
    }

    #[test]
    fn json_round_trip() {
        let mut g = graph(&[Some(0), Some(0), None], &[Some(0), Some(2)]);
        g.remove_edge(Vertex::a(2));
        let s = g.to_json();
        let back = BipartiteGraph::from_json(&s).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.to_json(), s);
        assert!(g.to_dot().contains("color=green"));
    }

    /// Exhaustive enumeration over all vertex pairs and triplets.
    fn brute_force(g: &BipartiteGraph) -> (BTreeSet<(Vertex, Vertex)>, BTreeSet<(Vertex, Vertex, Vertex)>, BTreeSet<Vertex>) {
        let vs: Vec<Vertex> = g.vertices().collect();
        let mut overlaps = BTreeSet::new();
        let mut triplets = BTreeSet::new();
        for &x in &vs {
            for &y in &vs {
                if x.side != y.side && g.has_edge(x, y) && g.has_edge(y, x) && x.side == Side::A {
                    overlaps.insert((x, y));
                }
                for &z in &vs {
                    if x.side == z.side
                        && x != z
                        && y.side != x.side
                        && g.has_edge(x, y)
                        && g.has_edge(y, z)
                        && !g.has_edge(z, y)
                        && !g.has_edge(y, x)
                    {
                        triplets.insert((x, y, z));
                    }
                }
            }
        }
        let in_conflict: BTreeSet<Vertex> = triplets.iter().flat_map(|&(x, y, _)| [x, y]).collect();
        let subsets = vs
            .iter()
            .copied()
            .filter(|&v| {
                g.target(v)
                    .is_some_and(|t| !g.has_edge(t, v) && !in_conflict.contains(&v))
            })
            .collect();
        (overlaps, triplets, subsets)
    }

    fn arb_graph() -> impl Strategy<Value = BipartiteGraph> {
        (1usize..7, 1usize..7).prop_flat_map(|(na, nb)| {
            (
                prop::collection::vec(prop::option::weighted(0.9, 0..nb), na),
                prop::collection::vec(prop::option::weighted(0.9, 0..na), nb),
            )
                .prop_map(|(a, b)| graph(&a, &b))
        })
    }

    proptest! {
        #[test]
        fn classification_matches_triplet_scan(g in arb_graph()) {
            let c = classify(&g);
            let (overlaps, triplets, subsets) = brute_force(&g);
            let got_overlaps: BTreeSet<(Vertex, Vertex)> = c
                .overlaps
                .iter()
                .map(|h| {
                    let (x, y) = (g.vertex_of(&h.subject).unwrap(), g.vertex_of(&h.object).unwrap());
                    if x.side == Side::A { (x, y) } else { (y, x) }
                })
                .collect();
            prop_assert_eq!(got_overlaps, overlaps);
            let got_triplets: BTreeSet<_> = c
                .conflicts
                .iter()
                .map(|p| {
                    let [x, y, z] = &p.triplet;
                    (g.vertex_of(x).unwrap(), g.vertex_of(y).unwrap(), g.vertex_of(z).unwrap())
                })
                .collect();
            prop_assert_eq!(got_triplets.len(), c.conflicts.len());
            prop_assert_eq!(got_triplets, triplets);
            let got_subsets: BTreeSet<Vertex> = c.subsets.iter().map(|h| g.vertex_of(&h.subject).unwrap()).collect();
            prop_assert_eq!(got_subsets, subsets);
        }

        #[test]
        fn every_edge_is_tagged_exactly_once(g in arb_graph()) {
            let c = classify(&g);
            prop_assert_eq!(c.tags.len(), g.edge_count());
            let conflict_edges: BTreeSet<Vertex> = c
                .conflicts
                .iter()
                .flat_map(|p| [g.vertex_of(&p.triplet[0]).unwrap(), g.vertex_of(&p.triplet[1]).unwrap()])
                .collect();
            prop_assert_eq!(
                2 * c.overlaps.len() + c.subsets.len() + conflict_edges.len(),
                g.edge_count()
            );
        }

        #[test]
        fn classification_commutes_with_relabeling(
            g in arb_graph(),
            seed in any::<u64>(),
        ) {
            let perm = |n: usize, salt: u64| -> Vec<usize> {
                let mut p: Vec<usize> = (0..n).collect();
                let mut s = seed ^ salt;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    p.swap(i, (s >> 33) as usize % (i + 1));
                }
                p
            };
            let na = g.side_len(Side::A);
            let nb = g.side_len(Side::B);
            let (pa, pb) = (perm(na, 1), perm(nb, 2));
            let mut out_a = vec![None; na];
            let mut out_b = vec![None; nb];
            for v in g.vertices() {
                let e = g.out(v).map(|e| Edge {
                    target: if v.side == Side::A { pb[e.target] } else { pa[e.target] },
                    count: e.count,
                });
                match v.side {
                    Side::A => out_a[pa[v.index]] = e,
                    Side::B => out_b[pb[v.index]] = e,
                }
            }
            let h = BipartiteGraph::from_edges(g.taxonomy_a.clone(), g.taxonomy_b.clone(), out_a, out_b).unwrap();
            let map = |c: &ClassRef| -> ClassRef {
                let p = if c.dataset == "a" { &pa } else { &pb };
                ClassRef::new(c.dataset.clone(), p[c.index()] as u32)
            };
            let relabel = |hs: &[RelationHypothesis]| -> BTreeSet<RelationHypothesis> {
                hs.iter()
                    .map(|r| match r.kind {
                        RelationKind::Overlap => RelationHypothesis::overlap(map(&r.subject), map(&r.object), r.support),
                        RelationKind::Subset => RelationHypothesis::subset(map(&r.subject), map(&r.object), r.support),
                    })
                    .collect()
            };
            let (cg, ch) = (classify(&g), classify(&h));
            prop_assert_eq!(relabel(&cg.overlaps), ch.overlaps.iter().cloned().collect::<BTreeSet<_>>());
            prop_assert_eq!(relabel(&cg.subsets), ch.subsets.iter().cloned().collect::<BTreeSet<_>>());
            let trip = |ps: &[ConflictPair], f: &dyn Fn(&ClassRef) -> ClassRef| -> BTreeSet<[ClassRef; 3]> {
                ps.iter().map(|p| [f(&p.triplet[0]), f(&p.triplet[1]), f(&p.triplet[2])]).collect()
            };
            prop_assert_eq!(trip(&cg.conflicts, &map), trip(&ch.conflicts, &|c: &ClassRef| c.clone()));
        }
    }
}
