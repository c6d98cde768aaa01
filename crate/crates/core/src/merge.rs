//! Pairwise unification, merge schedules and mapping composition.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{build_graph_with, classify, BipartiteGraph, Classification, GraphOptions};
use crate::ingest::CooccurrenceMatrix;
use crate::resolve::{resolve, CountingEvaluator, EvalData, RelationSet, Resolution};
use crate::taxonomy::{ClassRef, Taxonomy, UniversalClass, UniversalTaxonomy};
use crate::universal::build_universal;

/// Binary merge tree over dataset ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MergeSchedule {
    Leaf(String),
    Merge(Box<MergeSchedule>, Box<MergeSchedule>),
}

impl MergeSchedule {
    pub fn merge(a: MergeSchedule, b: MergeSchedule) -> Self {
        MergeSchedule::Merge(Box::new(a), Box::new(b))
    }

    /// Tournament bracket pairing neighbours left to right.
    pub fn default_for(datasets: &[String]) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::InvalidSchedule("no datasets".into()));
        }
        let mut level: Vec<MergeSchedule> = datasets.iter().cloned().map(MergeSchedule::Leaf).collect();
        while level.len() > 1 {
            let mut next = Vec::with_capacity(level.len().div_ceil(2));
            let mut it = level.into_iter();
            while let Some(a) = it.next() {
                next.push(match it.next() {
                    Some(b) => MergeSchedule::merge(a, b),
                    None => a,
                });
            }
            level = next;
        }
        Ok(level.pop().unwrap())
    }

    /// Parses nested JSON arrays of dataset ids. Arrays with more than two
    /// entries are folded from the left.
    pub fn from_json(s: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(s)?;
        Self::from_value(&v)
    }

    fn from_value(v: &Value) -> Result<Self> {
        match v {
            Value::String(s) => Ok(MergeSchedule::Leaf(s.clone())),
            Value::Array(items) if !items.is_empty() => {
                let mut parts = items.iter().map(Self::from_value);
                let mut acc = parts.next().unwrap()?;
                for p in parts {
                    acc = MergeSchedule::merge(acc, p?);
                }
                Ok(acc)
            }
            other => Err(Error::InvalidSchedule(format!("expected a dataset id or non-empty array, got {other}"))),
        }
    }

    pub fn to_json(&self) -> String {
        fn value(s: &MergeSchedule) -> Value {
            match s {
                MergeSchedule::Leaf(id) => Value::String(id.clone()),
                MergeSchedule::Merge(a, b) => Value::Array(vec![value(a), value(b)]),
            }
        }
        value(self).to_string()
    }

    pub fn leaves(&self) -> Vec<String> {
        match self {
            MergeSchedule::Leaf(id) => vec![id.clone()],
            MergeSchedule::Merge(a, b) => {
                let mut l = a.leaves();
                l.extend(b.leaves());
                l
            }
        }
    }

    /// Every dataset must appear in exactly one leaf.
    pub fn validate(&self, datasets: &[String]) -> Result<()> {
        let leaves = self.leaves();
        let mut seen = BTreeSet::new();
        for l in &leaves {
            if !seen.insert(l) {
                return Err(Error::InvalidSchedule(format!("`{l}` appears twice")));
            }
            if !datasets.contains(l) {
                return Err(Error::InvalidSchedule(format!("unknown dataset `{l}`")));
            }
        }
        if let Some(missing) = datasets.iter().find(|d| !seen.contains(d)) {
            return Err(Error::InvalidSchedule(format!("`{missing}` is not scheduled")));
        }
        Ok(())
    }
}

/// Either an original dataset or the result of a merge.
#[derive(Debug, Clone, PartialEq)]
pub enum MergeNode {
    Leaf(Taxonomy),
    Meta(Box<MetaDataset>),
}

impl MergeNode {
    pub fn id(&self) -> &str {
        match self {
            MergeNode::Leaf(t) => &t.dataset_id,
            MergeNode::Meta(m) => &m.id,
        }
    }

    /// Flat taxonomy used when this node takes part in a merge.
    pub fn taxonomy(&self) -> &Taxonomy {
        match self {
            MergeNode::Leaf(t) => t,
            MergeNode::Meta(m) => &m.taxonomy,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, MergeNode::Leaf(_))
    }

    pub fn member_datasets(&self) -> Vec<String> {
        match self {
            MergeNode::Leaf(t) => vec![t.dataset_id.clone()],
            MergeNode::Meta(m) => m.member_datasets.clone(),
        }
    }
}

/// Result of unifying two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaDataset {
    pub id: String,
    pub member_datasets: Vec<String>,
    pub taxonomy: Taxonomy,
    /// Universal taxonomy of this merge; mappings are keyed by child ids.
    pub universal: UniversalTaxonomy,
    pub left: MergeNode,
    pub right: MergeNode,
    pub graph: BipartiteGraph,
    pub classification: Classification,
    pub resolution: Resolution,
    /// Calls made to the mIoU evaluator during the tournament.
    pub evaluator_calls: usize,
}

/// Meta-dataset id, with nested merges parenthesized.
pub fn meta_id(a: &MergeNode, b: &MergeNode) -> String {
    let wrap = |n: &MergeNode| match n {
        MergeNode::Leaf(_) => n.id().to_owned(),
        MergeNode::Meta(_) => format!("({})", n.id()),
    };
    format!("{}+{}", wrap(a), wrap(b))
}

/// Evidence for unifying two nodes: matrices in both directions and
/// evaluation records over the concatenated space.
#[derive(Debug, Clone)]
pub struct Evidence {
    pub m_ab: CooccurrenceMatrix,
    pub m_ba: CooccurrenceMatrix,
    pub eval: EvalData,
}

pub trait EvidenceSource {
    fn evidence(&mut self, a: &MergeNode, b: &MergeNode) -> Result<Evidence>;

    /// Called after each merge so the source can model the new node.
    fn on_merged(&mut self, _meta: &MetaDataset) -> Result<()> {
        Ok(())
    }
}

/// The pairwise pipeline: graph, classification, tournament, universal
/// taxonomy.
pub fn merge_pair(a: MergeNode, b: MergeNode, evidence: Evidence, opts: GraphOptions) -> Result<MetaDataset> {
    let (ta, tb) = (a.taxonomy().clone(), b.taxonomy().clone());
    let graph = build_graph_with(&ta, &tb, &evidence.m_ab, &evidence.m_ba, opts)?;
    let classification = classify(&graph);
    let base: RelationSet = classification.base_relations().into_iter().collect();
    let datasets = evidence.eval.datasets();
    let mut evaluator = CountingEvaluator::new(evidence.eval);
    let resolution = resolve(&classification.conflicts, &base, &datasets, &mut evaluator)?;
    let evaluator_calls = evaluator.calls;
    let resolved = graph.without_hypotheses(&resolution.rejected)?;
    let universal = build_universal(&resolved)?;
    let id = meta_id(&a, &b);
    let mut member_datasets = a.member_datasets();
    member_datasets.extend(b.member_datasets());
    Ok(MetaDataset {
        taxonomy: universal.as_taxonomy(id.clone()),
        id,
        member_datasets,
        universal,
        left: a,
        right: b,
        graph: resolved,
        classification,
        resolution,
        evaluator_calls,
    })
}

/// Runs every merge of `schedule` bottom-up, left subtree first.
pub fn run_schedule<S: EvidenceSource>(
    schedule: &MergeSchedule,
    leaves: &BTreeMap<String, Taxonomy>,
    source: &mut S,
    opts: GraphOptions,
) -> Result<MergeNode> {
    schedule.validate(&leaves.keys().cloned().collect::<Vec<_>>())?;
    run(schedule, leaves, source, opts)
}

fn run<S: EvidenceSource>(
    schedule: &MergeSchedule,
    leaves: &BTreeMap<String, Taxonomy>,
    source: &mut S,
    opts: GraphOptions,
) -> Result<MergeNode> {
    match schedule {
        MergeSchedule::Leaf(id) => Ok(MergeNode::Leaf(leaves[id].clone())),
        MergeSchedule::Merge(l, r) => {
            let a = run(l, leaves, source, opts)?;
            let b = run(r, leaves, source, opts)?;
            let evidence = source.evidence(&a, &b)?;
            let meta = merge_pair(a, b, evidence, opts)?;
            source.on_merged(&meta)?;
            Ok(MergeNode::Meta(Box::new(meta)))
        }
    }
}

/// Per original dataset, the composition of intermediate mappings down to
/// the classes of `node`.
pub fn compose_mappings(node: &MergeNode) -> Result<BTreeMap<String, Vec<Vec<u32>>>> {
    match node {
        MergeNode::Leaf(t) => Ok([(t.dataset_id.clone(), (0..t.len() as u32).map(|c| vec![c]).collect())].into()),
        MergeNode::Meta(m) => {
            let mut out = BTreeMap::new();
            for child in [&m.left, &m.right] {
                let step = m
                    .universal
                    .mapping(child.id())
                    .ok_or_else(|| Error::BrokenChain(format!("`{}` has no mapping for `{}`", m.id, child.id())))?;
                for (dataset, inner) in compose_mappings(child)? {
                    let mut composed = Vec::with_capacity(inner.len());
                    for (c, us) in inner.iter().enumerate() {
                        let mut set = BTreeSet::new();
                        for &u in us {
                            let next = step.get(u as usize).ok_or_else(|| {
                                Error::BrokenChain(format!("`{}` class {u} is not mapped by `{}`", child.id(), m.id))
                            })?;
                            set.extend(next.iter().copied());
                        }
                        if set.is_empty() {
                            return Err(Error::BrokenChain(format!("{dataset}:{c} maps to nothing in `{}`", m.id)));
                        }
                        composed.push(set.into_iter().collect());
                    }
                    out.insert(dataset, composed);
                }
            }
            Ok(out)
        }
    }
}

/// Final universal taxonomy over the original datasets: members are
/// original classes and mappings are composed.
pub fn flatten(node: &MergeNode) -> Result<UniversalTaxonomy> {
    let mappings = compose_mappings(node)?;
    let universal_classes = match node {
        MergeNode::Leaf(t) => (0..t.len())
            .map(|c| UniversalClass {
                name: t.qualified_name(c),
                members: vec![t.class_ref(c)],
            })
            .collect(),
        MergeNode::Meta(m) => m
            .universal
            .universal_classes
            .iter()
            .map(|u| {
                let mut members = Vec::new();
                for r in &u.members {
                    members.extend(original_members(m, r)?);
                }
                members.sort();
                Ok(UniversalClass {
                    name: u.name.clone(),
                    members,
                })
            })
            .collect::<Result<_>>()?,
    };
    Ok(UniversalTaxonomy {
        universal_classes,
        mappings,
    })
}

fn original_members(m: &MetaDataset, r: &ClassRef) -> Result<Vec<ClassRef>> {
    let child = [&m.left, &m.right]
        .into_iter()
        .find(|c| c.id() == r.dataset)
        .ok_or_else(|| Error::BrokenChain(format!("member {r} is not a child of `{}`", m.id)))?;
    match child {
        MergeNode::Leaf(_) => Ok(vec![r.clone()]),
        MergeNode::Meta(inner) => {
            let u = inner
                .universal
                .universal_classes
                .get(r.index())
                .ok_or_else(|| Error::BrokenChain(format!("member {r} out of range")))?;
            let mut out = Vec::new();
            for x in &u.members {
                out.extend(original_members(inner, x)?);
            }
            Ok(out)
        }
    }
}

/// Every merge node of the tree, children before parents.
pub fn merges(node: &MergeNode) -> Vec<&MetaDataset> {
    match node {
        MergeNode::Leaf(_) => Vec::new(),
        MergeNode::Meta(m) => {
            let mut out = merges(&m.left);
            out.extend(merges(&m.right));
            out.push(m);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn schedule_json_nesting_and_folding() {
        let s = MergeSchedule::from_json(r#"[["bdd","city"],["idd","vistas"]]"#).unwrap();
        assert_eq!(s.to_json(), r#"[["bdd","city"],["idd","vistas"]]"#);
        let folded = MergeSchedule::from_json(r#"["a","b","c"]"#).unwrap();
        assert_eq!(folded.to_json(), r#"[["a","b"],"c"]"#);
        assert!(MergeSchedule::from_json("[]").is_err());
        assert!(MergeSchedule::from_json("[1]").is_err());
    }

    #[test]
    fn default_schedule_is_a_bracket() {
        let s = MergeSchedule::default_for(&ids(&["a", "b", "c", "d", "e", "f", "g"])).unwrap();
        assert_eq!(s.to_json(), r#"[[["a","b"],["c","d"]],[["e","f"],"g"]]"#);
        assert_eq!(MergeSchedule::default_for(&ids(&["a"])).unwrap(), MergeSchedule::Leaf("a".into()));
    }

    #[test]
    fn schedule_validation() {
        let s = MergeSchedule::from_json(r#"[["a","b"],"a"]"#).unwrap();
        assert!(s.validate(&ids(&["a", "b"])).is_err());
        let s = MergeSchedule::from_json(r#"["a","b"]"#).unwrap();
        assert!(s.validate(&ids(&["a", "b", "c"])).is_err());
        assert!(s.validate(&ids(&["a"])).is_err());
        assert!(s.validate(&ids(&["b", "a"])).is_ok());
    }

    #[test]
    fn meta_ids_parenthesize_nested_merges() {
        let leaf = |id: &str| MergeNode::Leaf(Taxonomy::new(id, vec!["x".into()]));
        assert_eq!(meta_id(&leaf("a"), &leaf("b")), "a+b");
    }

    #[test]
    fn leaf_composition_is_identity() {
        let t = Taxonomy::new("a", vec!["x".into(), "y".into()]);
        let node = MergeNode::Leaf(t);
        assert_eq!(compose_mappings(&node).unwrap()["a"], vec![vec![0], vec![1]]);
        assert_eq!(flatten(&node).unwrap().names(), ["a-x", "a-y"]);
    }
}
