//! Sequential conflict tournament scored by averaged train mIoU.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ClassRef, ConflictPair, RelationHypothesis};

use super::miou::{evaluate_checked, EvalRecord};
use super::relations::{ConcatSpace, RelationSet};

/// Anything that can score a relation set on one dataset.
pub trait MiouEvaluator {
    fn evaluate(&mut self, dataset: &str, relations: &RelationSet) -> Result<f64>;
}

impl<E: MiouEvaluator + ?Sized> MiouEvaluator for &mut E {
    fn evaluate(&mut self, dataset: &str, relations: &RelationSet) -> Result<f64> {
        (**self).evaluate(dataset, relations)
    }
}

/// Validated evaluation records for every dataset of a concatenated pair.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub space: ConcatSpace,
    records: BTreeMap<String, Vec<EvalRecord>>,
}

impl EvalData {
    pub fn new(space: ConcatSpace, records: BTreeMap<String, Vec<EvalRecord>>) -> Result<Self> {
        for (dataset, recs) in &records {
            if recs.is_empty() {
                return Err(Error::EmptyRecords(dataset.clone()));
            }
            for r in recs {
                r.check(&space, dataset)?;
            }
        }
        Ok(Self { space, records })
    }

    pub fn datasets(&self) -> Vec<String> {
        self.records.keys().cloned().collect()
    }

    pub fn records(&self, dataset: &str) -> Option<&[EvalRecord]> {
        self.records.get(dataset).map(Vec::as_slice)
    }
}

impl MiouEvaluator for EvalData {
    fn evaluate(&mut self, dataset: &str, relations: &RelationSet) -> Result<f64> {
        let records = self
            .records
            .get(dataset)
            .ok_or_else(|| Error::EmptyRecords(dataset.to_owned()))?;
        Ok(evaluate_checked(records, &self.space, dataset, relations)?.miou)
    }
}

/// Wraps an evaluator and counts its calls.
#[derive(Debug, Clone)]
pub struct CountingEvaluator<E> {
    pub inner: E,
    pub calls: usize,
}

impl<E> CountingEvaluator<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, calls: 0 }
    }
}

impl<E: MiouEvaluator> MiouEvaluator for CountingEvaluator<E> {
    fn evaluate(&mut self, dataset: &str, relations: &RelationSet) -> Result<f64> {
        self.calls += 1;
        self.inner.evaluate(dataset, relations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Decided by this round's scores.
    Tournament,
    /// One edge was already kept by an earlier round; it wins again.
    Reused,
    /// One edge was already deleted, so the pair is no longer in conflict.
    Dissolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionRecord {
    pub order: usize,
    pub triplet: [ClassRef; 3],
    pub hypothesis_a: RelationHypothesis,
    pub hypothesis_b: RelationHypothesis,
    pub miou_a: BTreeMap<String, f64>,
    pub miou_b: BTreeMap<String, f64>,
    pub mean_a: f64,
    pub mean_b: f64,
    pub outcome: Outcome,
    pub winner: Option<Choice>,
    pub removed: Option<RelationHypothesis>,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    /// Base relations plus every conflict hypothesis that survived.
    pub relations: RelationSet,
    pub kept: Vec<RelationHypothesis>,
    pub rejected: Vec<RelationHypothesis>,
    pub log: Vec<ResolutionRecord>,
    pub evaluations: usize,
}

impl Resolution {
    /// One JSON object per resolved pair.
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EdgeState {
    Kept,
    Deleted,
}

/// Deterministic processing order: descending combined support, then
/// canonical triplet order.
pub fn conflict_order(conflicts: &[ConflictPair]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..conflicts.len()).collect();
    order.sort_by(|&i, &j| {
        let (p, q) = (&conflicts[i], &conflicts[j]);
        q.combined_support()
            .cmp(&p.combined_support())
            .then_with(|| p.triplet.cmp(&q.triplet))
            .then_with(|| p.hypothesis_a.cmp(&q.hypothesis_a))
    });
    order
}

/// Resolves conflict pairs one at a time. Every pair costs exactly two
/// evaluations per dataset, so the total is `2 * conflicts * datasets`.
pub fn resolve<E: MiouEvaluator>(
    conflicts: &[ConflictPair],
    base: &RelationSet,
    datasets: &[String],
    evaluator: &mut E,
) -> Result<Resolution> {
    if !conflicts.is_empty() && datasets.is_empty() {
        return Err(Error::InvalidParameter("conflict resolution needs at least one dataset".into()));
    }
    let mut states: BTreeMap<ClassRef, (EdgeState, RelationHypothesis)> = BTreeMap::new();
    let mut log = Vec::with_capacity(conflicts.len());
    let mut evaluations = 0;

    for (order, i) in conflict_order(conflicts).into_iter().enumerate() {
        let pair = &conflicts[i];
        let (ha, hb) = (&pair.hypothesis_a, &pair.hypothesis_b);
        let mut accepted = base.clone();
        for (state, h) in states.values() {
            if *state == EdgeState::Kept {
                accepted.insert(h.clone());
            }
        }

        let mut scores = [BTreeMap::new(), BTreeMap::new()];
        for (h, out) in [ha, hb].into_iter().zip(scores.iter_mut()) {
            let candidate = accepted.with(h);
            for d in datasets {
                out.insert(d.clone(), evaluator.evaluate(d, &candidate)?);
                evaluations += 1;
            }
        }
        let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / datasets.len() as f64;
        let (mean_a, mean_b) = (mean(&scores[0]), mean(&scores[1]));

        let state = |h: &RelationHypothesis| states.get(&h.subject).map(|s| s.0);
        let (sa, sb) = (state(ha), state(hb));
        let (outcome, winner) = if sa == Some(EdgeState::Deleted) || sb == Some(EdgeState::Deleted) {
            (Outcome::Dissolved, None)
        } else {
            match (sa, sb) {
                (Some(EdgeState::Kept), None) => (Outcome::Reused, Some(Choice::A)),
                (None, Some(EdgeState::Kept)) => (Outcome::Reused, Some(Choice::B)),
                _ => {
                    let by_score = mean_a.partial_cmp(&mean_b).unwrap_or(Ordering::Equal);
                    let by_support = ha.support.cmp(&hb.support);
                    let w = match by_score.then(by_support) {
                        Ordering::Less => Choice::B,
                        _ => Choice::A,
                    };
                    (Outcome::Tournament, Some(w))
                }
            }
        };

        let removed = winner.map(|w| {
            let (win, lose) = match w {
                Choice::A => (ha, hb),
                Choice::B => (hb, ha),
            };
            states.insert(win.subject.clone(), (EdgeState::Kept, win.clone()));
            states.insert(lose.subject.clone(), (EdgeState::Deleted, lose.clone()));
            lose.clone()
        });

        let [miou_a, miou_b] = scores;
        log.push(ResolutionRecord {
            order,
            triplet: pair.triplet.clone(),
            hypothesis_a: ha.clone(),
            hypothesis_b: hb.clone(),
            miou_a,
            miou_b,
            mean_a,
            mean_b,
            outcome,
            winner,
            removed,
            evaluations,
        });
    }

    let mut kept = BTreeMap::new();
    let mut rejected = BTreeMap::new();
    for h in conflicts.iter().flat_map(|p| [&p.hypothesis_a, &p.hypothesis_b]) {
        match states.get(&h.subject) {
            Some((EdgeState::Deleted, _)) => rejected.insert(h.subject.clone(), h.clone()),
            _ => kept.insert(h.subject.clone(), h.clone()),
        };
    }
    let mut relations = base.clone();
    for h in kept.values() {
        relations.insert(h.clone());
    }
    Ok(Resolution {
        relations,
        kept: kept.into_values().collect(),
        rejected: rejected.into_values().collect(),
        log,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{classify, BipartiteGraph, Edge};
    use crate::taxonomy::Taxonomy;

    struct Scripted<F>(F);

    impl<F: FnMut(&str, &RelationSet) -> f64> MiouEvaluator for Scripted<F> {
        fn evaluate(&mut self, dataset: &str, relations: &RelationSet) -> Result<f64> {
            Ok((self.0)(dataset, relations))
        }
    }

    fn tax(id: &str, n: usize) -> Taxonomy {
        Taxonomy::new(id, (0..n).map(|i| format!("c{i}")).collect())
    }

    fn graph(out_a: &[Option<(usize, u64)>], out_b: &[Option<(usize, u64)>]) -> BipartiteGraph {
        let e = |v: &[Option<(usize, u64)>]| v.iter().map(|t| t.map(|(target, count)| Edge { target, count })).collect();
        BipartiteGraph::from_edges(tax("a", out_a.len()), tax("b", out_b.len()), e(out_a), e(out_b)).unwrap()
    }

    fn datasets() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    fn sub(s: (&str, u32), o: (&str, u32)) -> (ClassRef, ClassRef) {
        (ClassRef::new(s.0, s.1), ClassRef::new(o.0, o.1))
    }

    fn has(r: &RelationSet, (s, o): &(ClassRef, ClassRef)) -> bool {
        r.iter().any(|h| &h.subject == s && &h.object == o)
    }

    #[test]
    fn single_conflict_costs_four_evaluations() {
        // a0 -> b0 -> a1
        let g = graph(&[Some((0, 5)), None], &[Some((1, 9))]);
        let c = classify(&g);
        assert_eq!(c.conflicts.len(), 1);
        let prefer = sub(("b", 0), ("a", 1));
        let mut ev = CountingEvaluator::new(Scripted(|_: &str, r: &RelationSet| if has(r, &prefer) { 0.9 } else { 0.4 }));
        let res = resolve(&c.conflicts, &c.base_relations().into_iter().collect(), &datasets(), &mut ev).unwrap();
        assert_eq!((ev.calls, res.evaluations), (4, 4));
        assert_eq!(res.log[0].winner, Some(Choice::B));
        assert_eq!(res.rejected, vec![c.conflicts[0].hypothesis_a.clone()]);
        let resolved = g.without_hypotheses(&res.rejected).unwrap();
        assert!(classify(&resolved).conflicts.is_empty());
    }

    #[test]
    fn six_conflicts_cost_twenty_four_evaluations() {
        // six disjoint chains a(2i) -> b(i) -> a(2i+1)
        let out_a: Vec<_> = (0..12).map(|i| (i % 2 == 0).then_some((i / 2, 3))).collect();
        let out_b: Vec<_> = (0..6).map(|j| Some((2 * j + 1, 4))).collect();
        let c = classify(&graph(&out_a, &out_b));
        assert_eq!(c.conflicts.len(), 6);
        let mut ev = CountingEvaluator::new(Scripted(|_: &str, _: &RelationSet| 0.5));
        let res = resolve(&c.conflicts, &RelationSet::new(), &datasets(), &mut ev).unwrap();
        assert_eq!(ev.calls, 24);
        assert_eq!(res.log.last().unwrap().evaluations, 24);
        // equal scores fall back to support: b-side edges carry 4 > 3
        assert!(res.log.iter().all(|r| r.winner == Some(Choice::B)));
    }

    #[test]
    fn no_conflicts_no_evaluations() {
        let g = graph(&[Some((0, 1))], &[Some((0, 1))]);
        let c = classify(&g);
        let base: RelationSet = c.base_relations().into_iter().collect();
        let mut ev = CountingEvaluator::new(Scripted(|_: &str, _: &RelationSet| 1.0));
        let res = resolve(&c.conflicts, &base, &[], &mut ev).unwrap();
        assert_eq!(ev.calls, 0);
        assert_eq!(res.relations, base);
    }

    #[test]
    fn full_tie_keeps_hypothesis_a() {
        let g = graph(&[Some((0, 5)), None], &[Some((1, 5))]);
        let c = classify(&g);
        let mut ev = Scripted(|_: &str, _: &RelationSet| 0.5);
        let res = resolve(&c.conflicts, &RelationSet::new(), &datasets(), &mut ev).unwrap();
        assert_eq!(res.log[0].winner, Some(Choice::A));
    }

    #[test]
    fn shared_edge_outcome_is_reused() {
        // a0 -> b0, a1 -> b0, b0 -> a2
        let g = graph(&[Some((0, 8)), Some((0, 5)), None], &[Some((2, 6))]);
        let c = classify(&g);
        assert_eq!(c.conflicts.len(), 2);
        let prefer = sub(("b", 0), ("a", 2));
        let mut ev = CountingEvaluator::new(Scripted(|_: &str, r: &RelationSet| if has(r, &prefer) { 1.0 } else { 0.0 }));
        let res = resolve(&c.conflicts, &RelationSet::new(), &datasets(), &mut ev).unwrap();
        assert_eq!(ev.calls, 8);
        assert_eq!(res.log[0].outcome, Outcome::Tournament);
        assert_eq!(res.log[1].outcome, Outcome::Reused);
        assert_eq!(res.rejected.len(), 2);
        assert_eq!(res.kept.len(), 1);
    }

    #[test]
    fn deleted_shared_edge_dissolves_later_pairs() {
        let g = graph(&[Some((0, 8)), Some((0, 5)), None], &[Some((2, 6))]);
        let c = classify(&g);
        let prefer = sub(("a", 0), ("b", 0));
        let mut ev = Scripted(|_: &str, r: &RelationSet| if has(r, &prefer) { 1.0 } else { 0.0 });
        let res = resolve(&c.conflicts, &RelationSet::new(), &datasets(), &mut ev).unwrap();
        assert_eq!(res.log[1].outcome, Outcome::Dissolved);
        assert_eq!(res.log[1].removed, None);
        assert_eq!(res.rejected.len(), 1);
        assert!(has(&res.relations, &sub(("a", 1), ("b", 0))));
        let resolved = g.without_hypotheses(&res.rejected).unwrap();
        assert!(classify(&resolved).conflicts.is_empty());
    }

    #[test]
    fn two_kept_edges_in_conflict_are_decided_again() {
        // b1 -> a0 -> b0 -> a2, a1 -> b0
        let g = graph(&[Some((0, 3)), Some((0, 4)), None], &[Some((2, 2)), Some((0, 20))]);
        let c = classify(&g);
        assert_eq!(c.conflicts.len(), 3);
        let good = [sub(("a", 0), ("b", 0)), sub(("b", 0), ("a", 2))];
        let mut ev = Scripted(|_: &str, r: &RelationSet| good.iter().filter(|g| has(r, g)).count() as f64);
        let res = resolve(&c.conflicts, &RelationSet::new(), &datasets(), &mut ev).unwrap();
        let outcomes: Vec<Outcome> = res.log.iter().map(|r| r.outcome).collect();
        assert_eq!(outcomes, [Outcome::Tournament; 3]);
        assert!(res.log[2].removed.is_some());
        let resolved = g.without_hypotheses(&res.rejected).unwrap();
        assert!(classify(&resolved).conflicts.is_empty());
        assert_eq!(res.log_jsonl().lines().count(), 3);
    }

    #[test]
    fn order_is_by_descending_support() {
        let g = graph(&[Some((0, 1)), None, Some((1, 7)), None], &[Some((1, 1)), Some((3, 7))]);
        let c = classify(&g);
        let order = conflict_order(&c.conflicts);
        assert_eq!(c.conflicts[order[0]].combined_support(), 14);
    }
}
