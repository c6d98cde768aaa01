//! Universal taxonomy assembly from a conflict-free mcfp graph.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::graph::{classify, BipartiteGraph, Vertex};
use crate::ingest::LabelRaster;
use crate::taxonomy::{UniversalClass, UniversalTaxonomy, VOID};

/// Name of the universal class for edge `from -> to`. Mutual edges join
/// both names in dataset order; one-way edges take the source name.
pub fn derive_name(g: &BipartiteGraph, from: Vertex, to: Option<Vertex>) -> String {
    match to {
        Some(t) if g.has_edge(t, from) => {
            let mut ends = [from, t];
            ends.sort_by(|x, y| g.taxonomy(x.side).dataset_id.cmp(&g.taxonomy(y.side).dataset_id));
            format!("{}/{}", g.name(ends[0]), g.name(ends[1]))
        }
        _ => g.name(from),
    }
}

/// One universal class per edge (mutual pairs collapsed) and one singleton
/// per vertex without an outgoing edge.
pub fn build_universal(g: &BipartiteGraph) -> Result<UniversalTaxonomy> {
    let cls = classify(g);
    if !cls.conflicts.is_empty() {
        return Err(Error::UnresolvedConflicts(cls.conflicts.len()));
    }

    let mut raw = Vec::new();
    for v in g.vertices() {
        match g.target(v) {
            Some(t) if g.has_edge(t, v) && t < v => {}
            Some(t) => {
                let mut members = vec![g.class_ref(v), g.class_ref(t)];
                members.sort();
                raw.push((members, derive_name(g, v, Some(t))));
            }
            None => raw.push((vec![g.class_ref(v)], derive_name(g, v, None))),
        }
    }
    raw.sort();

    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let universal_classes: Vec<UniversalClass> = raw
        .into_iter()
        .map(|(members, name)| UniversalClass {
            name: dedupe(&mut seen, name),
            members,
        })
        .collect();

    let mut mappings = BTreeMap::new();
    for t in [&g.taxonomy_a, &g.taxonomy_b] {
        let mut m: Vec<Vec<u32>> = vec![Vec::new(); t.len()];
        for (u, class) in universal_classes.iter().enumerate() {
            for r in class.members.iter().filter(|r| r.dataset == t.dataset_id) {
                m[r.index()].push(u as u32);
            }
        }
        mappings.insert(t.dataset_id.clone(), m);
    }
    Ok(UniversalTaxonomy {
        universal_classes,
        mappings,
    })
}

fn dedupe(seen: &mut BTreeMap<String, usize>, name: String) -> String {
    let n = seen.entry(name.clone()).or_insert(0);
    *n += 1;
    if *n == 1 {
        return name;
    }
    let mut ordinal = *n;
    loop {
        let candidate = format!("{name}#{ordinal}");
        if !seen.contains_key(&candidate) {
            seen.insert(candidate.clone(), 1);
            return candidate;
        }
        ordinal += 1;
    }
}

/// Maps universal labels to classes of `dataset`; universal classes outside
/// the dataset's mapping image become void.
pub fn map_prediction(pred: &LabelRaster, u: &UniversalTaxonomy, dataset: &str) -> Result<LabelRaster> {
    let inv = u.inverse(dataset).ok_or_else(|| Error::TaxonomyMismatch {
        expected: u.mappings.keys().cloned().collect::<Vec<_>>().join(", "),
        found: dataset.to_owned(),
    })?;
    let labels = pred
        .labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l == VOID {
                return Ok(VOID);
            }
            match inv.get(l as usize) {
                Some(c) => Ok(c.map_or(VOID, |c| c as u16)),
                None => Err(Error::OutOfRangeLabel {
                    label: l as u32,
                    pixel: i,
                    classes: inv.len(),
                }),
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    LabelRaster::new(dataset, pred.width, pred.height, labels)
}

/// Number of mutual edge pairs in the graph.
pub fn mutual_pairs(g: &BipartiteGraph) -> usize {
    g.edges().filter(|&(v, t, _)| v < t && g.has_edge(t, v)).count()
}

/// Dataset classes that share at least one universal class, as unordered
/// cross-dataset pairs.
pub fn shared_pairs(u: &UniversalTaxonomy) -> BTreeSet<(crate::ClassRef, crate::ClassRef)> {
    let mut out = BTreeSet::new();
    for class in &u.universal_classes {
        for (i, x) in class.members.iter().enumerate() {
            for y in &class.members[i + 1..] {
                if x.dataset != y.dataset {
                    out.insert((x.clone().min(y.clone()), x.clone().max(y.clone())));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use crate::taxonomy::{partial_label_matrices, validate_universal, Taxonomy};
    use proptest::prelude::*;

    fn graph(ta: Taxonomy, tb: Taxonomy, out_a: &[Option<usize>], out_b: &[Option<usize>]) -> BipartiteGraph {
        let e = |v: &[Option<usize>]| v.iter().map(|t| t.map(|target| Edge { target, count: 1 })).collect();
        BipartiteGraph::from_edges(ta, tb, e(out_a), e(out_b)).unwrap()
    }

    fn road_zebra() -> BipartiteGraph {
        graph(
            Taxonomy::new("ade", vec!["road".into()]),
            Taxonomy::new("vistas", vec!["road".into(), "zebra".into()]),
            &[Some(0)],
            &[Some(0), Some(0)],
        )
    }

    #[test]
    fn road_zebra_walkthrough() {
        let u = build_universal(&road_zebra()).unwrap();
        assert_eq!(u.names(), ["ade-road/vistas-road", "vistas-zebra"]);
        assert_eq!(u.mappings["ade"], vec![vec![0, 1]]);
        assert_eq!(u.mappings["vistas"], vec![vec![0], vec![1]]);
        assert!(validate_universal(&u).is_empty());
        let m = partial_label_matrices(&u).unwrap();
        assert_eq!(m[0].row(0), &[1, 1]);
        assert_eq!((m[1].row(0), m[1].row(1)), (&[1u8, 0][..], &[0u8, 1][..]));
    }

    #[test]
    fn zebra_maps_to_ade_road_and_singletons_to_void() {
        let g = graph(
            Taxonomy::new("ade", vec!["road".into(), "lamp".into()]),
            Taxonomy::new("vistas", vec!["road".into(), "zebra".into()]),
            &[Some(0), None],
            &[Some(0), Some(0)],
        );
        let u = build_universal(&g).unwrap();
        assert_eq!(u.names(), ["ade-road/vistas-road", "vistas-zebra", "ade-lamp"]);
        let pred = LabelRaster::new("u", 4, 1, vec![1, 2, 0, VOID]).unwrap();
        assert_eq!(map_prediction(&pred, &u, "ade").unwrap().labels, vec![0, 1, 0, VOID]);
        assert_eq!(map_prediction(&pred, &u, "vistas").unwrap().labels, vec![1, VOID, 0, VOID]);
        let bad = LabelRaster::new("u", 1, 1, vec![3]).unwrap();
        assert!(matches!(map_prediction(&bad, &u, "ade"), Err(Error::OutOfRangeLabel { .. })));
    }

    #[test]
    fn identical_single_class_datasets() {
        let g = graph(Taxonomy::new("a", vec!["x".into()]), Taxonomy::new("b", vec!["x".into()]), &[Some(0)], &[Some(0)]);
        let u = build_universal(&g).unwrap();
        assert_eq!(u.len(), 1);
        assert_eq!(u.names(), ["a-x/b-x"]);
    }

    #[test]
    fn ninety_eight_concatenated_classes_become_sixty_seven() {
        // 31 mutual pairs, 17 + 19 one-way edges into the overlap block
        let na = 31 + 17;
        let nb = 31 + 19;
        let ta = Taxonomy::new("a", (0..na).map(|i| format!("a{i}")).collect());
        let tb = Taxonomy::new("b", (0..nb).map(|i| format!("b{i}")).collect());
        let out_a: Vec<_> = (0..na).map(|i| Some(if i < 31 { i } else { i % 31 })).collect();
        let out_b: Vec<_> = (0..nb).map(|j| Some(if j < 31 { j } else { (j + 5) % 31 })).collect();
        let g = graph(ta, tb, &out_a, &out_b);
        assert_eq!(g.vertex_count(), 98);
        assert_eq!(mutual_pairs(&g), 31);
        let u = build_universal(&g).unwrap();
        assert_eq!(u.len(), 67);
        assert!(validate_universal(&u).is_empty());
    }

    #[test]
    fn conflicted_graph_is_rejected() {
        let g = graph(Taxonomy::new("a", vec!["x".into(), "y".into()]), Taxonomy::new("b", vec!["z".into()]), &[Some(0), None], &[Some(1)]);
        let err = build_universal(&g).unwrap_err();
        assert_eq!(err.to_string(), "unresolved conflicts: 1");
    }

    #[test]
    fn colliding_names_get_ordinals() {
        let g = graph(
            Taxonomy { dataset_id: "m".into(), classes: vec!["x".into(), "y".into()], qualified: true },
            Taxonomy { dataset_id: "n".into(), classes: vec!["x".into()], qualified: true },
            &[None, None],
            &[None],
        );
        let u = build_universal(&g).unwrap();
        assert_eq!(u.names(), ["x", "y", "x#2"]);
    }

    fn arb_resolved() -> impl Strategy<Value = BipartiteGraph> {
        (1usize..8, 1usize..8).prop_flat_map(|(na, nb)| {
            (
                prop::collection::vec(prop::option::weighted(0.9, 0..nb), na),
                prop::collection::vec(prop::option::weighted(0.9, 0..na), nb),
            )
                .prop_map(move |(a, b)| {
                    let ta = Taxonomy::new("a", (0..na).map(|i| format!("c{i}")).collect());
                    let tb = Taxonomy::new("b", (0..nb).map(|i| format!("c{i}")).collect());
                    let g = graph(ta, tb, &a, &b);
                    let rejected: Vec<_> = classify(&g).conflicts.into_iter().map(|p| p.hypothesis_a).collect();
                    g.without_hypotheses(&rejected).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn universal_is_valid_and_sized_by_mutual_pairs(g in arb_resolved()) {
            let u = build_universal(&g).unwrap();
            prop_assert!(validate_universal(&u).is_empty(), "{:?}", validate_universal(&u));
            prop_assert_eq!(u.len(), g.vertex_count() - mutual_pairs(&g));
            for m in partial_label_matrices(&u).unwrap() {
                prop_assert!(m.col_sums().iter().all(|&s| s <= 1));
                prop_assert!(m.row_sums().iter().all(|&s| s >= 1));
            }
            for (ds, mapping) in &u.mappings {
                for (c, us) in mapping.iter().enumerate() {
                    let pred = LabelRaster::new("u", us.len() as u32, 1, us.iter().map(|&x| x as u16).collect()).unwrap();
                    let back = map_prediction(&pred, &u, ds).unwrap();
                    prop_assert!(back.labels.iter().all(|&l| l as usize == c));
                }
            }
        }

        #[test]
        fn build_is_deterministic(g in arb_resolved()) {
            prop_assert_eq!(build_universal(&g).unwrap().to_json(), build_universal(&g.clone()).unwrap().to_json());
        }
    }
}
