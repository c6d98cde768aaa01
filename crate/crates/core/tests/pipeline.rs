use unitax_core::merge::merges;
use unitax_core::synth::{recovery_score, sample_world, GroupingLaw, LatentWorld, Simulation};
use unitax_core::*;

fn interleaved_world(seed: u64) -> LatentWorld {
    let law = GroupingLaw {
        overlap: 0.5,
        subset: 0.0,
        foreign: 0.0,
        interleaved: 0.5,
    };
    sample_world(12, 2, &law, seed).unwrap()
}

#[test]
fn interleaved_worlds_always_conflict_and_still_build() {
    for seed in 0..10 {
        let w = interleaved_world(seed);
        if w.datasets[0].groups.iter().all(|g| g.len() == 1) {
            continue;
        }
        let mut sim = Simulation::new(w.clone(), 8).unwrap();
        let root = sim
            .reconcile(&MergeSchedule::default_for(&w.dataset_ids()).unwrap(), GraphOptions::default())
            .unwrap();
        let m = merges(&root)[0];
        assert!(!m.classification.conflicts.is_empty(), "seed {seed}");
        let u = flatten(&root).unwrap();
        assert!(validate_universal(&u).is_empty());
        assert!(recovery_score(&u, &w).unwrap() > 0.5);
    }
}

#[test]
fn four_datasets_with_a_custom_schedule() {
    let w = sample_world(16, 4, &GroupingLaw::mixed(), 42).unwrap();
    let schedule = MergeSchedule::from_json(r#"["a","b","c","d"]"#).unwrap();
    let mut sim = Simulation::new(w.clone(), 10).unwrap();
    let root = sim.reconcile(&schedule, GraphOptions::default()).unwrap();
    assert_eq!(root.id(), "((a+b)+c)+d");
    assert_eq!(merges(&root).len(), 3);
    let u = flatten(&root).unwrap();
    assert_eq!(u.mappings.len(), 4);
    assert_eq!(recovery_score(&u, &w).unwrap(), 1.0);
}

#[test]
fn schedule_must_cover_every_dataset() {
    let w = sample_world(6, 3, &GroupingLaw::mixed(), 1).unwrap();
    let mut sim = Simulation::new(w, 2).unwrap();
    let err = sim
        .reconcile(&MergeSchedule::from_json(r#"["a","b"]"#).unwrap(), GraphOptions::default())
        .unwrap_err();
    assert!(matches!(err, Error::InvalidSchedule(_)));
}
