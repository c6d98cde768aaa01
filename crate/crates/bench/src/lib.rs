//! Fixtures for the pipeline benchmarks.

use unitax_core::ingest::LabelRaster;
use unitax_core::merge::Evidence;
use unitax_core::synth::{sample_world, GroupingLaw, Simulation};

/// Noisy two-dataset world with `images` 64x64 images per dataset.
pub fn pair_simulation(latent: usize, images: usize, seed: u64) -> Simulation {
    let mut w = sample_world(latent, 2, &GroupingLaw::mixed(), seed).expect("valid world");
    w.width = 64;
    w.height = 64;
    w.noise = 0.1;
    Simulation::new(w, images).expect("valid simulation")
}

/// Ground truth of `a` paired with `b`'s predictions, image by image.
pub fn raster_pairs(sim: &Simulation) -> Vec<(LabelRaster, LabelRaster)> {
    (0..sim.images())
        .map(|i| (sim.ground_truth("a", i).unwrap(), sim.prediction("b", "a", i).unwrap()))
        .collect()
}

pub fn evidence(sim: &Simulation) -> Evidence {
    sim.evidence_for("a", "b").expect("evidence")
}
