//! Synthetic latent worlds for validating the pipeline end to end.

pub mod sim;
pub mod world;

pub use sim::{NodeLabels, Simulation};
pub use world::{recovery_score, sample_world, DatasetSpec, GroupingLaw, LatentWorld, NoiseModel};
