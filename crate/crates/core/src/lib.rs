pub mod error;
pub mod graph;
pub mod ingest;
pub mod merge;
pub mod resolve;
pub mod synth;
pub mod taxonomy;
pub mod universal;

pub use error::{Error, Result};
pub use graph::{build_graph, build_graph_with, classify, BipartiteGraph, Classification, GraphOptions};
pub use merge::{flatten, merge_pair, run_schedule, Evidence, EvidenceSource, MergeNode, MergeSchedule, MetaDataset};
pub use taxonomy::*;
pub use universal::build_universal;
