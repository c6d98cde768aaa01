//! Post-inference mapping, mIoU evaluation and the conflict tournament.

pub mod miou;
pub mod relations;
pub mod tournament;

pub use miou::{evaluate_miou, miou_of_labels, predict_record, Confusion, EvalRecord, MiouReport};
pub use relations::{argmax, concat_id, score, ConcatSpace, RelationSet, ScoreIndex, Scorer};
pub use tournament::{
    conflict_order, resolve, Choice, CountingEvaluator, EvalData, MiouEvaluator, Outcome, Resolution,
    ResolutionRecord,
};
