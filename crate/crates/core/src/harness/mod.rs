//! Synthetic data, stress corruptions and evaluation.

pub mod claims;
pub mod dataset;
pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod noise;
pub mod scene;

pub use dataset::{read_jsonl, synth_dataset, write_jsonl, HallucType, Sample, WorldConfig};
pub use eval::{
    evaluate, evaluate_checkpoint, EvalContext, MetricsReport, ModelResponder, Responder, Response, CSV_HEADER,
};
pub use experiment::{demo_config, train_and_evaluate, Protocol, RunSummary, DEMO_CONFIG};
pub use metrics::{chair_metrics, f1_metric, faith, faith_s, Chair, Ratio};
pub use noise::{inject_answer_noise, inject_teacher_noise};
pub use scene::{Cell, Entity, Event, Fact, Relation, SceneGrid};
