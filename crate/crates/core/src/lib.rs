//! Closed-loop consistency supervision for a small cross-attention model.
//!
//! A model answers questions about symbolic scenes. Its answers are fed back
//! through frozen reconstruction and description plugins, its own confident
//! attention is turned into a soft target, and the resulting signals are
//! weighted and folded into training.

pub mod error;
pub mod feedback;
pub mod gating;
pub mod harness;
pub mod model;
pub mod numerics;
pub mod pseudo;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use gating::{acw_gamma, screen_answer, GammaWeight, RejectionVerdict};
pub use harness::{HallucType, MetricsReport, Sample, SceneGrid};
pub use model::{AggregatorParams, AttentionStack, Checkpoint, ModelParams};
pub use numerics::{Grid2D, ProbVector};
pub use pseudo::{build_pseudo, PseudoConfig, PseudoHeatmap};
pub use train::{LossBreakdown, TrainConfig};
pub use vocab::Vocab;
