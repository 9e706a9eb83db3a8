//! Consistency feedback: reverse-question reconstruction and answer-driven
//! description, turned into the language and visual losses.

pub mod cfp;
pub mod scorer;

pub use cfp::{cfp_lang_generate, cfp_vis_describe, ReverseQuestionSet, DEFAULT_CANDIDATES};
pub use scorer::{bag_cosine, token_f1, FactBagScorer, SubprocessScorer, TextScorer, TokenF1Scorer, VisualScorer};

use crate::error::{invalid_arg, Error, Result};
use crate::harness::scene::SceneGrid;
use crate::model::AggregatorParams;

/// The reverse question picked by the aggregator and its reconstruction score.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub question: Vec<String>,
    pub score: f64,
}

pub fn select_best(
    q: &[String],
    cands: &ReverseQuestionSet,
    scorer: &dyn TextScorer,
    agg: &AggregatorParams,
) -> Result<Selection> {
    if cands.candidates.is_empty() {
        return Err(Error::EmptyCandidates("no candidates to select from".into()));
    }
    let index = agg.rank(q, &cands.candidates)?;
    let question = cands.candidates[index].clone();
    let score = scorer.score(q, &question)?;
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::Scorer(format!("text score {score} outside [0, 1]")));
    }
    Ok(Selection { index, question, score })
}

/// `1 − score`.
pub fn language_loss(score: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&score) {
        return Err(invalid_arg(format!("language score {score} outside [0, 1]")));
    }
    Ok(1.0 - score)
}

/// `1 − similarity(scene, caption)`.
pub fn visual_loss(scene: &SceneGrid, caption: &[String], scorer: &dyn VisualScorer) -> Result<f64> {
    if caption.is_empty() {
        return Err(Error::EmptyDescription("caption is empty".into()));
    }
    let sim = scorer.similarity(scene, caption)?;
    if !(-1.0..=1.0).contains(&sim) {
        return Err(Error::Scorer(format!("visual similarity {sim} outside [-1, 1]")));
    }
    Ok(1.0 - sim)
}
