//! Consistency weighting and early rejection of malformed answers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::vocab::Vocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaWeight {
    pub value: f64,
    pub bucket: Bucket,
}

impl GammaWeight {
    pub const HIGH: GammaWeight = GammaWeight {
        value: 1.0,
        bucket: Bucket::High,
    };
    pub const MEDIUM: GammaWeight = GammaWeight {
        value: 0.1,
        bucket: Bucket::Medium,
    };
    pub const LOW: GammaWeight = GammaWeight {
        value: 0.01,
        bucket: Bucket::Low,
    };

    pub fn from_bucket(bucket: Bucket) -> Self {
        match bucket {
            Bucket::High => Self::HIGH,
            Bucket::Medium => Self::MEDIUM,
            Bucket::Low => Self::LOW,
        }
    }
}

/// Step weight over the reconstruction score: 1.0 at ≥ 0.8, 0.1 on
/// [0.6, 0.8), 0.01 below 0.6.
pub fn acw_gamma(score: f64) -> Result<GammaWeight> {
    if !(0.0..=1.0).contains(&score) {
        return Err(invalid_arg(format!("consistency score {score} outside [0, 1]")));
    }
    Ok(if score >= 0.8 {
        GammaWeight::HIGH
    } else if score >= 0.6 {
        GammaWeight::MEDIUM
    } else {
        GammaWeight::LOW
    })
}

/// Fractions of the batch in the (1.0, 0.1, 0.01) buckets.
pub fn gamma_distribution(batch: &[GammaWeight]) -> Result<(f64, f64, f64)> {
    if batch.is_empty() {
        return Err(invalid_arg("gamma distribution of an empty batch"));
    }
    let n = batch.len() as f64;
    let count = |b: Bucket| batch.iter().filter(|g| g.bucket == b).count() as f64 / n;
    Ok((count(Bucket::High), count(Bucket::Medium), count(Bucket::Low)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    EmptyOutput,
    TooShort,
    Repetition,
    NonsenseTokens,
    EmptyCandidates,
    EmptyDescription,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionVerdict {
    pub action: Action,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<Cause>,
    pub detail: String,
}

impl RejectionVerdict {
    pub fn accept() -> Self {
        RejectionVerdict {
            action: Action::Accept,
            cause: None,
            detail: String::new(),
        }
    }

    pub fn reject(cause: Cause, detail: impl Into<String>) -> Self {
        RejectionVerdict {
            action: Action::Reject,
            cause: Some(cause),
            detail: detail.into(),
        }
    }

    pub fn accepted(&self) -> bool {
        self.action == Action::Accept
    }
}

pub const MIN_CONTENT_TOKENS: usize = 2;
pub const MAX_RUN: usize = 3;
pub const MAX_UNKNOWN_FRACTION: f64 = 0.5;

/// Checks, in order: empty, too few content words, repeated run, unknown
/// content words.
pub fn screen_answer<S: AsRef<str>>(vocab: &Vocab, answer: &[S]) -> RejectionVerdict {
    if answer.is_empty() {
        return RejectionVerdict::reject(Cause::EmptyOutput, "no tokens");
    }
    let content: Vec<&str> = answer
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| vocab.is_content(t))
        .collect();
    if content.len() < MIN_CONTENT_TOKENS {
        return RejectionVerdict::reject(
            Cause::TooShort,
            format!("{} content tokens, need {MIN_CONTENT_TOKENS}", content.len()),
        );
    }
    let mut run = 1;
    for w in answer.windows(2) {
        run = if w[0].as_ref() == w[1].as_ref() { run + 1 } else { 1 };
        if run >= MAX_RUN {
            return RejectionVerdict::reject(Cause::Repetition, format!("{:?} repeated {run} times", w[1].as_ref()));
        }
    }
    let unknown = content.iter().filter(|t| !vocab.contains(t)).count();
    if unknown as f64 > MAX_UNKNOWN_FRACTION * content.len() as f64 {
        return RejectionVerdict::reject(
            Cause::NonsenseTokens,
            format!("{unknown} of {} content tokens are unknown", content.len()),
        );
    }
    RejectionVerdict::accept()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::tokenize;

    #[test]
    fn gamma_boundaries() {
        assert_eq!(acw_gamma(0.85).unwrap().value, 1.0);
        assert_eq!(acw_gamma(0.80).unwrap().value, 1.0);
        assert_eq!(acw_gamma(0.79).unwrap().value, 0.1);
        assert_eq!(acw_gamma(0.60).unwrap().value, 0.1);
        assert_eq!(acw_gamma(0.59).unwrap().value, 0.01);
        assert_eq!(acw_gamma(0.0).unwrap().value, 0.01);
        assert!(acw_gamma(-0.01).is_err() && acw_gamma(1.01).is_err() && acw_gamma(f64::NAN).is_err());
    }

    #[test]
    fn distribution() {
        let g = |s: f64| acw_gamma(s).unwrap();
        assert_eq!(gamma_distribution(&[g(0.9), g(0.9)]).unwrap(), (1.0, 0.0, 0.0));
        let (a, b, c) = gamma_distribution(&[g(0.9), g(0.7), g(0.5)]).unwrap();
        assert!((a - 1.0 / 3.0).abs() < 1e-15 && (b - 1.0 / 3.0).abs() < 1e-15 && (c - 1.0 / 3.0).abs() < 1e-15);
        assert!(gamma_distribution(&[]).is_err());
    }

    #[test]
    fn screening_rows() {
        let v = Vocab::standard();
        let cause = |s: &str| screen_answer(&v, &tokenize(s)).cause;
        assert_eq!(cause(""), Some(Cause::EmptyOutput));
        assert_eq!(cause("I'm not sure."), Some(Cause::TooShort));
        assert_eq!(cause("Banana banana banana sky help!"), Some(Cause::Repetition));
        assert_eq!(cause("Apples grow in the summer."), None);
        assert_eq!(cause("Grockling spinners do fleeb!"), Some(Cause::NonsenseTokens));
        assert_eq!(cause("the dog holds an orange frisbee"), None);
    }
}
