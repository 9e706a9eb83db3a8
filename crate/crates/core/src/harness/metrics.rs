//! Hallucination and faithfulness metrics over closed-vocabulary responses.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// A ratio that remembers whether its denominator was zero (reported as 0).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    pub fn of(num: usize, den: usize) -> Self {
        Self::of_f64(num as f64, den as f64)
    }

    pub fn of_f64(num: f64, den: f64) -> Self {
        if den == 0.0 {
            Ratio {
                value: 0.0,
                undefined: true,
            }
        } else {
            Ratio {
                value: num / den,
                undefined: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chair {
    /// Hallucinated mentions over all mentions.
    pub chair_i: Ratio,
    /// Responses with any hallucinated mention over all responses.
    pub chair_s: Ratio,
}

/// `mentions[i]` are the objects response `i` names; `truth[i]` those present.
pub fn chair_metrics(mentions: &[BTreeSet<String>], truth: &[BTreeSet<String>]) -> Chair {
    let mut all = 0;
    let mut bad = 0;
    let mut bad_responses = 0;
    for (m, t) in mentions.iter().zip(truth) {
        let h = m.iter().filter(|o| !t.contains(*o)).count();
        all += m.len();
        bad += h;
        bad_responses += usize::from(h > 0);
    }
    Chair {
        chair_i: Ratio::of(bad, all),
        chair_s: Ratio::of(bad_responses, mentions.len()),
    }
}

/// Aligned statements over all statements.
pub fn faith(aligned: usize, total: usize) -> Ratio {
    Ratio::of(aligned, total)
}

/// Grounded tokens over all content tokens.
pub fn faith_s(grounded: usize, total: usize) -> Ratio {
    Ratio::of(grounded, total)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_metric(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}
