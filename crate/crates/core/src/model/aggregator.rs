//! Semantic aggregator: a one-hidden-layer scorer that ranks reverse-question
//! candidates against the original question.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_input, Result};
use crate::feedback::scorer::{bag_cosine, token_f1};

pub const NUM_FEATURES: usize = 3;

/// Weights laid out as `[w1 (h×3) | b1 (h) | w2 (h) | b2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatorParams {
    hidden: usize,
    weights: Vec<f64>,
}

/// `[token F1, min/max length ratio, bag-of-words cosine]`.
pub fn features<S: AsRef<str>>(q: &[S], candidate: &[S]) -> Result<[f64; NUM_FEATURES]> {
    if q.is_empty() || candidate.is_empty() {
        return Err(invalid_input("aggregator inputs must be non-empty"));
    }
    let (a, b) = (q.len() as f64, candidate.len() as f64);
    Ok([token_f1(q, candidate), a.min(b) / a.max(b), bag_cosine(q, candidate)])
}

impl AggregatorParams {
    pub fn num_weights(hidden: usize) -> usize {
        hidden * (NUM_FEATURES + 2) + 1
    }

    pub fn zeros(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(invalid_arg("aggregator hidden width must be >= 1"));
        }
        Ok(AggregatorParams {
            hidden,
            weights: vec![0.0; Self::num_weights(hidden)],
        })
    }

    pub fn init(hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut p.weights {
            *w = rng.gen_range(-0.1..=0.1);
        }
        Ok(p)
    }

    pub fn from_vec(hidden: usize, weights: Vec<f64>) -> Result<Self> {
        if hidden == 0 || weights.len() != Self::num_weights(hidden) {
            return Err(invalid_input(format!(
                "{} aggregator weights given for hidden width {hidden}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(invalid_input("aggregator weights must be finite"));
        }
        Ok(AggregatorParams { hidden, weights })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn hidden_act(&self, f: &[f64; NUM_FEATURES]) -> Vec<f64> {
        let h = self.hidden;
        (0..h)
            .map(|j| {
                let w = &self.weights[j * NUM_FEATURES..(j + 1) * NUM_FEATURES];
                let pre: f64 = w.iter().zip(f).map(|(a, b)| a * b).sum::<f64>() + self.weights[h * NUM_FEATURES + j];
                pre.tanh()
            })
            .collect()
    }

    pub fn score_features(&self, f: &[f64; NUM_FEATURES]) -> f64 {
        let h = self.hidden;
        let act = self.hidden_act(f);
        let w2 = &self.weights[h * (NUM_FEATURES + 1)..h * (NUM_FEATURES + 2)];
        let out: f64 = act.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + self.weights[h * (NUM_FEATURES + 2)];
        1.0 / (1.0 + (-out).exp())
    }

    /// Score and its gradient with respect to every weight.
    pub fn score_and_grad(&self, f: &[f64; NUM_FEATURES]) -> (f64, Vec<f64>) {
        let h = self.hidden;
        let act = self.hidden_act(f);
        let s = self.score_features(f);
        let ds = s * (1.0 - s);
        let w2_off = h * (NUM_FEATURES + 1);
        let mut g = vec![0.0; self.weights.len()];
        for j in 0..h {
            g[w2_off + j] = ds * act[j];
            let dpre = ds * self.weights[w2_off + j] * (1.0 - act[j] * act[j]);
            for k in 0..NUM_FEATURES {
                g[j * NUM_FEATURES + k] = dpre * f[k];
            }
            g[h * NUM_FEATURES + j] = dpre;
        }
        g[h * (NUM_FEATURES + 2)] = ds;
        (s, g)
    }

    pub fn score<S: AsRef<str>>(&self, q: &[S], candidate: &[S]) -> Result<f64> {
        Ok(self.score_features(&features(q, candidate)?))
    }

    /// Index of the best-scoring candidate; the first index wins ties.
    pub fn rank<S: AsRef<str>>(&self, q: &[S], candidates: &[Vec<S>]) -> Result<usize> {
        let mut best = None;
        for (i, c) in candidates.iter().enumerate() {
            let s = self.score(q, c)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
            .ok_or_else(|| invalid_input("no candidates to rank"))
    }
}
