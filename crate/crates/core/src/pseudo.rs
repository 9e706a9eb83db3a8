//! Entropy-gated pseudo-attention targets.
//!
//! Per generated token the attention stack is pooled over layers and heads,
//! low-entropy tokens vote for patches, and the vote is sharpened with a
//! temperature softmax, smoothed on the patch grid and renormalized. The
//! result is a plain value: nothing downstream differentiates through it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_input, Error, Result};
use crate::model::AttentionStack;
use crate::numerics::{argmax, entropy_unchecked, gaussian_smooth, kl_div, softmax_unchecked, Grid2D, ProbVector};
use crate::vocab::Vocab;

/// Spread below which the vote is treated as flat.
pub const FLAT_VOTE_EPS: f64 = 1e-12;
/// Mass added at the peak patch when the vote is flat.
pub const FLAT_VOTE_PEAK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoConfig {
    /// Entropy threshold in nats; tokens with entropy ≤ tau are confident.
    pub tau: f64,
    pub temp_a: f64,
    pub kappa: f64,
    pub sigma: f64,
    pub reweight_votes: bool,
}

impl Default for PseudoConfig {
    fn default() -> Self {
        PseudoConfig {
            tau: 2.0,
            temp_a: 0.7,
            kappa: 1.5,
            sigma: 0.8,
            reweight_votes: false,
        }
    }
}

impl PseudoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan()
            || self.tau < 0.0
            || self.temp_a.is_nan()
            || self.temp_a <= 0.0
            || self.sigma.is_nan()
            || self.sigma <= 0.0
            || !self.kappa.is_finite()
        {
            return Err(invalid_arg(format!(
                "pseudo config needs tau >= 0, temp_a > 0, sigma > 0, finite kappa; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Size of the min-entropy fallback set: `max(1, ceil(0.01 T))`.
pub fn fallback_k(num_tokens: usize) -> usize {
    num_tokens.div_ceil(100).max(1)
}

/// Back-loaded layer weights `w[l] ∝ exp(kappa·l/L)` for `l = 1..=L`.
pub fn layer_prior(layers: usize, kappa: f64) -> Result<Vec<f64>> {
    if layers == 0 {
        return Err(invalid_arg("layer prior needs at least one layer"));
    }
    let l = layers as f64;
    let raw: Vec<f64> = (1..=layers).map(|i| (kappa * i as f64 / l).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / z).collect())
}

pub fn uniform_heads(heads: usize) -> Vec<f64> {
    vec![1.0 / heads as f64; heads]
}

/// Pools each token's rows with layer weights `w` and head weights `u`, then
/// row-normalizes.
pub fn aggregate(stack: &AttentionStack, w: &[f64], u: &[f64]) -> Result<Vec<ProbVector>> {
    if w.len() != stack.layers() || u.len() != stack.heads() {
        return Err(invalid_input(format!(
            "weights ({}, {}) do not match stack ({} layers, {} heads)",
            w.len(),
            u.len(),
            stack.layers(),
            stack.heads()
        )));
    }
    (0..stack.num_tokens())
        .map(|t| {
            let mut acc = vec![0.0; stack.patches()];
            for (l, wl) in w.iter().enumerate() {
                for (h, uh) in u.iter().enumerate() {
                    for (a, x) in acc.iter_mut().zip(stack.row(t, l, h)) {
                        *a += wl * uh * x;
                    }
                }
            }
            ProbVector::from_unnormalized(acc)
        })
        .collect()
}

/// Unmasked tokens whose entropy is at most `tau`, in token order.
pub fn confident_set(entropies: &[f64], mask: &[bool], tau: f64) -> Vec<usize> {
    (0..entropies.len())
        .filter(|&t| !mask[t] && entropies[t] <= tau)
        .collect()
}

/// The `fallback_k(T)` lowest-entropy unmasked tokens; lower index wins ties.
pub fn fallback_topk(entropies: &[f64], mask: &[bool]) -> Result<Vec<usize>> {
    let mut free: Vec<usize> = (0..entropies.len()).filter(|&t| !mask[t]).collect();
    if free.is_empty() {
        return Err(Error::DegenerateSample(
            "every generated token is masked; no attention rows to vote with".into(),
        ));
    }
    free.sort_by(|&a, &b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)));
    free.truncate(fallback_k(entropies.len()));
    free.sort_unstable();
    Ok(free)
}

/// A pseudo-attention target with the evidence used to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoHeatmap {
    pub weights: ProbVector,
    pub rows: usize,
    pub cols: usize,
    /// Tokens that voted.
    pub confident: Vec<usize>,
    /// Entropy of every aggregated token row.
    pub entropies: Vec<f64>,
    pub used_fallback: bool,
    pub flat_vote: bool,
}

impl PseudoHeatmap {
    pub fn grid(&self) -> Grid2D {
        Grid2D::new(self.rows, self.cols, self.weights.to_vec()).expect("dims checked at build time")
    }
}

/// Builds the pseudo-attention target for one sample.
pub fn build_pseudo(
    stack: &AttentionStack,
    mask: &[bool],
    cfg: &PseudoConfig,
    rows: usize,
    cols: usize,
) -> Result<PseudoHeatmap> {
    cfg.validate()?;
    let s = stack.patches();
    if rows * cols != s || rows == 0 {
        return Err(invalid_input(format!("grid {rows}x{cols} does not hold {s} patches")));
    }
    if mask.len() != stack.num_tokens() {
        return Err(invalid_input(format!(
            "mask has {} entries for {} tokens",
            mask.len(),
            stack.num_tokens()
        )));
    }
    let w = layer_prior(stack.layers(), cfg.kappa)?;
    let p = aggregate(stack, &w, &uniform_heads(stack.heads()))?;
    let entropies: Vec<f64> = p.iter().map(|row| entropy_unchecked(row)).collect();

    let mut confident = confident_set(&entropies, mask, cfg.tau);
    let used_fallback = confident.is_empty();
    if used_fallback {
        confident = fallback_topk(&entropies, mask)?;
    }

    let log_s = (s as f64).ln();
    let mut votes = vec![0.0; s];
    for &t in &confident {
        let wt = if cfg.reweight_votes && s > 1 {
            (1.0 - entropies[t] / log_s).max(0.0)
        } else {
            1.0
        };
        for (v, x) in votes.iter_mut().zip(p[t].iter()) {
            *v += wt * x;
        }
    }
    let hi = votes.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = votes.iter().copied().fold(f64::INFINITY, f64::min);
    let flat_vote = hi - lo < FLAT_VOTE_EPS;
    let soft = if flat_vote {
        let anchor = *confident
            .iter()
            .min_by(|&&a, &&b| entropies[a].total_cmp(&entropies[b]).then(a.cmp(&b)))
            .expect("confident set is non-empty");
        let mut q = vec![1.0 / s as f64; s];
        q[argmax(&p[anchor])] += FLAT_VOTE_PEAK;
        q
    } else {
        softmax_unchecked(&votes, cfg.temp_a)
    };
    let smoothed = gaussian_smooth(&Grid2D::new(rows, cols, soft)?, cfg.sigma)?;
    let weights = ProbVector::from_unnormalized(smoothed.into_values())?;
    Ok(PseudoHeatmap {
        weights,
        rows,
        cols,
        confident,
        entropies,
        used_fallback,
        flat_vote,
    })
}

/// Mean of the selected token rows: the model-side map compared with the
/// target.
pub fn model_map(rows: &[Vec<f64>], tokens: &[usize]) -> Result<ProbVector> {
    let first = *tokens
        .first()
        .ok_or_else(|| invalid_input("model map needs at least one token"))?;
    let mut acc = vec![0.0; rows[first].len()];
    for &t in tokens {
        for (a, x) in acc.iter_mut().zip(&rows[t]) {
            *a += x;
        }
    }
    let n = tokens.len() as f64;
    ProbVector::new(acc.into_iter().map(|x| x / n).collect())
}

/// KL(H ‖ target). The target is a constant.
pub fn attention_loss(model: &[f64], target: &PseudoHeatmap) -> Result<f64> {
    if model.len() != target.weights.len() {
        return Err(invalid_input("model map and target differ in length"));
    }
    kl_div(model, &target.weights)
}

/// ∂ KL(H ‖ target) / ∂H.
pub fn attention_loss_grad(model: &[f64], target: &PseudoHeatmap) -> Vec<f64> {
    model
        .iter()
        .zip(target.weights.iter())
        .map(|(&h, &q)| if h > 0.0 { h.ln() - q.ln() + 1.0 } else { 0.0 })
        .collect()
}

/// Tokens excluded from voting: specials and punctuation-only tokens.
pub fn token_mask<S: AsRef<str>>(vocab: &Vocab, tokens: &[S]) -> Vec<bool> {
    tokens.iter().map(|t| vocab.is_masked(t.as_ref())).collect()
}

/// On-disk attention dump consumed by the `pseudo-attn` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionDump {
    pub rows: usize,
    pub cols: usize,
    pub tokens: Vec<String>,
    /// `[token][layer][head][patch]`.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub config: Option<PseudoConfig>,
}

/// Metadata written next to a heatmap grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoSidecar {
    pub rows: usize,
    pub cols: usize,
    pub tokens: Vec<String>,
    pub entropies: Vec<f64>,
    pub confident: Vec<usize>,
    pub used_fallback: bool,
    pub flat_vote: bool,
    pub fallback_k: usize,
    pub config: PseudoConfig,
}

impl AttentionDump {
    pub fn build(&self, vocab: &Vocab) -> Result<(PseudoHeatmap, PseudoSidecar)> {
        let stack = AttentionStack::from_nested(&self.attention)?;
        if self.tokens.len() != stack.num_tokens() {
            return Err(invalid_input(format!(
                "dump lists {} tokens but has attention for {}",
                self.tokens.len(),
                stack.num_tokens()
            )));
        }
        let cfg = self.config.clone().unwrap_or_default();
        let mask = token_mask(vocab, &self.tokens);
        let map = build_pseudo(&stack, &mask, &cfg, self.rows, self.cols)?;
        let side = PseudoSidecar {
            rows: self.rows,
            cols: self.cols,
            tokens: self.tokens.clone(),
            entropies: map.entropies.clone(),
            confident: map.confident.clone(),
            used_fallback: map.used_fallback,
            flat_vote: map.flat_vote,
            fallback_k: fallback_k(self.tokens.len()),
            config: cfg,
        };
        Ok((map, side))
    }
}
