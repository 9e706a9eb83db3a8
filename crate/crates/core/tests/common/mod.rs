//! Reference implementations shared by the integration tests and the
//! acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reloop_core::model::{backward, forward, sft_loss, AttentionStack, Encoded, ModelParams};
use reloop_core::numerics::fd_gradient_check;
use reloop_core::pseudo::{attention_loss, attention_loss_grad, build_pseudo, model_map, PseudoConfig};
use reloop_core::train::feedback_gradient;

/// `[token][layer][head][patch]`.
pub type Nested = Vec<Vec<Vec<Vec<f64>>>>;

pub struct Oracle {
    pub weights: Vec<f64>,
    pub confident: Vec<usize>,
    pub fallback: bool,
    pub flat: bool,
}

fn shannon(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum::<f64>()
        .max(0.0)
}

/// Mirror-pads the grid by one cell and convolves with the normalized
/// 3×3 Gaussian.
fn smooth(values: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let pad = |i: isize, n: usize| -> usize {
        if i < 0 {
            0
        } else if i as usize >= n {
            n - 1
        } else {
            i as usize
        }
    };
    let (pr, pc) = (rows + 2, cols + 2);
    let mut padded = vec![0.0; pr * pc];
    for r in 0..pr {
        for c in 0..pc {
            let src = pad(r as isize - 1, rows) * cols + pad(c as isize - 1, cols);
            padded[r * pc + c] = values[src];
        }
    }
    let mut k = [[0.0; 3]; 3];
    let mut z = 0.0;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 1.0, j as f64 - 1.0);
            *w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            z += *w;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for (i, krow) in k.iter().enumerate() {
                for (j, w) in krow.iter().enumerate() {
                    acc += w / z * padded[(r + i) * pc + (c + j)];
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

pub fn oracle(att: &Nested, mask: &[bool], cfg: &PseudoConfig, rows: usize, cols: usize) -> Oracle {
    let t_len = att.len();
    let l_len = att[0].len();
    let h_len = att[0][0].len();
    let s = att[0][0][0].len();
    let raw: Vec<f64> = (1..=l_len)
        .map(|l| (cfg.kappa * l as f64 / l_len as f64).exp())
        .collect();
    let zl: f64 = raw.iter().sum();
    let mut pooled = Vec::new();
    for tok in att {
        let mut row = vec![0.0; s];
        for (l, layer) in tok.iter().enumerate() {
            for head in layer {
                for (p, x) in head.iter().enumerate() {
                    row[p] += raw[l] / zl / h_len as f64 * x;
                }
            }
        }
        let z: f64 = row.iter().sum();
        pooled.push(row.into_iter().map(|x| x / z).collect::<Vec<f64>>());
    }
    let ent: Vec<f64> = pooled.iter().map(|r| shannon(r)).collect();
    let mut confident: Vec<usize> = (0..t_len).filter(|&t| !mask[t] && ent[t] <= cfg.tau).collect();
    let fallback = confident.is_empty();
    if fallback {
        let k = ((t_len as f64 * 0.01).ceil() as usize).max(1);
        let mut free: Vec<usize> = (0..t_len).filter(|&t| !mask[t]).collect();
        // stable sort keeps the lower index first among equal entropies
        free.sort_by(|a, b| ent[*a].partial_cmp(&ent[*b]).unwrap());
        confident = free.into_iter().take(k).collect();
        confident.sort();
    }
    let mut votes = vec![0.0; s];
    for &t in &confident {
        for p in 0..s {
            votes[p] += pooled[t][p];
        }
    }
    let max = votes.iter().cloned().fold(f64::MIN, f64::max);
    let min = votes.iter().cloned().fold(f64::MAX, f64::min);
    let flat = max - min < 1e-12;
    let soft: Vec<f64> = if flat {
        let mut anchor = confident[0];
        for &t in &confident {
            if ent[t] < ent[anchor] {
                anchor = t;
            }
        }
        let mut peak = 0;
        for p in 0..s {
            if pooled[anchor][p] > pooled[anchor][peak] {
                peak = p;
            }
        }
        let mut q = vec![1.0 / s as f64; s];
        q[peak] += 1e-3;
        q
    } else {
        let e: Vec<f64> = votes.iter().map(|v| ((v - max) / cfg.temp_a).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    };
    let sm = smooth(&soft, rows, cols, cfg.sigma);
    let z: f64 = sm.iter().sum();
    Oracle {
        weights: sm.into_iter().map(|x| x / z).collect(),
        confident,
        fallback,
        flat,
    }
}

pub fn random_row<R: Rng>(rng: &mut R, s: usize, sharpness: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..s)
        .map(|_| (sharpness * rng.gen_range(-1.0..1.0f64)).exp())
        .collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn factor(s: usize, rng: &mut impl Rng) -> (usize, usize) {
    let divisors: Vec<usize> = (1..=s).filter(|r| s.is_multiple_of(*r)).collect();
    let r = divisors[rng.gen_range(0..divisors.len())];
    (r, s / r)
}

pub fn check(att: &Nested, mask: &[bool], cfg: &PseudoConfig, rows: usize, cols: usize) -> Oracle {
    let stack = AttentionStack::from_nested(att).unwrap();
    let got = build_pseudo(&stack, mask, cfg, rows, cols).unwrap();
    let want = oracle(att, mask, cfg, rows, cols);
    assert_eq!(got.confident, want.confident);
    assert_eq!(got.used_fallback, want.fallback);
    assert_eq!(got.flat_vote, want.flat);
    for (p, (a, b)) in got.weights.iter().zip(&want.weights).enumerate() {
        assert!((a - b).abs() <= 1e-9, "patch {p}: {a} vs {b}");
    }
    want
}

/// A random pseudo-attention instance within S <= 16, L <= 3, H <= 3, T <= 10.
pub fn random_pseudo_instance(rng: &mut ChaCha8Rng) -> (Nested, Vec<bool>, PseudoConfig, usize, usize) {
    let s = rng.gen_range(1..=16);
    let (l, h, t) = (rng.gen_range(1..=3), rng.gen_range(1..=3), rng.gen_range(1..=10));
    let (rows, cols) = factor(s, rng);
    let att: Nested = (0..t)
        .map(|_| {
            let sharp = rng.gen_range(0.0..12.0);
            (0..l)
                .map(|_| (0..h).map(|_| random_row(rng, s, sharp)).collect())
                .collect()
        })
        .collect();
    let mut mask: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.2)).collect();
    let keep = rng.gen_range(0..t);
    mask[keep] = false;
    let cfg = PseudoConfig {
        tau: rng.gen_range(0.2..2.5),
        ..PseudoConfig::default()
    };
    (att, mask, cfg, rows, cols)
}

pub const TOL: f64 = 1e-4;
pub const EPS: f64 = 1e-5;

pub struct Instance {
    pub params: ModelParams,
    pub enc: Encoded,
    pub tokens: Vec<usize>,
    /// A grid shape holding the instance's patches.
    pub grid: (usize, usize),
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the first seeds pin the largest allowed shape
    let (v, d, s): (usize, usize, usize) = if seed < 3 {
        (16, 8, 16)
    } else {
        (rng.gen_range(3..=16), rng.gen_range(2..=8), rng.gen_range(1..=16))
    };
    let grid = (1..=s)
        .rev()
        .find(|r| s.is_multiple_of(*r) && r * r <= s)
        .map_or((1, s), |r| (r, s / r));
    let params = ModelParams::init_scaled(v, d, seed, 0.5).unwrap();
    let enc = Encoded {
        patches: (0..s)
            .map(|_| (0..rng.gen_range(0..=3)).map(|_| rng.gen_range(0..v)).collect())
            .collect(),
        question: (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..v)).collect(),
        bos: rng.gen_range(0..v),
    };
    let tokens = (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..v)).collect();
    Instance {
        params,
        enc,
        tokens,
        grid,
    }
}

pub fn rebuild(inst: &Instance, theta: &[f64]) -> ModelParams {
    ModelParams::from_vec(inst.params.vocab_size(), inst.params.dim(), theta.to_vec()).unwrap()
}

/// Relative error of the supervised gradient on instance `seed`.
pub fn sft_error(seed: u64) -> f64 {
    let inst = instance(seed);
    let pass = forward(&inst.params, &inst.enc, &inst.tokens, true).unwrap();
    let (_, dl) = sft_loss(&pass);
    let mut g = vec![0.0; inst.params.len()];
    backward(&inst.params, &pass, &dl, None, &mut g).unwrap();
    let f = |theta: &[f64]| {
        let p = rebuild(&inst, theta);
        sft_loss(&forward(&p, &inst.enc, &inst.tokens, false).unwrap()).0
    };
    fd_gradient_check(f, inst.params.as_slice(), &g, EPS).unwrap()
}

/// Relative error of the attention-loss gradient, with the target held fixed.
pub fn attn_error(seed: u64) -> f64 {
    let cfg = PseudoConfig::default();
    let inst = instance(seed);
    let pass = forward(&inst.params, &inst.enc, &inst.tokens, true).unwrap();
    let mask = vec![false; inst.tokens.len()];
    let (rows, cols) = inst.grid;
    // the target is a constant built from the unperturbed pass
    let target = build_pseudo(&pass.attention_stack().unwrap(), &mask, &cfg, rows, cols).unwrap();
    let confident = target.confident.clone();
    let h = model_map(&pass.attn, &confident).unwrap();
    let dh = attention_loss_grad(&h, &target);
    let mut d_attn = vec![vec![0.0; dh.len()]; inst.tokens.len()];
    for &t in &confident {
        for (d, g) in d_attn[t].iter_mut().zip(&dh) {
            *d = g / confident.len() as f64;
        }
    }
    let zero = vec![vec![0.0; inst.params.vocab_size()]; inst.tokens.len()];
    let mut g = vec![0.0; inst.params.len()];
    backward(&inst.params, &pass, &zero, Some(&d_attn), &mut g).unwrap();
    let f = |theta: &[f64]| {
        let p = rebuild(&inst, theta);
        let pass = forward(&p, &inst.enc, &inst.tokens, false).unwrap();
        attention_loss(&model_map(&pass.attn, &confident).unwrap(), &target).unwrap()
    };
    fd_gradient_check(f, inst.params.as_slice(), &g, EPS).unwrap()
}

pub fn reg_error(seed: u64, lambda: f64) -> f64 {
    let inst = instance(seed);
    let g: Vec<f64> = inst.params.as_slice().iter().map(|x| 2.0 * lambda * x).collect();
    let f = |theta: &[f64]| lambda * theta.iter().map(|x| x * x).sum::<f64>();
    fd_gradient_check(f, inst.params.as_slice(), &g, EPS).unwrap()
}

/// Relative error of the score-function term on a one-token answer.
pub fn score_function_error(seed: u64) -> f64 {
    let inst = instance(seed);
    let tokens = &inst.tokens[..1];
    let pass = forward(&inst.params, &inst.enc, tokens, true).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let (loss, baseline): (f64, f64) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
    let dl = feedback_gradient(&pass, loss, baseline);
    let mut g = vec![0.0; inst.params.len()];
    backward(&inst.params, &pass, &dl, None, &mut g).unwrap();
    // the estimator is the gradient of (loss - b) log p(a), with loss and b held fixed
    let f = |theta: &[f64]| {
        let p = rebuild(&inst, theta);
        (loss - baseline) * forward(&p, &inst.enc, tokens, false).unwrap().log_prob()
    };
    fd_gradient_check(f, inst.params.as_slice(), &g, EPS).unwrap()
}
