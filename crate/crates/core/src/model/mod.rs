//! The trainable main model: a single cross-attention decoder step over patch
//! embeddings, with a hand-written backward pass.
//!
//! Per patch `s` with tokens `P_s` and per decoding step `t`:
//!
//! ```text
//! f_s = Σ_{w∈P_s} E[w]      v_s = P f_s      k_s = Wk v_s
//! x_t = mean_{w∈Q} E[w] + E[y_{t-1}] + E[y_{t-2}]
//! r_t = Wq x_t              a_t = softmax(k·r_t / √d)
//! h_t = Σ_s a_{t,s} v_s + x_t        p_t = softmax(Woᵀ h_t)
//! ```

pub mod aggregator;
mod checkpoint;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use aggregator::AggregatorParams;
pub use checkpoint::{Checkpoint, CheckpointHeader, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};

use crate::error::{invalid_arg, invalid_input, Error, Result};
use crate::harness::scene::SceneGrid;
use crate::numerics::{argmax, softmax_backward, softmax_unchecked, ProbVector};
use crate::vocab::Vocab;

pub const DEFAULT_MAX_LEN: usize = 8;

/// Per-token cross-attention `A[t][l][h][s]`, stored flat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionStack {
    layers: usize,
    heads: usize,
    patches: usize,
    data: Vec<f64>,
}

impl AttentionStack {
    /// Builds a stack from nested `[token][layer][head][patch]` arrays and
    /// checks that every row is a probability vector.
    pub fn from_nested(nested: &[Vec<Vec<Vec<f64>>>]) -> Result<Self> {
        let first = nested
            .first()
            .ok_or_else(|| invalid_input("attention stack has no tokens"))?;
        let layers = first.len();
        let heads = first.first().map_or(0, Vec::len);
        let patches = first.first().and_then(|l| l.first()).map_or(0, Vec::len);
        if layers == 0 || heads == 0 || patches == 0 {
            return Err(invalid_input("attention stack has an empty dimension"));
        }
        let mut data = Vec::with_capacity(nested.len() * layers * heads * patches);
        for (t, tok) in nested.iter().enumerate() {
            if tok.len() != layers {
                return Err(invalid_input(format!(
                    "token {t} has {} layers, expected {layers}",
                    tok.len()
                )));
            }
            for (l, layer) in tok.iter().enumerate() {
                if layer.len() != heads {
                    return Err(invalid_input(format!(
                        "token {t} layer {l} has {} heads, expected {heads}",
                        layer.len()
                    )));
                }
                for row in layer {
                    if row.len() != patches {
                        return Err(invalid_input(format!(
                            "token {t} layer {l} has a row of {} patches, expected {patches}",
                            row.len()
                        )));
                    }
                    data.extend_from_slice(row);
                }
            }
        }
        Self::from_flat(layers, heads, patches, data)
    }

    pub fn from_flat(layers: usize, heads: usize, patches: usize, data: Vec<f64>) -> Result<Self> {
        let row = layers * heads * patches;
        if row == 0 || data.is_empty() || !data.len().is_multiple_of(row) {
            return Err(invalid_input(format!(
                "{} values do not tile ({layers}, {heads}, {patches}) rows",
                data.len()
            )));
        }
        for chunk in data.chunks(patches) {
            ProbVector::new(chunk.to_vec())
                .map_err(|e| invalid_input(format!("attention row is not a distribution: {e}")))?;
        }
        Ok(AttentionStack {
            layers,
            heads,
            patches,
            data,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.data.len() / (self.layers * self.heads * self.patches)
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn patches(&self) -> usize {
        self.patches
    }

    pub fn row(&self, token: usize, layer: usize, head: usize) -> &[f64] {
        let start = ((token * self.layers + layer) * self.heads + head) * self.patches;
        &self.data[start..start + self.patches]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.num_tokens())
            .map(|t| {
                (0..self.layers)
                    .map(|l| (0..self.heads).map(|h| self.row(t, l, h).to_vec()).collect())
                    .collect()
            })
            .collect()
    }
}

/// Flat parameter vector of the model; views into it are by offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    vocab_size: usize,
    dim: usize,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn num_params(vocab_size: usize, dim: usize) -> usize {
        2 * vocab_size * dim + 3 * dim * dim
    }

    pub fn zeros(vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(invalid_arg(format!("model shape V={vocab_size}, d={dim} is empty")));
        }
        Ok(ModelParams {
            vocab_size,
            dim,
            data: vec![0.0; Self::num_params(vocab_size, dim)],
        })
    }

    /// Uniform init in [-0.1, 0.1].
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        Self::init_scaled(vocab_size, dim, seed, 0.1)
    }

    /// Uniform init in [-scale, scale].
    pub fn init_scaled(vocab_size: usize, dim: usize, seed: u64, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(invalid_arg(format!("init scale must be finite and >= 0, got {scale}")));
        }
        let mut p = Self::zeros(vocab_size, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in &mut p.data {
            *x = rng.gen_range(-scale..=scale);
        }
        Ok(p)
    }

    pub fn from_vec(vocab_size: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != Self::num_params(vocab_size, dim) {
            return Err(invalid_input(format!(
                "{} parameters given for V={vocab_size}, d={dim}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(invalid_input("model parameters must be finite"));
        }
        Ok(ModelParams { vocab_size, dim, data })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    fn layout(&self) -> Layout {
        Layout::new(self.vocab_size, self.dim)
    }

    pub fn token_embed(&self) -> &[f64] {
        &self.data[self.layout().embed()]
    }

    pub fn patch_proj(&self) -> &[f64] {
        &self.data[self.layout().patch()]
    }

    pub fn query_proj(&self) -> &[f64] {
        &self.data[self.layout().query()]
    }

    pub fn key_proj(&self) -> &[f64] {
        &self.data[self.layout().key()]
    }

    pub fn output_head(&self) -> &[f64] {
        &self.data[self.layout().output()]
    }

    pub fn query_proj_mut(&mut self) -> &mut [f64] {
        let r = self.layout().query();
        &mut self.data[r]
    }

    pub fn key_proj_mut(&mut self) -> &mut [f64] {
        let r = self.layout().key();
        &mut self.data[r]
    }
}

#[derive(Clone, Copy)]
struct Layout {
    v: usize,
    d: usize,
}

impl Layout {
    fn new(v: usize, d: usize) -> Self {
        Layout { v, d }
    }
    fn embed(self) -> std::ops::Range<usize> {
        0..self.v * self.d
    }
    fn patch(self) -> std::ops::Range<usize> {
        let s = self.v * self.d;
        s..s + self.d * self.d
    }
    fn query(self) -> std::ops::Range<usize> {
        let s = self.patch().end;
        s..s + self.d * self.d
    }
    fn key(self) -> std::ops::Range<usize> {
        let s = self.query().end;
        s..s + self.d * self.d
    }
    fn output(self) -> std::ops::Range<usize> {
        let s = self.key().end;
        s..s + self.d * self.v
    }
}

/// Token ids of one model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub patches: Vec<Vec<usize>>,
    pub question: Vec<usize>,
    pub bos: usize,
}

impl Encoded {
    pub fn new(vocab: &Vocab, scene: &SceneGrid, question: &[String]) -> Result<Self> {
        if question.is_empty() {
            return Err(invalid_input("question is empty"));
        }
        if scene.num_patches() == 0 {
            return Err(invalid_input("scene has no patches"));
        }
        let patches = (0..scene.num_patches())
            .map(|p| vocab.encode(&scene.patch_tokens(p)))
            .collect::<Result<_>>()?;
        Ok(Encoded {
            patches,
            question: vocab.encode(question)?,
            bos: vocab.bos(),
        })
    }

    fn check(&self, vocab_size: usize) -> Result<()> {
        if self.question.is_empty() || self.patches.is_empty() {
            return Err(invalid_input("model input needs a question and at least one patch"));
        }
        let bad = self
            .question
            .iter()
            .chain(self.patches.iter().flatten())
            .chain(std::iter::once(&self.bos))
            .find(|&&id| id >= vocab_size);
        match bad {
            Some(id) => Err(invalid_input(format!(
                "token id {id} is out of range for V={vocab_size}"
            ))),
            None => Ok(()),
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
struct Cache {
    enc: Encoded,
    tokens: Vec<usize>,
    feats: Vec<Vec<f64>>,
    vals: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    xs: Vec<Vec<f64>>,
    rs: Vec<Vec<f64>>,
    hs: Vec<Vec<f64>>,
}

/// A teacher-forced pass over a fixed token sequence.
#[derive(Debug, Clone)]
pub struct Pass {
    /// Output distribution at each step.
    pub probs: Vec<Vec<f64>>,
    /// Attention over patches at each step.
    pub attn: Vec<Vec<f64>>,
    /// The tokens the pass was forced on (step `t` predicts `tokens[t]`).
    pub tokens: Vec<usize>,
    cache: Option<Cache>,
}

impl Pass {
    pub fn attention_stack(&self) -> Result<AttentionStack> {
        let patches = self.attn.first().map_or(0, Vec::len);
        AttentionStack::from_flat(1, 1, patches, self.attn.concat())
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn drop_cache(&mut self) {
        self.cache = None;
    }

    /// Σ_t log p_t[tokens[t]].
    pub fn log_prob(&self) -> f64 {
        self.probs.iter().zip(&self.tokens).map(|(p, &y)| p[y].ln()).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn matvec(m: &[f64], x: &[f64], d: usize) -> Vec<f64> {
    m.chunks_exact(d).map(|row| dot(row, x)).collect()
}

fn matvec_t(m: &[f64], y: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for (row, yi) in m.chunks_exact(d).zip(y) {
        for (o, mij) in out.iter_mut().zip(row) {
            *o += mij * yi;
        }
    }
    out
}

/// `m += u vᵀ` for a row-major `m` with `v.len()` columns.
fn add_outer(m: &mut [f64], u: &[f64], v: &[f64]) {
    for (row, ui) in m.chunks_exact_mut(v.len()).zip(u) {
        for (o, vj) in row.iter_mut().zip(v) {
            *o += ui * vj;
        }
    }
}

fn add_to(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Per-scene quantities shared by every decoding step.
struct Context {
    feats: Vec<Vec<f64>>,
    vals: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
    qbar: Vec<f64>,
}

struct Step {
    x: Vec<f64>,
    r: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

impl Context {
    fn new(params: &ModelParams, enc: &Encoded) -> Result<Self> {
        let d = params.dim;
        enc.check(params.vocab_size)?;
        let embed = params.token_embed();
        let row = |id: usize| &embed[id * d..(id + 1) * d];
        let feats: Vec<Vec<f64>> = enc
            .patches
            .iter()
            .map(|toks| {
                let mut f = vec![0.0; d];
                for &id in toks {
                    add_to(&mut f, row(id));
                }
                f
            })
            .collect();
        let vals: Vec<Vec<f64>> = feats.iter().map(|f| matvec(params.patch_proj(), f, d)).collect();
        let keys: Vec<Vec<f64>> = vals.iter().map(|x| matvec(params.key_proj(), x, d)).collect();
        let mut qbar = vec![0.0; d];
        for &id in &enc.question {
            add_to(&mut qbar, row(id));
        }
        let nq = enc.question.len() as f64;
        qbar.iter_mut().for_each(|x| *x /= nq);
        Ok(Context {
            feats,
            vals,
            keys,
            qbar,
        })
    }

    fn step(&self, params: &ModelParams, prev1: usize, prev2: usize) -> Step {
        let (v, d) = (params.vocab_size, params.dim);
        let embed = params.token_embed();
        let mut x = self.qbar.clone();
        add_to(&mut x, &embed[prev1 * d..(prev1 + 1) * d]);
        add_to(&mut x, &embed[prev2 * d..(prev2 + 1) * d]);
        let r = matvec(params.query_proj(), &x, d);
        let scale = 1.0 / (d as f64).sqrt();
        let z: Vec<f64> = self.keys.iter().map(|k| dot(k, &r) * scale).collect();
        let a = softmax_unchecked(&z, 1.0);
        let mut h = x.clone();
        for (s, vs) in self.vals.iter().enumerate() {
            for i in 0..d {
                h[i] += a[s] * vs[i];
            }
        }
        let wo = params.output_head();
        let mut logits = vec![0.0; v];
        for (i, hi) in h.iter().enumerate() {
            for (l, w) in logits.iter_mut().zip(&wo[i * v..(i + 1) * v]) {
                *l += hi * w;
            }
        }
        let probs = softmax_unchecked(&logits, 1.0);
        Step { x, r, a, h, probs }
    }
}

/// Runs the decoder forced on `tokens`. Step `t` conditions on the two
/// previous tokens (padded with BOS) and scores `tokens[t]`.
pub fn forward(params: &ModelParams, enc: &Encoded, tokens: &[usize], keep_cache: bool) -> Result<Pass> {
    let v = params.vocab_size;
    let ctx = Context::new(params, enc)?;
    if let Some(&bad) = tokens.iter().find(|&&y| y >= v) {
        return Err(invalid_input(format!("token id {bad} is out of range for V={v}")));
    }
    let steps = tokens.len();
    let mut pass = Pass {
        probs: Vec::with_capacity(steps),
        attn: Vec::with_capacity(steps),
        tokens: tokens.to_vec(),
        cache: None,
    };
    let (mut xs, mut rs, mut hs) = (Vec::new(), Vec::new(), Vec::new());
    for t in 0..steps {
        let prev1 = if t >= 1 { tokens[t - 1] } else { enc.bos };
        let prev2 = if t >= 2 { tokens[t - 2] } else { enc.bos };
        let st = ctx.step(params, prev1, prev2);
        pass.probs.push(st.probs);
        pass.attn.push(st.a);
        if keep_cache {
            xs.push(st.x);
            rs.push(st.r);
            hs.push(st.h);
        }
    }
    if pass.probs.iter().flatten().any(|p| !p.is_finite()) {
        return Err(Error::InvalidState(
            "forward pass produced non-finite probabilities".into(),
        ));
    }
    if keep_cache {
        let Context { feats, vals, keys, .. } = ctx;
        pass.cache = Some(Cache {
            enc: enc.clone(),
            tokens: tokens.to_vec(),
            feats,
            vals,
            keys,
            xs,
            rs,
            hs,
        });
    }
    Ok(pass)
}

/// Accumulates parameter gradients into `grad` given upstream gradients on
/// the logits and (optionally) on the attention rows of each step.
pub fn backward(
    params: &ModelParams,
    pass: &Pass,
    d_logits: &[Vec<f64>],
    d_attn: Option<&[Vec<f64>]>,
    grad: &mut [f64],
) -> Result<()> {
    let cache = pass
        .cache
        .as_ref()
        .ok_or_else(|| Error::InvalidState("backward called on a pass without an activation cache".into()))?;
    let (v, d) = (params.vocab_size, params.dim);
    let steps = cache.tokens.len();
    if grad.len() != params.len() {
        return Err(invalid_arg(format!(
            "gradient buffer has {} slots for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    if d_logits.len() != steps || d_logits.iter().any(|g| g.len() != v) {
        return Err(invalid_arg("logit gradient shape does not match the pass"));
    }
    let n_patches = cache.vals.len();
    if let Some(da) = d_attn {
        if da.len() != steps || da.iter().any(|g| g.len() != n_patches) {
            return Err(invalid_arg("attention gradient shape does not match the pass"));
        }
    }
    let lay = params.layout();
    let scale = 1.0 / (d as f64).sqrt();
    let wo = params.output_head();
    let wq = params.query_proj();
    let wk = params.key_proj();
    let pp = params.patch_proj();

    let mut d_vals = vec![vec![0.0; d]; n_patches];
    let mut d_keys = vec![vec![0.0; d]; n_patches];
    let mut d_qbar = vec![0.0; d];
    let mut d_embed_rows: Vec<(usize, Vec<f64>)> = Vec::new();

    for t in 0..steps {
        let g = &d_logits[t];
        let h = &cache.hs[t];
        let a = &pass.attn[t];
        add_outer(&mut grad[lay.output()], h, g);
        let dh: Vec<f64> = wo.chunks_exact(v).map(|row| dot(row, g)).collect();
        let mut dx = dh.clone();
        let mut da: Vec<f64> = cache.vals.iter().map(|vs| dot(vs, &dh)).collect();
        for (s, dv) in d_vals.iter_mut().enumerate() {
            for i in 0..d {
                dv[i] += a[s] * dh[i];
            }
        }
        if let Some(extra) = d_attn {
            add_to(&mut da, &extra[t]);
        }
        let dz = softmax_backward(a, &da);
        let r = &cache.rs[t];
        let mut dr = vec![0.0; d];
        for (s, k) in cache.keys.iter().enumerate() {
            let c = dz[s] * scale;
            for i in 0..d {
                d_keys[s][i] += c * r[i];
                dr[i] += c * k[i];
            }
        }
        let x = &cache.xs[t];
        add_outer(&mut grad[lay.query()], &dr, x);
        add_to(&mut dx, &matvec_t(wq, &dr, d));
        add_to(&mut d_qbar, &dx);
        let prev1 = if t >= 1 { cache.tokens[t - 1] } else { cache.enc.bos };
        let prev2 = if t >= 2 { cache.tokens[t - 2] } else { cache.enc.bos };
        d_embed_rows.push((prev1, dx.clone()));
        d_embed_rows.push((prev2, dx));
    }

    for s in 0..n_patches {
        add_outer(&mut grad[lay.key()], &d_keys[s], &cache.vals[s]);
        let back = matvec_t(wk, &d_keys[s], d);
        add_to(&mut d_vals[s], &back);
        add_outer(&mut grad[lay.patch()], &d_vals[s], &cache.feats[s]);
        let df = matvec_t(pp, &d_vals[s], d);
        for &id in &cache.enc.patches[s] {
            d_embed_rows.push((id, df.clone()));
        }
    }
    let nq = cache.enc.question.len() as f64;
    let dq: Vec<f64> = d_qbar.iter().map(|x| x / nq).collect();
    for &id in &cache.enc.question {
        d_embed_rows.push((id, dq.clone()));
    }
    let ge = &mut grad[lay.embed()];
    for (id, g) in d_embed_rows {
        add_to(&mut ge[id * d..(id + 1) * d], &g);
    }
    Ok(())
}

/// How answers are drawn from the per-step distributions.
pub enum Decoding<'a, R: Rng> {
    Greedy,
    Sampled(&'a mut R),
}

/// Generates up to `max_len` tokens, stopping after EOS (which is kept).
pub fn generate<R: Rng>(
    params: &ModelParams,
    enc: &Encoded,
    eos: usize,
    max_len: usize,
    mut mode: Decoding<'_, R>,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(invalid_arg("max_len must be >= 1"));
    }
    let ctx = Context::new(params, enc)?;
    let mut tokens: Vec<usize> = Vec::with_capacity(max_len);
    while tokens.len() < max_len {
        let t = tokens.len();
        let prev1 = if t >= 1 { tokens[t - 1] } else { enc.bos };
        let prev2 = if t >= 2 { tokens[t - 2] } else { enc.bos };
        let p = ctx.step(params, prev1, prev2).probs;
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidState("decoder produced non-finite probabilities".into()));
        }
        let next = match &mut mode {
            Decoding::Greedy => argmax(&p),
            Decoding::Sampled(rng) => WeightedIndex::new(&p)
                .map_err(|e| Error::InvalidState(format!("cannot sample from step distribution: {e}")))?
                .sample(*rng),
        };
        tokens.push(next);
        if next == eos {
            break;
        }
    }
    Ok(tokens)
}

/// Greedy decoding; independent of any RNG.
pub fn generate_greedy(params: &ModelParams, enc: &Encoded, eos: usize, max_len: usize) -> Result<Vec<usize>> {
    generate::<ChaCha8Rng>(params, enc, eos, max_len, Decoding::Greedy)
}

/// Mean token cross-entropy of `targets` and its logit gradient.
pub fn sft_loss(pass: &Pass) -> (f64, Vec<Vec<f64>>) {
    let n = pass.tokens.len().max(1) as f64;
    let mut loss = 0.0;
    let grads = pass
        .probs
        .iter()
        .zip(&pass.tokens)
        .map(|(p, &y)| {
            loss -= p[y].max(f64::MIN_POSITIVE).ln();
            let mut g: Vec<f64> = p.iter().map(|x| x / n).collect();
            g[y] -= 1.0 / n;
            g
        })
        .collect();
    (loss / n, grads)
}

/// Strips a trailing EOS and decodes ids to token strings.
pub fn answer_tokens(vocab: &Vocab, ids: &[usize]) -> Vec<String> {
    let eos = vocab.eos();
    let end = ids.iter().position(|&i| i == eos).unwrap_or(ids.len());
    vocab.decode(&ids[..end])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fd_gradient_check;

    fn toy_input(v: usize, s: usize, seed: u64) -> Encoded {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Encoded {
            patches: (0..s)
                .map(|_| (0..rng.gen_range(0..3)).map(|_| rng.gen_range(0..v)).collect())
                .collect(),
            question: (0..3).map(|_| rng.gen_range(0..v)).collect(),
            bos: 0,
        }
    }

    #[test]
    fn distributions_are_normalized() {
        let p = ModelParams::init(8, 4, 1).unwrap();
        let enc = toy_input(8, 4, 2);
        let pass = forward(&p, &enc, &[1, 2, 3], false).unwrap();
        for row in pass.probs.iter().chain(&pass.attn) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert_eq!(pass.attention_stack().unwrap().num_tokens(), 3);
    }

    #[test]
    fn zero_query_key_gives_uniform_attention() {
        let mut p = ModelParams::init(8, 4, 1).unwrap();
        p.query_proj_mut().fill(0.0);
        p.key_proj_mut().fill(0.0);
        let pass = forward(&p, &toy_input(8, 5, 3), &[4, 5], false).unwrap();
        for row in &pass.attn {
            assert!(row.iter().all(|&a| (a - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let p = ModelParams::init(8, 4, 1).unwrap();
        let mut enc = toy_input(8, 2, 3);
        assert!(matches!(forward(&p, &enc, &[8], false), Err(Error::InvalidInput(_))));
        enc.question.push(99);
        assert!(matches!(forward(&p, &enc, &[1], false), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn backward_without_cache_is_invalid_state() {
        let p = ModelParams::init(8, 4, 1).unwrap();
        let pass = forward(&p, &toy_input(8, 2, 3), &[1], false).unwrap();
        let mut g = vec![0.0; p.len()];
        let err = backward(&p, &pass, &[vec![0.0; 8]], None, &mut g).unwrap_err();
        assert!(matches!(err, Error::InvalidState(_)));
    }

    #[test]
    fn single_token_vocab_has_zero_logit_gradient() {
        let p = ModelParams::init(1, 3, 1).unwrap();
        let enc = Encoded {
            patches: vec![vec![0], vec![]],
            question: vec![0],
            bos: 0,
        };
        let pass = forward(&p, &enc, &[0, 0], true).unwrap();
        let (loss, g) = sft_loss(&pass);
        assert!(loss.abs() < 1e-15);
        assert!(g.iter().flatten().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn sft_gradient_matches_finite_differences() {
        let (v, d) = (8, 4);
        let p = ModelParams::init(v, d, 11).unwrap();
        let enc = toy_input(v, 4, 12);
        let targets = [3, 1, 4, 1];
        let pass = forward(&p, &enc, &targets, true).unwrap();
        let (_, dl) = sft_loss(&pass);
        let mut g = vec![0.0; p.len()];
        backward(&p, &pass, &dl, None, &mut g).unwrap();
        let f = |theta: &[f64]| {
            let q = ModelParams::from_vec(v, d, theta.to_vec()).unwrap();
            sft_loss(&forward(&q, &enc, &targets, false).unwrap()).0
        };
        let err = fd_gradient_check(f, p.as_slice(), &g, 1e-5).unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn greedy_is_repeatable_and_sampling_is_seeded() {
        let p = ModelParams::init(8, 4, 5).unwrap();
        let enc = toy_input(8, 4, 6);
        let a = generate_greedy(&p, &enc, 2, 8).unwrap();
        assert_eq!(a, generate_greedy(&p, &enc, 2, 8).unwrap());
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let s1 = generate(&p, &enc, 2, 8, Decoding::Sampled(&mut r1)).unwrap();
        let s2 = generate(&p, &enc, 2, 8, Decoding::Sampled(&mut r2)).unwrap();
        assert_eq!(s1, s2);
        assert!(!s1.is_empty() && s1.len() <= 8);
    }
}
