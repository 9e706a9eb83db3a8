//! The closed training loop: first look, reflect, second look, correct.

mod config;

pub use config::{Estimator, TrainConfig};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Error, Result};
use crate::feedback::{
    cfp_lang_generate, cfp_vis_describe, language_loss, select_best, FactBagScorer, TextScorer, TokenF1Scorer,
    VisualScorer,
};
use crate::gating::{acw_gamma, gamma_distribution, screen_answer, Cause, GammaWeight, RejectionVerdict};
use crate::harness::dataset::Sample;
use crate::harness::noise::noise_caption;
use crate::model::{
    aggregator, backward, forward, generate, sft_loss, AggregatorParams, Checkpoint, Decoding, Encoded, ModelParams,
    Pass,
};
use crate::pseudo::{attention_loss, attention_loss_grad, build_pseudo, model_map, token_mask};
use crate::vocab::Vocab;

/// Unweighted loss terms of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub sft: f64,
    pub align: f64,
    pub vis: f64,
    pub attn: f64,
    /// Squared L2 norm of the model parameters.
    pub reg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Weights {
    pub fn new(cfg: &TrainConfig, gamma: f64) -> Self {
        Weights {
            alpha: cfg.alpha,
            beta: cfg.beta,
            gamma,
            lambda: cfg.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sft: f64,
    pub align: f64,
    pub vis: f64,
    pub attn: f64,
    pub reg: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    /// Recomputes the weighted sum from the stored parts.
    pub fn resum(&self) -> f64 {
        self.sft + self.alpha * self.align + self.beta * self.vis + self.gamma * self.attn + self.lambda * self.reg
    }
}

pub fn total_loss(parts: &LossParts, w: &Weights) -> Result<LossBreakdown> {
    let terms = [parts.sft, parts.align, parts.vis, parts.attn, parts.reg];
    if terms.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(invalid_arg(format!("loss parts must be finite and >= 0: {parts:?}")));
    }
    let mut b = LossBreakdown {
        sft: parts.sft,
        align: parts.align,
        vis: parts.vis,
        attn: parts.attn,
        reg: parts.reg,
        total: 0.0,
        alpha: w.alpha,
        beta: w.beta,
        gamma: w.gamma,
        lambda: w.lambda,
    };
    b.total = b.resum();
    Ok(b)
}

/// Logit gradient of `(loss − baseline) · Σ_t log p_t(y_t)` for the forced
/// tokens of `pass`.
pub fn feedback_gradient(pass: &Pass, loss: f64, baseline: f64) -> Vec<Vec<f64>> {
    let adv = loss - baseline;
    pass.probs
        .iter()
        .zip(&pass.tokens)
        .map(|(p, &y)| {
            let mut g: Vec<f64> = p.iter().map(|x| -adv * x).collect();
            g[y] += adv;
            g
        })
        .collect()
}

/// Exponential moving average of the feedback loss, seeded by the first value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub decay: f64,
    pub value: Option<f64>,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { decay, value: None }
    }

    /// Returns the baseline for `loss`, then folds `loss` in.
    pub fn observe(&mut self, loss: f64) -> f64 {
        let b = self.value.unwrap_or(loss);
        self.value = Some(self.decay * b + (1.0 - self.decay) * loss);
        b
    }
}

/// Per-sample evidence of one pass through the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub step: usize,
    pub sample_id: usize,
    pub answer: Vec<String>,
    pub verdict: RejectionVerdict,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reverse_question: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub language_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub caption: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visual_similarity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<GammaWeight>,
    pub entropies: Vec<f64>,
    pub confident: Vec<usize>,
    pub used_fallback: bool,
    pub flat_vote: bool,
    pub forced_answer: bool,
    pub teacher_noise: bool,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub samples: usize,
    pub accepted: usize,
    pub sft: f64,
    pub align: f64,
    pub vis: f64,
    pub attn: f64,
    pub total: f64,
    pub gamma_high: f64,
    pub gamma_medium: f64,
    pub gamma_low: f64,
    pub mean_language_score: f64,
    pub mean_visual_similarity: f64,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,samples,accepted,sft,align,vis,attn,total,gamma_high,gamma_medium,gamma_low,\
mean_language_score,mean_visual_similarity";

impl EpochMetrics {
    pub fn from_trace(epoch: usize, records: &[TraceRecord]) -> Result<Self> {
        let n = records.len().max(1) as f64;
        let mean = |f: &dyn Fn(&TraceRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let gammas: Vec<GammaWeight> = records.iter().filter_map(|r| r.gamma).collect();
        let (gh, gm, gl) = if gammas.is_empty() {
            (0.0, 0.0, 0.0)
        } else {
            gamma_distribution(&gammas)?
        };
        let avg = |xs: Vec<f64>| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        Ok(EpochMetrics {
            epoch,
            samples: records.len(),
            accepted: records.iter().filter(|r| r.verdict.accepted()).count(),
            sft: mean(&|r| r.losses.sft),
            align: mean(&|r| r.losses.align),
            vis: mean(&|r| r.losses.vis),
            attn: mean(&|r| r.losses.attn),
            total: mean(&|r| r.losses.total),
            gamma_high: gh,
            gamma_medium: gm,
            gamma_low: gl,
            mean_language_score: avg(records.iter().filter_map(|r| r.language_score).collect()),
            mean_visual_similarity: avg(records.iter().filter_map(|r| r.visual_similarity).collect()),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10},{:.10}",
            self.epoch,
            self.samples,
            self.accepted,
            self.sft,
            self.align,
            self.vis,
            self.attn,
            self.total,
            self.gamma_high,
            self.gamma_medium,
            self.gamma_low,
            self.mean_language_score,
            self.mean_visual_similarity
        )
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for a (run, epoch, item) triple.
pub fn derive_seed(seed: u64, epoch: u64, item: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ epoch) ^ item)
}

type ForcedAnswer = Box<dyn Fn(&Sample) -> Option<Vec<String>>>;

/// Owns the trainable state and the frozen feedback modules.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub vocab: Vocab,
    pub model: ModelParams,
    pub aggregator: AggregatorParams,
    pub baseline: Baseline,
    text: Box<dyn TextScorer>,
    visual: Box<dyn VisualScorer>,
    forced: Option<ForcedAnswer>,
    epoch: usize,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, vocab: Vocab) -> Result<Self> {
        cfg.validate()?;
        let model = ModelParams::init_scaled(vocab.len(), cfg.dim, derive_seed(cfg.seed, 0, 1), cfg.init_scale)?;
        let aggregator = AggregatorParams::init(cfg.aggregator_hidden, derive_seed(cfg.seed, 0, 2))?;
        Ok(Trainer {
            baseline: Baseline::new(cfg.baseline_decay),
            visual: Box::new(FactBagScorer::new(vocab.clone())),
            text: Box::new(TokenF1Scorer),
            cfg,
            vocab,
            model,
            aggregator,
            forced: None,
            epoch: 0,
            step: 0,
        })
    }

    pub fn with_text_scorer(mut self, scorer: Box<dyn TextScorer>) -> Self {
        self.text = scorer;
        self
    }

    pub fn with_visual_scorer(mut self, scorer: Box<dyn VisualScorer>) -> Self {
        self.visual = scorer;
        self
    }

    /// Replaces the sampled first-look answer of selected samples.
    pub fn with_forced_answers(mut self, f: impl Fn(&Sample) -> Option<Vec<String>> + 'static) -> Self {
        self.forced = Some(Box::new(f));
        self
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn checkpoint(&self, patches: usize) -> Checkpoint {
        Checkpoint::new(
            &self.vocab,
            self.model.clone(),
            self.aggregator.clone(),
            patches,
            self.cfg.max_len,
        )
    }

    fn forced_answer(&self, s: &Sample) -> Option<Vec<String>> {
        if let Some(a) = self.forced.as_ref().and_then(|f| f(s)) {
            return Some(a);
        }
        s.answer_noise.then(|| s.answer.clone())
    }

    /// One batch through the loop followed by a single update.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<Vec<TraceRecord>> {
        if batch.is_empty() {
            return Err(invalid_arg("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut g_model = vec![0.0; self.model.len()];
        let mut g_agg = vec![0.0; self.aggregator.as_slice().len()];
        let reg = self.model.sq_norm();
        let mut records = Vec::with_capacity(batch.len());
        for s in batch {
            let out = self.sample_pass(s, scale, reg, &mut g_model, &mut g_agg)?;
            records.push(out);
        }
        let lam2 = 2.0 * self.cfg.lambda;
        for (g, p) in g_model.iter_mut().zip(self.model.as_slice()) {
            *g += lam2 * p;
        }
        let clip = self.cfg.grad_clip;
        let norm = g_model.iter().map(|g| g * g).sum::<f64>().sqrt();
        let lr = if clip > 0.0 && norm > clip {
            self.cfg.learning_rate * clip / norm
        } else {
            self.cfg.learning_rate
        };
        for (p, g) in self.model.as_mut_slice().iter_mut().zip(&g_model) {
            *p -= lr * g;
        }
        let lr_s = self.cfg.aggregator_learning_rate;
        for (p, g) in self.aggregator.as_mut_slice().iter_mut().zip(&g_agg) {
            *p -= lr_s * g;
        }
        self.step += 1;
        Ok(records)
    }

    fn sample_pass(
        &mut self,
        s: &Sample,
        scale: f64,
        reg: f64,
        g_model: &mut [f64],
        g_agg: &mut [f64],
    ) -> Result<TraceRecord> {
        let cfg = &self.cfg;
        let vocab = &self.vocab;
        let eos = vocab.eos();
        let enc = Encoded::new(vocab, &s.scene, &s.question)?;

        // supervised term on the reference
        let mut reference = vocab.encode(&s.answer)?;
        reference.push(eos);
        let ref_pass = forward(&self.model, &enc, &reference, true)?;
        let (sft, d_sft) = sft_loss(&ref_pass);
        let d_sft: Vec<Vec<f64>> = d_sft
            .into_iter()
            .map(|g| g.into_iter().map(|x| x * scale).collect())
            .collect();
        backward(&self.model, &ref_pass, &d_sft, None, g_model)?;

        // first look
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, self.epoch as u64 + 1, s.id as u64));
        let forced = self.forced_answer(s);
        let answer: Vec<String> = match &forced {
            Some(a) => a.clone(),
            None => {
                let ids = generate(&self.model, &enc, eos, cfg.max_len, Decoding::Sampled(&mut rng))?;
                crate::model::answer_tokens(vocab, &ids)
            }
        };

        let mut record = TraceRecord {
            epoch: self.epoch,
            step: self.step,
            sample_id: s.id,
            answer: answer.clone(),
            verdict: RejectionVerdict::accept(),
            reverse_question: None,
            language_score: None,
            caption: None,
            visual_similarity: None,
            gamma: None,
            entropies: Vec::new(),
            confident: Vec::new(),
            used_fallback: false,
            flat_vote: false,
            forced_answer: forced.is_some(),
            teacher_noise: s.teacher_noise,
            losses: total_loss(
                &LossParts {
                    sft,
                    reg,
                    ..LossParts::default()
                },
                &Weights::new(cfg, 0.0),
            )?,
        };

        // reflect
        let verdict = screen_answer(vocab, &answer);
        if !verdict.accepted() {
            record.verdict = verdict;
            return Ok(record);
        }
        let reject = |record: &mut TraceRecord, cause: Cause, detail: String| {
            record.verdict = RejectionVerdict::reject(cause, detail);
        };
        let mut ids = match vocab.encode(&answer) {
            Ok(ids) => ids,
            Err(e) => {
                reject(&mut record, Cause::NonsenseTokens, e.to_string());
                return Ok(record);
            }
        };
        ids.push(eos);
        let cands = match cfp_lang_generate(vocab, &answer, cfg.candidates, rng.next_u64()) {
            Ok(c) => c,
            Err(Error::EmptyCandidates(d)) => {
                reject(&mut record, Cause::EmptyCandidates, d);
                return Ok(record);
            }
            Err(e) => return Err(e),
        };
        let sel = select_best(&s.question, &cands, self.text.as_ref(), &self.aggregator)?;
        let caption = if s.teacher_noise {
            noise_caption(&mut rng)
        } else {
            match cfp_vis_describe(vocab, &answer) {
                Ok(c) => c,
                Err(Error::EmptyDescription(d)) => {
                    reject(&mut record, Cause::EmptyDescription, d);
                    return Ok(record);
                }
                Err(e) => return Err(e),
            }
        };
        let sim = self.visual.similarity(&s.scene, &caption)?;
        let pass = forward(&self.model, &enc, &ids, true)?;
        let emitted = vocab.decode(&ids);
        let mask = token_mask(vocab, &emitted);
        let target = build_pseudo(&pass.attention_stack()?, &mask, &cfg.pseudo, s.scene.rows, s.scene.cols)?;
        let h = model_map(&pass.attn, &target.confident)?;
        let attn = attention_loss(&h, &target)?;

        // second look
        let align = language_loss(sel.score)?;
        let vis = 1.0 - sim;
        let gamma = acw_gamma(sel.score)?;
        let weights = if cfg.feedback {
            Weights::new(cfg, gamma.value)
        } else {
            Weights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                lambda: cfg.lambda,
            }
        };
        record.losses = total_loss(
            &LossParts {
                sft,
                align,
                vis,
                attn,
                reg,
            },
            &weights,
        )?;
        record.reverse_question = Some(sel.question.clone());
        record.language_score = Some(sel.score);
        record.caption = Some(caption);
        record.visual_similarity = Some(sim);
        record.gamma = Some(gamma);
        record.entropies = target.entropies.clone();
        record.confident = target.confident.clone();
        record.used_fallback = target.used_fallback;
        record.flat_vote = target.flat_vote;

        // correct
        if cfg.feedback {
            let dh = attention_loss_grad(&h, &target);
            let c = gamma.value * scale / target.confident.len() as f64;
            let mut d_attn = vec![vec![0.0; dh.len()]; ids.len()];
            for &t in &target.confident {
                for (d, g) in d_attn[t].iter_mut().zip(&dh) {
                    *d = c * g;
                }
            }
            let feedback = cfg.alpha * align + cfg.beta * vis;
            let d_logits = if cfg.estimator == Estimator::ScoreFunction && forced.is_none() {
                let b = self.baseline.observe(feedback);
                feedback_gradient(&pass, feedback, b)
                    .into_iter()
                    .map(|g| g.into_iter().map(|x| x * scale).collect())
                    .collect()
            } else {
                vec![vec![0.0; vocab.len()]; ids.len()]
            };
            backward(&self.model, &pass, &d_logits, Some(&d_attn), g_model)?;

            // the aggregator's own score of the selected candidate stands in
            // for the reconstruction score, so L_align pulls it up: d(1 - s) = -ds
            let f = aggregator::features(&s.question, &sel.question)?;
            let (_, ds) = self.aggregator.score_and_grad(&f);
            let w = cfg.alpha * scale;
            for (g, d) in g_agg.iter_mut().zip(ds) {
                *g -= w * d;
            }
        }
        Ok(record)
    }

    /// Runs the configured number of epochs over seeded shuffles of `data`.
    pub fn run(
        &mut self,
        data: &[Sample],
        sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        if data.is_empty() {
            return Err(invalid_arg("training data is empty"));
        }
        let mut metrics = Vec::with_capacity(self.cfg.epochs);
        for epoch in 0..self.cfg.epochs {
            self.epoch = epoch;
            let mut order: Vec<&Sample> = data.iter().collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
                self.cfg.seed,
                epoch as u64,
                u64::MAX,
            )));
            let mut epoch_records = Vec::with_capacity(data.len());
            for batch in order.chunks(self.cfg.batch_size) {
                for r in self.train_step(batch)? {
                    sink(&r)?;
                    epoch_records.push(r);
                }
            }
            metrics.push(EpochMetrics::from_trace(epoch, &epoch_records)?);
        }
        Ok(metrics)
    }
}

/// Result of [`run_training`].
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochMetrics>,
}

pub fn run_training(
    cfg: &TrainConfig,
    data: &[Sample],
    sink: &mut dyn FnMut(&TraceRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg.clone(), Vocab::standard())?;
    let epochs = trainer.run(data, sink)?;
    let patches = data.first().map_or(0, |s| s.scene.num_patches());
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(patches),
        epochs,
    })
}

/// Share of records in each weight bucket, over records that have a weight.
pub fn trace_gamma_distribution(records: &[TraceRecord]) -> Option<(f64, f64, f64)> {
    let g: Vec<GammaWeight> = records.iter().filter_map(|r| r.gamma).collect();
    gamma_distribution(&g).ok()
}
