//! Greedy evaluation of a responder on held-out probes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::claims::parse_statements;
use super::dataset::{HallucType, Sample};
use super::metrics::{chair_metrics, f1_metric, faith, faith_s, mean_std, Ratio};
use super::scene::Fact;
use crate::error::{Error, Result};
use crate::feedback::{cfp_lang_generate, cfp_vis_describe, select_best, TextScorer, VisualScorer};
use crate::gating::{acw_gamma, gamma_distribution, screen_answer};
use crate::model::{forward, generate_greedy, AggregatorParams, Checkpoint, Encoded, ModelParams};
use crate::numerics::entropy_unchecked;
use crate::pseudo::{build_pseudo, model_map, token_mask, PseudoConfig};
use crate::vocab::Vocab;

/// A response and, when the responder has one, its attention per emitted
/// token (the emitted tokens include a final end marker if one was produced).
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub answer: Vec<String>,
    pub emitted: Vec<String>,
    pub attention: Option<Vec<Vec<f64>>>,
}

impl Response {
    pub fn text_only(answer: Vec<String>) -> Self {
        Response {
            emitted: answer.clone(),
            answer,
            attention: None,
        }
    }
}

pub trait Responder {
    fn respond(&mut self, sample: &Sample) -> Result<Response>;
}

impl<F: FnMut(&Sample) -> Vec<String>> Responder for F {
    fn respond(&mut self, sample: &Sample) -> Result<Response> {
        Ok(Response::text_only(self(sample)))
    }
}

pub struct ModelResponder<'a> {
    pub model: &'a ModelParams,
    pub vocab: &'a Vocab,
    pub max_len: usize,
}

impl Responder for ModelResponder<'_> {
    fn respond(&mut self, sample: &Sample) -> Result<Response> {
        let enc = Encoded::new(self.vocab, &sample.scene, &sample.question)?;
        let ids = generate_greedy(self.model, &enc, self.vocab.eos(), self.max_len)?;
        let pass = forward(self.model, &enc, &ids, false)?;
        Ok(Response {
            answer: crate::model::answer_tokens(self.vocab, &ids),
            emitted: self.vocab.decode(&ids),
            attention: Some(pass.attn),
        })
    }
}

/// Frozen pieces used to compute the feedback signals at evaluation time.
pub struct EvalContext<'a> {
    pub vocab: &'a Vocab,
    pub aggregator: &'a AggregatorParams,
    pub text: &'a dyn TextScorer,
    pub visual: &'a dyn VisualScorer,
    pub candidates: usize,
    pub pseudo: PseudoConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub probes: usize,
    pub halluc_rate: Ratio,
    pub halluc_object: Ratio,
    pub halluc_attribute: Ratio,
    pub halluc_relation: Ratio,
    pub halluc_event: Ratio,
    pub slot_accuracy: Ratio,
    pub chair_i: Ratio,
    pub chair_s: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: f64,
    pub faith: Ratio,
    pub faith_s: Ratio,
    pub accepted: Ratio,
    pub gamma_high: f64,
    pub gamma_medium: f64,
    pub gamma_low: f64,
    pub mean_language_score: f64,
    pub mean_visual_similarity: f64,
    pub entropy_token_mean: f64,
    pub entropy_token_std: f64,
    pub entropy_sample_mean: f64,
    pub entropy_sample_std: f64,
}

pub const CSV_HEADER: &str = "probes,halluc_rate,halluc_object,halluc_attribute,halluc_relation,halluc_event,\
slot_accuracy,chair_i,chair_s,precision,recall,f1,faith,faith_s,accepted,gamma_high,gamma_medium,gamma_low,\
mean_language_score,mean_visual_similarity,entropy_token_mean,entropy_token_std,entropy_sample_mean,\
entropy_sample_std,undefined";

impl MetricsReport {
    pub fn halluc_by_type(&self) -> [(HallucType, Ratio); 4] {
        [
            (HallucType::Object, self.halluc_object),
            (HallucType::Attribute, self.halluc_attribute),
            (HallucType::Relation, self.halluc_relation),
            (HallucType::Event, self.halluc_event),
        ]
    }

    fn ratios(&self) -> [(&'static str, Ratio); 14] {
        [
            ("halluc_rate", self.halluc_rate),
            ("halluc_object", self.halluc_object),
            ("halluc_attribute", self.halluc_attribute),
            ("halluc_relation", self.halluc_relation),
            ("halluc_event", self.halluc_event),
            ("slot_accuracy", self.slot_accuracy),
            ("chair_i", self.chair_i),
            ("chair_s", self.chair_s),
            ("precision", self.precision),
            ("recall", self.recall),
            ("faith", self.faith),
            ("faith_s", self.faith_s),
            ("accepted", self.accepted),
            (
                "f1",
                Ratio {
                    value: self.f1,
                    undefined: false,
                },
            ),
        ]
    }

    /// Names of metrics whose denominator was zero, `|`-separated.
    pub fn undefined(&self) -> String {
        self.ratios()
            .iter()
            .filter(|(_, r)| r.undefined)
            .map(|(n, _)| *n)
            .collect::<Vec<_>>()
            .join("|")
    }

    pub fn csv_row(&self) -> String {
        let r = self.ratios();
        let vals = [
            r[0].1.value,
            r[1].1.value,
            r[2].1.value,
            r[3].1.value,
            r[4].1.value,
            r[5].1.value,
            r[6].1.value,
            r[7].1.value,
            r[8].1.value,
            r[9].1.value,
            self.f1,
            r[10].1.value,
            r[11].1.value,
            r[12].1.value,
            self.gamma_high,
            self.gamma_medium,
            self.gamma_low,
            self.mean_language_score,
            self.mean_visual_similarity,
            self.entropy_token_mean,
            self.entropy_token_std,
            self.entropy_sample_mean,
            self.entropy_sample_std,
        ];
        let mut row = self.probes.to_string();
        for v in vals {
            row.push(',');
            row.push_str(&format!("{v:.10}"));
        }
        row.push(',');
        row.push_str(&self.undefined());
        row
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}\n", self.csv_row())
    }
}

/// Originals with a probed slot.
pub fn probes(data: &[Sample]) -> Vec<&Sample> {
    data.iter()
        .filter(|s| !s.is_contrastive && !s.answer_noise && s.halluc_type != HallucType::None)
        .collect()
}

/// First token of the probed slot's class, skipping the question key.
pub fn slot_value<'a>(vocab: &Vocab, answer: &'a [String], kind: HallucType, key: &str) -> Option<&'a str> {
    let class = kind.slot_class()?;
    answer
        .iter()
        .find(|t| t.as_str() != key && vocab.class_of(t) == Some(class))
        .map(String::as_str)
}

fn mentions(vocab: &Vocab, tokens: &[String]) -> BTreeSet<String> {
    tokens
        .iter()
        .filter(|t| vocab.class_of(t).is_some_and(|c| c.is_entity()))
        .cloned()
        .collect()
}

fn content_overlap(vocab: &Vocab, a: &[String], b: &[String]) -> (usize, usize, usize) {
    let ca: Vec<&String> = a.iter().filter(|t| vocab.is_content(t)).collect();
    let mut cb: Vec<&String> = b.iter().filter(|t| vocab.is_content(t)).collect();
    let (na, nb) = (ca.len(), cb.len());
    let mut overlap = 0;
    for t in ca {
        if let Some(i) = cb.iter().position(|u| *u == t) {
            cb.swap_remove(i);
            overlap += 1;
        }
    }
    (overlap, na, nb)
}

fn claim_mentions(claim: &Fact, token: &str) -> bool {
    match claim {
        Fact::Exists(o) => o == token,
        Fact::Attribute { object, attribute } => object == token || attribute == token,
        Fact::Relation {
            subject,
            relation,
            landmark,
        } => subject == token || relation == token || landmark == token,
        Fact::Event { actor, action } => actor == token || action == token,
    }
}

pub fn evaluate(responder: &mut dyn Responder, probes: &[&Sample], ctx: &EvalContext<'_>) -> Result<MetricsReport> {
    let vocab = ctx.vocab;
    let mut halluc = [0usize; 4];
    let mut typed = [0usize; 4];
    let mut correct = 0;
    let (mut ment, mut truth) = (Vec::new(), Vec::new());
    let (mut overlap, mut resp_n, mut ref_n) = (0, 0, 0);
    let (mut aligned, mut statements, mut grounded, mut content) = (0, 0, 0, 0);
    let mut gammas = Vec::new();
    let (mut lang, mut vis) = (Vec::new(), Vec::new());
    let (mut tok_ent, mut sample_ent) = (Vec::new(), Vec::new());

    for (i, s) in probes.iter().enumerate() {
        let resp = responder.respond(s)?;
        let ans = &resp.answer;
        let slot = HallucType::PROBED
            .iter()
            .position(|k| *k == s.halluc_type)
            .expect("probes carry a probed type");
        typed[slot] += 1;
        let truth_val = s.truth();
        match (slot_value(vocab, ans, s.halluc_type, &s.key), truth_val.as_deref()) {
            (Some(v), Some(t)) if v == t => correct += 1,
            (Some(_), _) => halluc[slot] += 1,
            _ => {}
        }
        ment.push(mentions(vocab, ans));
        truth.push(s.scene.entity_names().into_iter().map(str::to_string).collect());
        let (o, a, b) = content_overlap(vocab, ans, &s.answer);
        overlap += o;
        resp_n += a;
        ref_n += b;
        for st in parse_statements(vocab, ans) {
            statements += 1;
            aligned += usize::from(st.is_aligned(&s.scene));
            for t in st.tokens.iter().filter(|t| vocab.is_content(t)) {
                content += 1;
                let ok = st.claims.iter().any(|c| claim_mentions(c, t) && s.scene.holds(c));
                grounded += usize::from(ok);
            }
        }

        if screen_answer(vocab, ans).accepted() {
            let signals = cfp_lang_generate(vocab, ans, ctx.candidates, ctx.seed ^ i as u64)
                .and_then(|c| select_best(&s.question, &c, ctx.text, ctx.aggregator))
                .and_then(|sel| Ok((sel.score, cfp_vis_describe(vocab, ans)?)));
            if let Ok((score, caption)) = signals {
                gammas.push(acw_gamma(score)?);
                lang.push(score);
                vis.push(ctx.visual.similarity(&s.scene, &caption)?);
            }
        }
        if let Some(attn) = &resp.attention {
            let mask = token_mask(vocab, &resp.emitted);
            for (t, row) in attn.iter().enumerate() {
                if !mask[t] {
                    tok_ent.push(entropy_unchecked(row));
                }
            }
            let patches = s.scene.num_patches();
            let stack = crate::model::AttentionStack::from_flat(1, 1, patches, attn.concat())?;
            if let Ok(map) = build_pseudo(&stack, &mask, &ctx.pseudo, s.scene.rows, s.scene.cols) {
                sample_ent.push(entropy_unchecked(&model_map(attn, &map.confident)?));
            }
        }
    }

    let chair = chair_metrics(&ment, &truth);
    let precision = Ratio::of(overlap, resp_n);
    let recall = Ratio::of(overlap, ref_n);
    let (gh, gm, gl) = if gammas.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        gamma_distribution(&gammas)?
    };
    let (et_m, et_s) = mean_std(&tok_ent);
    let (es_m, es_s) = mean_std(&sample_ent);
    Ok(MetricsReport {
        probes: probes.len(),
        halluc_rate: Ratio::of(halluc.iter().sum(), probes.len()),
        halluc_object: Ratio::of(halluc[0], typed[0]),
        halluc_attribute: Ratio::of(halluc[1], typed[1]),
        halluc_relation: Ratio::of(halluc[2], typed[2]),
        halluc_event: Ratio::of(halluc[3], typed[3]),
        slot_accuracy: Ratio::of(correct, probes.len()),
        chair_i: chair.chair_i,
        chair_s: chair.chair_s,
        precision,
        recall,
        f1: f1_metric(precision.value, recall.value),
        faith: faith(aligned, statements),
        faith_s: faith_s(grounded, content),
        accepted: Ratio::of(gammas.len(), probes.len()),
        gamma_high: gh,
        gamma_medium: gm,
        gamma_low: gl,
        mean_language_score: mean_std(&lang).0,
        mean_visual_similarity: mean_std(&vis).0,
        entropy_token_mean: et_m,
        entropy_token_std: et_s,
        entropy_sample_mean: es_m,
        entropy_sample_std: es_s,
    })
}

/// Fails with a configuration error if the data uses words the checkpoint
/// does not know.
pub fn check_vocab(vocab: &Vocab, data: &[Sample]) -> Result<()> {
    for s in data {
        let words = s
            .question
            .iter()
            .map(String::as_str)
            .chain(s.answer.iter().map(String::as_str))
            .chain(s.scene.tokens());
        for w in words {
            if !vocab.contains(w) {
                return Err(Error::Config(format!(
                    "sample {} uses {w:?}, which the checkpoint vocabulary lacks",
                    s.id
                )));
            }
        }
    }
    Ok(())
}

/// Loads nothing itself: evaluates an in-memory checkpoint on `data`.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &[Sample],
    text: &dyn TextScorer,
    visual: &dyn VisualScorer,
    pseudo: PseudoConfig,
    seed: u64,
) -> Result<MetricsReport> {
    let vocab = ck.vocab()?;
    check_vocab(&vocab, data)?;
    let ctx = EvalContext {
        vocab: &vocab,
        aggregator: &ck.aggregator,
        text,
        visual,
        candidates: crate::feedback::DEFAULT_CANDIDATES,
        pseudo,
        seed,
    };
    let mut responder = ModelResponder {
        model: &ck.model,
        vocab: &vocab,
        max_len: ck.header.max_len,
    };
    evaluate(&mut responder, &probes(data), &ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::{FactBagScorer, TokenF1Scorer};
    use crate::harness::dataset::{synth_dataset, WorldConfig};

    fn run(data: &[Sample], mut f: impl FnMut(&Sample) -> Vec<String>) -> MetricsReport {
        let vocab = Vocab::standard();
        let agg = AggregatorParams::zeros(2).unwrap();
        let vis = FactBagScorer::new(vocab.clone());
        let ctx = EvalContext {
            vocab: &vocab,
            aggregator: &agg,
            text: &TokenF1Scorer,
            visual: &vis,
            candidates: 5,
            pseudo: PseudoConfig::default(),
            seed: 0,
        };
        evaluate(&mut f, &probes(data), &ctx).unwrap()
    }

    #[test]
    fn reference_oracle_is_clean() {
        let data = synth_dataset(40, &WorldConfig::default(), 0.0, 8).unwrap();
        let r = run(&data, |s| s.answer.clone());
        assert_eq!(r.halluc_rate.value, 0.0);
        assert_eq!(r.faith.value, 1.0);
        assert_eq!(r.faith_s.value, 1.0);
        assert_eq!(r.chair_i.value, 0.0);
        assert_eq!(r.f1, 1.0);
        assert_eq!(r.slot_accuracy.value, 1.0);
    }

    #[test]
    fn twin_oracle_hallucinates_every_probe() {
        let data = synth_dataset(40, &WorldConfig::default(), 1.0, 8).unwrap();
        let twin_of = |s: &Sample| {
            data.iter()
                .find(|t| t.source_id == Some(s.id))
                .map(|t| t.answer.clone())
                .unwrap()
        };
        let r = run(&data, twin_of);
        for (_, rate) in r.halluc_by_type() {
            assert_eq!(rate.value, 1.0);
        }
        assert_eq!(r.to_csv().lines().next().unwrap(), CSV_HEADER);
    }

    #[test]
    fn vocab_mismatch_is_config_error() {
        let mut data = synth_dataset(4, &WorldConfig::default(), 0.0, 8).unwrap();
        data[0].question.push("zebra".into());
        assert!(matches!(check_vocab(&Vocab::standard(), &data), Err(Error::Config(_))));
    }
}
