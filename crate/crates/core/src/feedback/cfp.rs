//! Template-driven feedback plugins. Neither holds trainable state.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::claims::answer_claims;
use crate::harness::scene::Fact;
use crate::vocab::{TokenClass, Vocab};

pub const DEFAULT_CANDIDATES: usize = 5;

/// Reverse-question candidates for one answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReverseQuestionSet {
    pub candidates: Vec<Vec<String>>,
}

fn words(s: String) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn push_unique(out: &mut Vec<Vec<String>>, cand: Vec<String>) {
    if !out.contains(&cand) {
        out.push(cand);
    }
}

/// Reconstructs the questions an answer could be answering.
///
/// Each recognized claim proposes the questions whose template it fills.
/// An answer with content words but no task words is echoed back as its own
/// single candidate, which then scores 0 against any real question.
pub fn cfp_lang_generate<S: AsRef<str>>(
    vocab: &Vocab,
    answer: &[S],
    k: usize,
    seed: u64,
) -> Result<ReverseQuestionSet> {
    if k == 0 {
        return Err(Error::InvalidArgument("candidate count must be >= 1".into()));
    }
    let claims = answer_claims(vocab, answer);
    let mut cands = Vec::new();
    for c in &claims {
        match c {
            Fact::Attribute { object, attribute } => {
                push_unique(&mut cands, words(format!("what color is the {object} ?")));
                push_unique(&mut cands, words(format!("what is the {attribute} object ?")));
            }
            Fact::Relation {
                subject,
                relation,
                landmark,
            } => {
                push_unique(&mut cands, words(format!("where is the {subject} ?")));
                push_unique(&mut cands, words(format!("what is {relation} the {landmark} ?")));
            }
            Fact::Event { actor, action } => {
                push_unique(&mut cands, words(format!("what is the {actor} doing ?")));
                push_unique(&mut cands, words(format!("what is {action} ?")));
            }
            Fact::Exists(_) => {}
        }
    }
    if cands.is_empty() {
        for c in &claims {
            if let Fact::Exists(name) = c {
                push_unique(&mut cands, words(format!("is there a {name} ?")));
            }
        }
    }
    // task words that attach to nothing still suggest their template
    for t in answer {
        let t = t.as_ref();
        match vocab.class_of(t) {
            Some(TokenClass::Attribute) if claims.is_empty() => {
                push_unique(&mut cands, words(format!("what is the {t} object ?")));
            }
            Some(TokenClass::Event) if claims.is_empty() => {
                push_unique(&mut cands, words(format!("what is {t} ?")));
            }
            _ => {}
        }
    }
    if cands.is_empty() {
        let content: Vec<String> = answer
            .iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| vocab.is_content(t))
            .collect();
        if content.is_empty() {
            return Err(Error::EmptyCandidates("answer has no content words".into()));
        }
        cands.push(content);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cands.shuffle(&mut rng);
    cands.truncate(k);
    Ok(ReverseQuestionSet { candidates: cands })
}

/// Renders the facts an answer asserts as a declarative caption.
pub fn cfp_vis_describe<S: AsRef<str>>(vocab: &Vocab, answer: &[S]) -> Result<Vec<String>> {
    let claims = answer_claims(vocab, answer);
    let mut out: Vec<String> = Vec::new();
    let mut put = |s: String| out.extend(words(s));
    let related: Vec<&str> = claims
        .iter()
        .filter_map(|c| match c {
            Fact::Relation { landmark, .. } => Some(landmark.as_str()),
            _ => None,
        })
        .collect();
    for c in &claims {
        if let Fact::Exists(name) = c {
            if vocab.class_of(name) == Some(TokenClass::Landmark) {
                if !related.contains(&name.as_str()) {
                    put(format!("there is a {name} ."));
                }
                continue;
            }
            let attr = claims.iter().find_map(|f| match f {
                Fact::Attribute { object, attribute } if object == name => Some(attribute.as_str()),
                _ => None,
            });
            match attr {
                Some(a) => put(format!("there is a {a} {name} .")),
                None => put(format!("there is a {name} .")),
            }
            for f in &claims {
                match f {
                    Fact::Relation {
                        subject,
                        relation,
                        landmark,
                    } if subject == name => put(format!("the {name} is {relation} the {landmark} .")),
                    Fact::Event { actor, action } if actor == name => put(format!("the {name} is {action} .")),
                    _ => {}
                }
            }
        }
    }
    if out.is_empty() {
        out = answer
            .iter()
            .map(|t| t.as_ref().to_string())
            .filter(|t| vocab.is_content(t))
            .collect();
    }
    if out.is_empty() {
        return Err(Error::EmptyDescription("answer asserts nothing describable".into()));
    }
    Ok(out)
}
