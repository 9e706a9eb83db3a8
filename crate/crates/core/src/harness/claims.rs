//! Reads the claims a free-form answer makes about a scene.
//!
//! Answers are split into statements on `.`, `,`, `!`, `?` and `and`. Within
//! a statement, attributes attach to the nearest object, relations and
//! events attach to the closest preceding object, and a relation's landmark
//! is the first landmark after it.

use crate::harness::scene::{Fact, SceneGrid};
use crate::vocab::{TokenClass, Vocab};

/// One statement of an answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    pub tokens: Vec<String>,
    pub claims: Vec<Fact>,
}

impl Statement {
    /// A statement with claims, all of which hold in the scene.
    pub fn is_aligned(&self, scene: &SceneGrid) -> bool {
        !self.claims.is_empty() && self.claims.iter().all(|c| scene.holds(c))
    }
}

fn is_separator(tok: &str) -> bool {
    matches!(tok, "." | "," | "!" | "?" | "and")
}

pub fn split_statements<S: AsRef<str>>(tokens: &[S]) -> Vec<Vec<String>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    for t in tokens {
        let t = t.as_ref();
        if is_separator(t) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(t.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn nearest(positions: &[usize], at: usize) -> Option<usize> {
    positions.iter().copied().min_by_key(|&p| (p.abs_diff(at), p < at))
}

fn preceding(positions: &[usize], at: usize) -> Option<usize> {
    positions
        .iter()
        .copied()
        .filter(|&p| p < at)
        .max()
        .or_else(|| positions.first().copied())
}

pub fn statement_claims(vocab: &Vocab, tokens: &[String]) -> Vec<Fact> {
    let of = |class: TokenClass| -> Vec<usize> {
        (0..tokens.len())
            .filter(|&i| vocab.class_of(&tokens[i]) == Some(class))
            .collect()
    };
    let objects = of(TokenClass::Object);
    let landmarks = of(TokenClass::Landmark);
    let mut claims = Vec::new();
    for &i in objects.iter().chain(&landmarks) {
        claims.push(Fact::Exists(tokens[i].clone()));
    }
    for i in of(TokenClass::Attribute) {
        if let Some(o) = nearest(&objects, i) {
            claims.push(Fact::Attribute {
                object: tokens[o].clone(),
                attribute: tokens[i].clone(),
            });
        }
    }
    for i in of(TokenClass::Relation) {
        let subject = preceding(&objects, i);
        let landmark = landmarks.iter().copied().find(|&l| l > i);
        if let (Some(s), Some(l)) = (subject, landmark) {
            claims.push(Fact::Relation {
                subject: tokens[s].clone(),
                relation: tokens[i].clone(),
                landmark: tokens[l].clone(),
            });
        }
    }
    for i in of(TokenClass::Event) {
        if let Some(a) = preceding(&objects, i) {
            claims.push(Fact::Event {
                actor: tokens[a].clone(),
                action: tokens[i].clone(),
            });
        }
    }
    claims.sort();
    claims.dedup();
    claims
}

pub fn parse_statements<S: AsRef<str>>(vocab: &Vocab, tokens: &[S]) -> Vec<Statement> {
    split_statements(tokens)
        .into_iter()
        .map(|toks| {
            let claims = statement_claims(vocab, &toks);
            Statement { tokens: toks, claims }
        })
        .collect()
}

/// Every claim of an answer, deduplicated.
pub fn answer_claims<S: AsRef<str>>(vocab: &Vocab, tokens: &[S]) -> Vec<Fact> {
    let mut all: Vec<Fact> = parse_statements(vocab, tokens)
        .into_iter()
        .flat_map(|s| s.claims)
        .collect();
    all.sort();
    all.dedup();
    all
}
