//! Closed vocabulary of the synthetic grid world.
//!
//! Every token belongs to exactly one [`TokenClass`]. Scene semantics live in
//! the object/landmark/attribute/relation/event classes; a separate pool of
//! ordinary but unrelated words is reserved for answer-noise injection and is
//! disjoint from everything a scene or question can contain.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

pub const SPECIALS: &[&str] = &[PAD, BOS, EOS];
pub const PUNCTUATION: &[&str] = &[".", "?", "!", ","];
pub const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "an", "is", "are", "what", "color", "where", "doing", "object", "there", "and", "of", "in", "it", "i",
    "i'm", "not", "do", "to", "which", "this", "that", "with",
];
pub const OBJECTS: &[&str] = &["dog", "cat", "bus", "car", "frisbee", "ball", "bird", "horse"];
pub const LANDMARKS: &[&str] = &["table", "sofa", "grass", "box"];
pub const ATTRIBUTES: &[&str] = &["red", "orange", "yellow", "green", "blue", "white", "black", "brown"];
pub const RELATIONS: &[&str] = &["on", "under", "near", "behind"];
pub const EVENTS: &[&str] = &["running", "sleeping", "eating", "jumping", "playing"];
pub const NOISE_WORDS: &[&str] = &[
    "apples", "grow", "summer", "music", "quickly", "paper", "mountain", "cloud", "river", "window", "seven", "dance",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    Special,
    Punctuation,
    Function,
    Object,
    Landmark,
    Attribute,
    Relation,
    Event,
    Noise,
}

impl TokenClass {
    /// Words that carry scene semantics.
    pub fn is_task_content(self) -> bool {
        matches!(
            self,
            TokenClass::Object
                | TokenClass::Landmark
                | TokenClass::Attribute
                | TokenClass::Relation
                | TokenClass::Event
        )
    }

    pub fn is_entity(self) -> bool {
        matches!(self, TokenClass::Object | TokenClass::Landmark)
    }
}

/// Bidirectional token table.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    classes: Vec<TokenClass>,
    index: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::standard()
    }
}

impl Vocab {
    /// The full lexicon of the synthetic world.
    pub fn standard() -> Self {
        let groups: [(&[&str], TokenClass); 9] = [
            (SPECIALS, TokenClass::Special),
            (PUNCTUATION, TokenClass::Punctuation),
            (FUNCTION_WORDS, TokenClass::Function),
            (OBJECTS, TokenClass::Object),
            (LANDMARKS, TokenClass::Landmark),
            (ATTRIBUTES, TokenClass::Attribute),
            (RELATIONS, TokenClass::Relation),
            (EVENTS, TokenClass::Event),
            (NOISE_WORDS, TokenClass::Noise),
        ];
        let pairs = groups
            .iter()
            .flat_map(|(words, class)| words.iter().map(move |w| (w.to_string(), *class)));
        Vocab::from_pairs(pairs)
    }

    /// Builds a vocabulary from token strings, classifying each against the
    /// standard lexicon. Unknown words are classified as noise.
    pub fn from_tokens(tokens: &[String]) -> Result<Self> {
        let standard = Vocab::standard();
        let mut seen = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if seen.insert(t.clone(), i).is_some() {
                return Err(invalid_input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let pairs = tokens.iter().map(|t| {
            let class = standard.class_of(t).unwrap_or(TokenClass::Noise);
            (t.clone(), class)
        });
        Ok(Vocab::from_pairs(pairs))
    }

    fn from_pairs(pairs: impl Iterator<Item = (String, TokenClass)>) -> Self {
        let mut tokens = Vec::new();
        let mut classes = Vec::new();
        let mut index = HashMap::new();
        for (tok, class) in pairs {
            index.insert(tok.clone(), tokens.len());
            tokens.push(tok);
            classes.push(class);
        }
        Vocab { tokens, classes, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn class(&self, id: usize) -> TokenClass {
        self.classes[id]
    }

    pub fn class_of(&self, token: &str) -> Option<TokenClass> {
        self.id(token).map(|i| self.classes[i])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn bos(&self) -> usize {
        self.id(BOS).expect("vocabulary has <bos>")
    }

    pub fn eos(&self) -> usize {
        self.id(EOS).expect("vocabulary has <eos>")
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.id(t)
                    .ok_or_else(|| invalid_input(format!("token {t:?} is not in the vocabulary")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    /// Ids by class, in vocabulary order.
    pub fn ids_of(&self, class: TokenClass) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.classes[i] == class).collect()
    }

    /// Content words for gating purposes: anything that is not a special,
    /// punctuation-only or function token. Unknown words count as content.
    pub fn is_content(&self, token: &str) -> bool {
        if is_punctuation_only(token) {
            return false;
        }
        match self.class_of(token) {
            Some(TokenClass::Special | TokenClass::Punctuation | TokenClass::Function) => false,
            _ => !SPECIALS.contains(&token),
        }
    }

    /// Tokens the pseudo-attention builder must skip.
    pub fn is_masked(&self, token: &str) -> bool {
        SPECIALS.contains(&token) || is_punctuation_only(token)
    }
}

/// A token made only of non-alphanumeric characters.
pub fn is_punctuation_only(token: &str) -> bool {
    !token.is_empty() && !token.chars().any(char::is_alphanumeric)
}

/// Lowercases, splits on whitespace and detaches leading/trailing punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        let chars: Vec<char> = lower.chars().collect();
        let start = chars.iter().position(|c| c.is_alphanumeric()).unwrap_or(chars.len());
        let end = chars.iter().rposition(|c| c.is_alphanumeric()).map_or(start, |e| e + 1);
        for c in &chars[..start] {
            out.push(c.to_string());
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        for c in &chars[end.max(start)..] {
            out.push(c.to_string());
        }
    }
    out
}
