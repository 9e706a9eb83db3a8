//! Frozen scorers behind which real embedding models can be plugged.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::claims::split_statements;
use crate::harness::scene::SceneGrid;
use crate::vocab::Vocab;

/// Similarity of a candidate sequence to a reference, in [0, 1].
pub trait TextScorer {
    fn score(&self, reference: &[String], candidate: &[String]) -> Result<f64>;
}

/// Similarity of a description to a scene, in [-1, 1].
pub trait VisualScorer {
    fn similarity(&self, scene: &SceneGrid, description: &[String]) -> Result<f64>;
}

fn counts<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_ref()).or_insert(0.0) += 1.0;
    }
    m
}

/// Multiset token-overlap F1.
pub fn token_f1<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (ca, cb) = (counts(a), counts(b));
    let overlap: f64 = ca.iter().map(|(k, n)| n.min(*cb.get(k).unwrap_or(&0.0))).sum();
    if overlap == 0.0 {
        return 0.0;
    }
    let p = overlap / b.len() as f64;
    let r = overlap / a.len() as f64;
    2.0 * p * r / (p + r)
}

fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).unwrap_or(&0.0)).sum();
    let na: f64 = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Bag-of-words cosine over raw token counts.
pub fn bag_cosine<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let own = |t: &[S]| -> BTreeMap<String, f64> { counts(t).into_iter().map(|(k, v)| (k.to_string(), v)).collect() };
    sparse_cosine(&own(a), &own(b))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TokenF1Scorer;

impl TextScorer for TokenF1Scorer {
    fn score(&self, reference: &[String], candidate: &[String]) -> Result<f64> {
        Ok(token_f1(reference, candidate))
    }
}

/// Cosine between content-word bags of a description and the scene's
/// canonical fact rendering. Bags hold content unigrams plus the bigrams of
/// consecutive content words inside one statement, so that "orange dog" and
/// "orange cat" are told apart even when both words occur in the scene.
#[derive(Debug, Clone, Default)]
pub struct FactBagScorer {
    vocab: Vocab,
}

impl FactBagScorer {
    pub fn new(vocab: Vocab) -> Self {
        FactBagScorer { vocab }
    }

    pub fn bag<S: AsRef<str>>(&self, tokens: &[S]) -> BTreeMap<String, f64> {
        let mut bag = BTreeMap::new();
        for stmt in split_statements(tokens) {
            let content: Vec<&String> = stmt.iter().filter(|t| self.vocab.is_content(t)).collect();
            for t in &content {
                *bag.entry((*t).clone()).or_insert(0.0) += 1.0;
            }
            for w in content.windows(2) {
                *bag.entry(format!("{} {}", w[0], w[1])).or_insert(0.0) += 1.0;
            }
        }
        bag
    }
}

impl VisualScorer for FactBagScorer {
    fn similarity(&self, scene: &SceneGrid, description: &[String]) -> Result<f64> {
        Ok(sparse_cosine(&self.bag(&scene.render_facts()), &self.bag(description)))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    reference: &'a [String],
    candidate: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

struct Pipe {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// Text scorer served by an external process speaking one JSON object per
/// line: `{"reference": [...], "candidate": [...]}` in, `{"score": x}` out.
pub struct SubprocessScorer {
    pipe: Mutex<Pipe>,
}

impl SubprocessScorer {
    pub fn spawn(program: &str, args: &[&str]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Scorer(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(SubprocessScorer {
            pipe: Mutex::new(Pipe { child, stdin, stdout }),
        })
    }
}

impl TextScorer for SubprocessScorer {
    fn score(&self, reference: &[String], candidate: &[String]) -> Result<f64> {
        let line = serde_json::to_string(&ScoreRequest { reference, candidate })
            .map_err(|e| Error::json("encoding scorer request", e))?;
        let mut pipe = self
            .pipe
            .lock()
            .map_err(|_| Error::Scorer("scorer lock poisoned".into()))?;
        writeln!(pipe.stdin, "{line}")
            .and_then(|_| pipe.stdin.flush())
            .map_err(|e| Error::Scorer(format!("writing to scorer: {e}")))?;
        let mut reply = String::new();
        let n = pipe
            .stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Scorer(format!("reading from scorer: {e}")))?;
        if n == 0 {
            return Err(Error::Scorer("scorer closed its output".into()));
        }
        let resp: ScoreResponse =
            serde_json::from_str(reply.trim()).map_err(|e| Error::json("decoding scorer reply", e))?;
        if !(0.0..=1.0).contains(&resp.score) {
            return Err(Error::Scorer(format!("scorer returned {} outside [0, 1]", resp.score)));
        }
        Ok(resp.score)
    }
}

impl Drop for SubprocessScorer {
    fn drop(&mut self) {
        if let Ok(pipe) = self.pipe.get_mut() {
            let _ = pipe.child.kill();
            let _ = pipe.child.wait();
        }
    }
}
