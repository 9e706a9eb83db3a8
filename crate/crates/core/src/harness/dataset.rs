//! Seeded synthetic VQA data with contrastive (hallucinated) twins.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{Cell, Entity, Event, Relation, SceneGrid};
use crate::error::{Error, Result};
use crate::vocab::{self, TokenClass, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallucType {
    Object,
    Attribute,
    Relation,
    Event,
    None,
}

impl HallucType {
    pub const PROBED: [HallucType; 4] = [
        HallucType::Object,
        HallucType::Attribute,
        HallucType::Relation,
        HallucType::Event,
    ];

    /// Token class of the answer slot this type probes.
    pub fn slot_class(self) -> Option<TokenClass> {
        match self {
            HallucType::Object => Some(TokenClass::Object),
            HallucType::Attribute => Some(TokenClass::Attribute),
            HallucType::Relation => Some(TokenClass::Relation),
            HallucType::Event => Some(TokenClass::Event),
            HallucType::None => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HallucType::Object => "object",
            HallucType::Attribute => "attribute",
            HallucType::Relation => "relation",
            HallucType::Event => "event",
            HallucType::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub scene: SceneGrid,
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub halluc_type: HallucType,
    /// Queried entity: the object name, or the attribute for object questions.
    pub key: String,
    #[serde(default)]
    pub is_contrastive: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<usize>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub teacher_noise: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub answer_noise: bool,
}

impl Sample {
    /// Ground-truth value of the probed slot, read from the scene.
    pub fn truth(&self) -> Option<String> {
        truth_for(&self.scene, self.halluc_type, &self.key)
    }
}

pub fn truth_for(scene: &SceneGrid, kind: HallucType, key: &str) -> Option<String> {
    match kind {
        HallucType::Object => scene.object_with_attribute(key).map(|(_, e)| e.object.clone()),
        HallucType::Attribute => scene.find_object(key).map(|(_, e)| e.attribute.clone()),
        HallucType::Relation => scene.relation_of(key).map(|r| r.relation.clone()),
        HallucType::Event => scene.event_of(key).map(str::to_string),
        HallucType::None => None,
    }
}

/// Sizes of the word pools the generator draws from, plus scene layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub rows: usize,
    pub cols: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub objects: usize,
    pub attributes: usize,
    pub relations: usize,
    pub landmarks: usize,
    pub events: usize,
    /// Probability that a generated slot takes the object's typical value.
    pub prior_bias: f64,
    /// Probability that an empty cell gets a background landmark.
    pub clutter: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            rows: 3,
            cols: 3,
            min_objects: 2,
            max_objects: 3,
            objects: vocab::OBJECTS.len(),
            attributes: vocab::ATTRIBUTES.len(),
            relations: vocab::RELATIONS.len(),
            landmarks: vocab::LANDMARKS.len(),
            events: vocab::EVENTS.len(),
            prior_bias: 0.3,
            clutter: 0.2,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.rows == 0 || self.cols == 0 {
            return cfg("grid must be at least 1x1".into());
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return cfg(format!(
                "object count range {}..={} is empty",
                self.min_objects, self.max_objects
            ));
        }
        if self.max_objects > self.rows * self.cols {
            return cfg(format!(
                "{} objects do not fit in a {}x{} grid",
                self.max_objects, self.rows, self.cols
            ));
        }
        let pools = [
            ("objects", self.objects, vocab::OBJECTS.len()),
            ("attributes", self.attributes, vocab::ATTRIBUTES.len()),
            ("relations", self.relations, vocab::RELATIONS.len()),
            ("landmarks", self.landmarks, vocab::LANDMARKS.len()),
            ("events", self.events, vocab::EVENTS.len()),
        ];
        for (name, n, cap) in pools {
            if n > cap {
                return cfg(format!("{name}: {n} requested but only {cap} words exist"));
            }
        }
        // distinct objects and attributes per scene, plus one spare for twins
        if self.objects < self.max_objects.max(2) || self.attributes < self.max_objects.max(2) {
            return cfg(format!(
                "need at least {} objects and attributes for scenes of {} objects",
                self.max_objects.max(2),
                self.max_objects
            ));
        }
        if self.relations < 2 || self.events < 2 || self.landmarks < 1 {
            return cfg("need >= 2 relations, >= 2 events and >= 1 landmark".into());
        }
        if !(0.0..=1.0).contains(&self.prior_bias) || !(0.0..=1.0).contains(&self.clutter) {
            return cfg("prior_bias and clutter must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn pool(words: &[&str], n: usize) -> Vec<String> {
        words[..n].iter().map(|w| w.to_string()).collect()
    }

    fn object_pool(&self) -> Vec<String> {
        Self::pool(vocab::OBJECTS, self.objects)
    }
    fn attribute_pool(&self) -> Vec<String> {
        Self::pool(vocab::ATTRIBUTES, self.attributes)
    }
    fn relation_pool(&self) -> Vec<String> {
        Self::pool(vocab::RELATIONS, self.relations)
    }
    fn landmark_pool(&self) -> Vec<String> {
        Self::pool(vocab::LANDMARKS, self.landmarks)
    }
    fn event_pool(&self) -> Vec<String> {
        Self::pool(vocab::EVENTS, self.events)
    }
}

/// Co-occurrence priors: the value a slot "usually" takes for a given key.
/// Twins swap towards these, which is what makes them tempting.
struct Priors {
    objects: Vec<String>,
    attributes: Vec<String>,
    relations: Vec<String>,
    landmarks: Vec<String>,
    events: Vec<String>,
}

impl Priors {
    fn new(cfg: &WorldConfig) -> Self {
        Priors {
            objects: cfg.object_pool(),
            attributes: cfg.attribute_pool(),
            relations: cfg.relation_pool(),
            landmarks: cfg.landmark_pool(),
            events: cfg.event_pool(),
        }
    }

    fn index(pool: &[String], word: &str) -> usize {
        pool.iter().position(|w| w == word).unwrap_or(0)
    }

    fn attribute_for(&self, object: &str) -> &str {
        let i = Self::index(&self.objects, object);
        &self.attributes[(3 * i + 1) % self.attributes.len()]
    }

    fn object_for(&self, attribute: &str) -> &str {
        let i = Self::index(&self.attributes, attribute);
        &self.objects[(5 * i + 2) % self.objects.len()]
    }

    fn relation_for(&self, landmark: &str) -> &str {
        let i = Self::index(&self.landmarks, landmark);
        &self.relations[i % self.relations.len()]
    }

    fn event_for(&self, object: &str) -> &str {
        let i = Self::index(&self.objects, object);
        &self.events[(2 * i) % self.events.len()]
    }
}

fn pick_biased<R: Rng>(rng: &mut R, pool: &[String], typical: &str, bias: f64, taken: &[String]) -> String {
    if !taken.iter().any(|t| t == typical) && rng.gen::<f64>() < bias {
        return typical.to_string();
    }
    let free: Vec<&String> = pool.iter().filter(|w| !taken.contains(w)).collect();
    free.choose(rng)
        .map(|w| w.to_string())
        .unwrap_or_else(|| typical.to_string())
}

/// Prefer the typical value; otherwise a different random one.
fn perturb<R: Rng>(rng: &mut R, pool: &[String], typical: &str, truth: &str) -> String {
    if typical != truth {
        return typical.to_string();
    }
    let others: Vec<&String> = pool.iter().filter(|w| w.as_str() != truth).collect();
    others.choose(rng).expect("pool has >= 2 words").to_string()
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn question_for(kind: HallucType, key: &str) -> Vec<String> {
    match kind {
        HallucType::Object => words(&format!("what is the {key} object ?")),
        HallucType::Attribute => words(&format!("what color is the {key} ?")),
        HallucType::Relation => words(&format!("where is the {key} ?")),
        HallucType::Event => words(&format!("what is the {key} doing ?")),
        HallucType::None => words("what is there ?"),
    }
}

/// Reference answer template; `value` fills the probed slot.
pub fn answer_for(scene: &SceneGrid, kind: HallucType, key: &str, value: &str) -> Vec<String> {
    match kind {
        HallucType::Object => words(&format!("the {key} object is a {value}")),
        HallucType::Attribute | HallucType::Event => words(&format!("the {key} is {value}")),
        HallucType::Relation => {
            let landmark = scene.relation_of(key).map(|r| r.landmark.as_str()).unwrap_or("table");
            words(&format!("the {key} is {value} the {landmark}"))
        }
        HallucType::None => Vec::new(),
    }
}

fn gen_scene<R: Rng>(rng: &mut R, cfg: &WorldConfig, priors: &Priors, kind: HallucType) -> SceneGrid {
    let mut scene = SceneGrid::empty(cfg.rows, cfg.cols);
    let n_obj = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let mut cells: Vec<usize> = (0..scene.num_patches()).collect();
    cells.shuffle(rng);
    let objects = cfg.object_pool();
    let mut chosen: Vec<String> = objects.choose_multiple(rng, n_obj).cloned().collect();
    chosen.sort_by_key(|o| objects.iter().position(|w| w == o));
    chosen.shuffle(rng);
    let attributes = cfg.attribute_pool();
    let landmarks = cfg.landmark_pool();
    let relations = cfg.relation_pool();
    let mut taken_attrs: Vec<String> = Vec::new();
    for (slot, object) in chosen.iter().enumerate() {
        let cell = cells[slot];
        let attribute = pick_biased(
            rng,
            &attributes,
            priors.attribute_for(object),
            cfg.prior_bias,
            &taken_attrs,
        );
        taken_attrs.push(attribute.clone());
        let landmark = landmarks.choose(rng).expect("landmarks").clone();
        let relation = pick_biased(rng, &relations, priors.relation_for(&landmark), cfg.prior_bias, &[]);
        scene.cells[cell] = Cell {
            entity: Some(Entity {
                object: object.clone(),
                attribute,
            }),
            background: Some(landmark.clone()),
        };
        scene.relations.push(Relation {
            subject: object.clone(),
            relation,
            landmark,
        });
    }
    for &cell in &cells[n_obj..] {
        if rng.gen::<f64>() < cfg.clutter {
            scene.cells[cell].background = landmarks.choose(rng).cloned();
        }
    }
    if kind == HallucType::Event || rng.gen::<f64>() < 0.5 {
        let actor = chosen.choose(rng).expect("objects").clone();
        let action = pick_biased(rng, &cfg.event_pool(), priors.event_for(&actor), cfg.prior_bias, &[]);
        scene.event = Some(Event { actor, action });
    }
    scene
}

/// Generates `n` originals with balanced question types; a `contrastive_frac`
/// share of them is followed by a twin whose answer has one slot swapped.
pub fn synth_dataset(n: usize, cfg: &WorldConfig, contrastive_frac: f64, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&contrastive_frac) {
        return Err(Error::Config(format!(
            "contrastive fraction {contrastive_frac} is outside [0, 1]"
        )));
    }
    cfg.validate()?;
    let priors = Priors::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_twins = (contrastive_frac * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut twinned = vec![false; n];
    for &i in &order[..n_twins] {
        twinned[i] = true;
    }

    let mut out = Vec::with_capacity(n + n_twins);
    for (i, &has_twin) in twinned.iter().enumerate() {
        let kind = HallucType::PROBED[i % 4];
        let scene = gen_scene(&mut rng, cfg, &priors, kind);
        let (key, truth) = match kind {
            HallucType::Object => {
                let (_, e) = scene.entities().collect::<Vec<_>>()[rng.gen_range(0..scene.entities().count())];
                (e.attribute.clone(), e.object.clone())
            }
            HallucType::Event => {
                let ev = scene.event.clone().expect("event scenes carry an event");
                (ev.actor, ev.action)
            }
            _ => {
                let ents: Vec<_> = scene.entities().map(|(_, e)| e.clone()).collect();
                let e = ents.choose(&mut rng).expect("objects").clone();
                let truth = truth_for(&scene, kind, &e.object).expect("slot exists");
                (e.object, truth)
            }
        };
        let question = question_for(kind, &key);
        let answer = answer_for(&scene, kind, &key, &truth);
        let id = out.len();
        out.push(Sample {
            id,
            scene: scene.clone(),
            question: question.clone(),
            answer,
            halluc_type: kind,
            key: key.clone(),
            is_contrastive: false,
            source_id: None,
            teacher_noise: false,
            answer_noise: false,
        });
        if has_twin {
            let wrong = match kind {
                HallucType::Object => perturb(&mut rng, &priors.objects, priors.object_for(&key), &truth),
                HallucType::Attribute => perturb(&mut rng, &priors.attributes, priors.attribute_for(&key), &truth),
                HallucType::Relation => {
                    let landmark = &scene.relation_of(&key).expect("relation").landmark;
                    perturb(&mut rng, &priors.relations, priors.relation_for(landmark), &truth)
                }
                HallucType::Event => perturb(&mut rng, &priors.events, priors.event_for(&key), &truth),
                HallucType::None => unreachable!("originals are always probed"),
            };
            out.push(Sample {
                id: id + 1,
                scene,
                question,
                answer: answer_for(&out[id].scene, kind, &key, &wrong),
                halluc_type: kind,
                key,
                is_contrastive: true,
                source_id: Some(id),
                teacher_noise: false,
                answer_noise: false,
            });
        }
    }
    Ok(out)
}

/// If `a` and `b` differ in exactly one token position, returns the class of
/// the token that changed in `b`.
pub fn single_slot_difference(a: &[String], b: &[String], vocab: &Vocab) -> Option<TokenClass> {
    if a.len() != b.len() {
        return None;
    }
    let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    match diffs.as_slice() {
        [i] => {
            let ca = vocab.class_of(&a[*i])?;
            let cb = vocab.class_of(&b[*i])?;
            (ca == cb).then_some(cb)
        }
        _ => None,
    }
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).map_err(|e| Error::json("serializing sample", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample =
            serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        out.push(sample);
    }
    Ok(out)
}
