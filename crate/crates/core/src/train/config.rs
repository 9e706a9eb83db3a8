use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::DEFAULT_CANDIDATES;
use crate::model::DEFAULT_MAX_LEN;
use crate::pseudo::PseudoConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Loss-weighted log-probability gradient of the sampled answer.
    ScoreFunction,
    /// Consistency losses only set the weight and the logs.
    WeightOnly,
}

/// Training hyperparameters. Every field has a default, so a config file
/// only lists what it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub aggregator_learning_rate: f64,
    /// Global L2 norm cap on each model update's gradient; 0 disables.
    pub grad_clip: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub estimator: Estimator,
    /// When false only the supervised and regularization terms train the
    /// model; feedback signals are still computed and logged.
    pub feedback: bool,
    pub dim: usize,
    /// Half-width of the uniform model initialization.
    pub init_scale: f64,
    pub aggregator_hidden: usize,
    pub max_len: usize,
    pub candidates: usize,
    pub baseline_decay: f64,
    pub pseudo: PseudoConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 1.0,
            beta: 0.7,
            lambda: 1e-5,
            learning_rate: 0.05,
            aggregator_learning_rate: 0.05,
            grad_clip: 0.0,
            epochs: 20,
            batch_size: 16,
            seed: 7,
            estimator: Estimator::ScoreFunction,
            feedback: true,
            dim: 24,
            init_scale: 0.1,
            aggregator_hidden: 4,
            max_len: DEFAULT_MAX_LEN,
            candidates: DEFAULT_CANDIDATES,
            baseline_decay: 0.9,
            pseudo: PseudoConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn sft_only(mut self) -> Self {
        self.feedback = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            return bad(format!("grad_clip must be finite and >= 0, got {}", self.grad_clip));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad(format!("init_scale must be finite and >= 0, got {}", self.init_scale));
        }
        if !(self.aggregator_learning_rate >= 0.0 && self.aggregator_learning_rate.is_finite()) {
            return bad("aggregator_learning_rate must be >= 0".into());
        }
        if self.batch_size == 0
            || self.dim == 0
            || self.aggregator_hidden == 0
            || self.max_len == 0
            || self.candidates == 0
        {
            return bad("batch_size, dim, aggregator_hidden, max_len and candidates must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return bad(format!(
                "baseline_decay must lie in [0, 1), got {}",
                self.baseline_decay
            ));
        }
        self.pseudo.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Applies a `key=value` override, where the value is TOML syntax
    /// (`pseudo.tau=1.5`, `estimator="weight_only"`).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("own serialization parses");
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", value.trim()))
            .map(|mut t| t.remove("v").expect("key v"))
            .or_else(|_| Ok::<_, Error>(toml::Value::String(value.trim().to_string())))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields one part");
        let mut table = &mut doc;
        for p in parents {
            table = table
                .get_mut(*p)
                .and_then(toml::Value::as_table_mut)
                .ok_or_else(|| Error::Config(format!("unknown config section {p:?}")))?;
        }
        if !table.contains_key(*last) {
            return Err(Error::Config(format!("unknown config key {key:?}")));
        }
        // integers given for float fields are widened
        let parsed = match (&table[*last], parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, v) => v,
        };
        table.insert(last.to_string(), parsed);
        *self = Self::from_toml(&toml::to_string(&doc).expect("table serializes"))?;
        Ok(())
    }
}
