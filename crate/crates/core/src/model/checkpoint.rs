use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AggregatorParams, ModelParams};
use crate::error::{Error, Result};
use crate::vocab::Vocab;

pub const CHECKPOINT_FORMAT: &str = "reloop-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub patches: usize,
    pub max_len: usize,
}

/// JSON record of both parameter sets. Floats round-trip exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub vocab: Vec<String>,
    pub model: ModelParams,
    pub aggregator: AggregatorParams,
}

impl Checkpoint {
    pub fn new(
        vocab: &Vocab,
        model: ModelParams,
        aggregator: AggregatorParams,
        patches: usize,
        max_len: usize,
    ) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.to_string(),
                version: CHECKPOINT_VERSION,
                vocab_size: model.vocab_size(),
                dim: model.dim(),
                layers: 1,
                heads: 1,
                patches,
                max_len,
            },
            vocab: vocab.tokens().to_vec(),
            model,
            aggregator,
        }
    }

    pub fn vocab(&self) -> Result<Vocab> {
        Vocab::from_tokens(&self.vocab)
    }

    fn validate(self) -> Result<Self> {
        let h = &self.header;
        if h.format != CHECKPOINT_FORMAT || h.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                h.format, h.version
            )));
        }
        if h.vocab_size != self.vocab.len() || h.vocab_size != self.model.vocab_size() || h.dim != self.model.dim() {
            return Err(Error::Config("checkpoint header disagrees with its contents".into()));
        }
        // re-run the shape and finiteness checks
        ModelParams::from_vec(h.vocab_size, h.dim, self.model.as_slice().to_vec())?;
        AggregatorParams::from_vec(self.aggregator.hidden(), self.aggregator.as_slice().to_vec())?;
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("serializing checkpoint", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::json("parsing checkpoint", e))?;
        ck.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path.display().to_string(), source),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let vocab = Vocab::standard();
        let model = ModelParams::init(vocab.len(), 6, 42).unwrap();
        let agg = AggregatorParams::init(4, 43).unwrap();
        let ck = Checkpoint::new(&vocab, model, agg, 9, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        let bits = |c: &Checkpoint| c.model.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&ck), bits(&back));
        assert_eq!(ck, back);
    }

    #[test]
    fn rejects_mismatched_header() {
        let vocab = Vocab::standard();
        let mut ck = Checkpoint::new(
            &vocab,
            ModelParams::init(vocab.len(), 4, 1).unwrap(),
            AggregatorParams::zeros(2).unwrap(),
            9,
            8,
        );
        ck.header.dim = 5;
        assert!(matches!(
            Checkpoint::from_json(&ck.to_json().unwrap()),
            Err(Error::Config(_))
        ));
    }
}
