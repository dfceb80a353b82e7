//! Versioned model checkpoints: a JSON container with the config, the
//! vocabulary plus its fingerprint, and the flat parameter arrays. Loading
//! validates the version and the fingerprint, and f64 values round-trip
//! exactly through serde_json's shortest representation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use tsas_core::toymodel::{ToyConfig, ToyError, ToyModel, ToyParams, Vocab, VocabError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config: ToyConfig,
    vocab_hash: u64,
    vocab: Vec<String>,
    params: ToyParams,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access checkpoint `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found}, expected {CHECKPOINT_VERSION}")]
    Version { found: u32 },
    #[error("vocabulary hash mismatch: stored {stored:#x}, recomputed {actual:#x}")]
    VocabHash { stored: u64, actual: u64 },
    #[error("invalid vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("checkpoint does not assemble: {0}")]
    Model(#[from] ToyError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io { path: path.display().to_string(), source }
}

/// Atomic write: temp file in the same directory, then rename.
pub fn save(model: &ToyModel, path: &Path) -> Result<(), CheckpointError> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config: model.cfg.clone(),
        vocab_hash: model.vocab.fingerprint(),
        vocab: model.vocab.tokens().to_vec(),
        params: model.params.clone(),
    };
    let body = serde_json::to_string(&file)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, body).map_err(io_err(path))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<ToyModel, CheckpointError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let file: CheckpointFile = serde_json::from_str(&raw)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version { found: file.version });
    }
    let vocab = Vocab::from_token_list(file.vocab)?;
    let actual = vocab.fingerprint();
    if actual != file.vocab_hash {
        return Err(CheckpointError::VocabHash { stored: file.vocab_hash, actual });
    }
    Ok(ToyModel::from_parts(vocab, file.config, file.params)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyModel {
        let vocab = Vocab::from_texts(["alice was born in paris", "where was alice born"]);
        let cfg = ToyConfig { embed_dim: 6, hidden_dim: 8, ..ToyConfig::default() };
        ToyModel::new(vocab, cfg, 3).unwrap()
    }

    #[test]
    fn save_load_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let original = model();
        save(&original, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded, original, "parameters round-trip bit-exactly through JSON");
    }

    #[test]
    fn corrupted_vocab_hash_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&model(), &path).unwrap();
        let mut value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let stored = value["vocab_hash"].as_u64().unwrap();
        value["vocab_hash"] = serde_json::json!(stored ^ 1);
        fs::write(&path, value.to_string()).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::VocabHash { .. })));
    }

    #[test]
    fn future_versions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        save(&model(), &path).unwrap();
        let tampered =
            fs::read_to_string(&path).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        fs::write(&path, tampered).unwrap();
        assert!(matches!(load(&path), Err(CheckpointError::Version { found: 2 })));
    }
}
