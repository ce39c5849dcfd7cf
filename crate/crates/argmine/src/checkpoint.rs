//! Trained-model files.
//!
//! `<path>` holds the tensors: magic `AMCK`, `u32` version, `u32` tensor
//! count, then per tensor a `u32`-prefixed name, `u32` rows, `u32` cols and
//! little-endian `f32` values. `<path>.json` holds everything else needed
//! to rebuild and resume the model. Both files are replaced atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use argmine_core::encoder::Vocab;
use argmine_core::trainer::{Checkpoint, TrainConfig};
use argmine_core::{LabelSchema, ModelConfig, ModelParams, Tensor};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{read_f32s, read_string, read_u32, write_f32s, write_string, write_u32};
use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"AMCK";
const VERSION: u32 = 1;

/// A checkpoint with the label schema and toy vocabulary it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub checkpoint: Checkpoint<f32>,
    pub schema: LabelSchema,
    /// Present exactly when the model has a toy encoder.
    pub vocab: Option<Vocab>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    format_version: u32,
    train_config: TrainConfig,
    model_config: ModelConfig,
    schema: LabelSchema,
    vocab: Option<Vec<String>>,
    epoch: usize,
    best_dev_macro_f1_ari: f64,
    /// Hex-encoded ChaCha seed.
    rng_seed: String,
    /// Decimal, since JSON numbers cannot hold a `u128`.
    rng_word_pos: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io = |e| CliError::io(path, e);
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

fn tensor_bytes(params: &ModelParams<f32>) -> Vec<u8> {
    let named = params.named();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    // Writes into a Vec cannot fail.
    write_u32(&mut out, VERSION).unwrap();
    write_u32(&mut out, named.len() as u32).unwrap();
    for (name, _, t) in named {
        write_string(&mut out, &name).unwrap();
        write_u32(&mut out, t.rows() as u32).unwrap();
        write_u32(&mut out, t.cols() as u32).unwrap();
        write_f32s(&mut out, t.data()).unwrap();
    }
    out
}

pub fn save_model(path: &Path, model: &SavedModel) -> Result<()> {
    let cp = &model.checkpoint;
    let sidecar = Sidecar {
        format_version: VERSION,
        train_config: cp.train_config.clone(),
        model_config: cp.params.config.clone(),
        schema: model.schema.clone(),
        vocab: model.vocab.as_ref().map(|v| v.tokens().to_vec()),
        epoch: cp.epoch,
        best_dev_macro_f1_ari: cp.best_dev_macro_f1_ari,
        rng_seed: cp.rng_seed.iter().map(|b| format!("{b:02x}")).collect(),
        rng_word_pos: cp.rng_word_pos.to_string(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&sidecar_path(path), &json)?;
    write_atomic(path, &tensor_bytes(&cp.params))
}

fn read_tensors(bytes: &[u8]) -> std::io::Result<Vec<(String, Tensor<f32>)>> {
    let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let mut r = bytes;
    if r.len() < 4 || &r[..4] != MAGIC {
        return Err(invalid("not a checkpoint file (bad magic)".into()));
    }
    r = &r[4..];
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(invalid(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name = read_string(&mut r)?;
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let data = read_f32s(&mut r, rows * cols)?;
        out.push((name, Tensor::new(rows, cols, data).map_err(|e| invalid(e.to_string()))?));
    }
    if !r.is_empty() {
        return Err(invalid("trailing bytes after the last tensor".into()));
    }
    Ok(out)
}

fn parse_seed(hex: &str) -> Option<[u8; 32]> {
    if hex.len() != 64 {
        return None;
    }
    let mut seed = [0u8; 32];
    for (k, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(hex.get(2 * k..2 * k + 2)?, 16).ok()?;
    }
    Some(seed)
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let side_path = sidecar_path(path);
    for p in [path, side_path.as_path()] {
        if !p.exists() {
            return Err(CliError::MissingPath(p.to_path_buf()));
        }
    }
    let text = std::fs::read_to_string(&side_path).map_err(|e| CliError::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: side_path.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if side.format_version != VERSION {
        return Err(CliError::Incompatible(format!(
            "checkpoint format version {} (expected {VERSION})",
            side.format_version
        )));
    }
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let stored = read_tensors(&bytes).map_err(|e| CliError::io(path, e))?;

    // The initializer only provides correctly shaped slots; every value is overwritten.
    let mut params = ModelParams::<f32>::init(side.model_config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let expected: Vec<(String, (usize, usize))> = params.named().into_iter().map(|(n, _, t)| (n, t.shape())).collect();
    let found: Vec<(String, (usize, usize))> = stored.iter().map(|(n, t)| (n.clone(), t.shape())).collect();
    if expected != found {
        return Err(CliError::Incompatible(format!(
            "{}: tensors do not match the model described by its sidecar",
            path.display()
        )));
    }
    let tensors: Vec<Tensor<f32>> = stored.into_iter().map(|(_, t)| t).collect();
    params.set_tensors(&tensors)?;

    let vocab = side.vocab.map(Vocab::from_tokens);
    if vocab.as_ref().map(|v| v.size()) != params.config.vocab_size {
        return Err(CliError::Incompatible(
            "vocabulary does not match the embedding table".into(),
        ));
    }
    let bad = |what: &str| CliError::Parse {
        path: side_path.clone(),
        line: 0,
        message: format!("malformed {what}"),
    };
    Ok(SavedModel {
        checkpoint: Checkpoint {
            params,
            train_config: side.train_config,
            epoch: side.epoch,
            best_dev_macro_f1_ari: side.best_dev_macro_f1_ari,
            rng_seed: parse_seed(&side.rng_seed).ok_or_else(|| bad("rng_seed"))?,
            rng_word_pos: side.rng_word_pos.parse().map_err(|_| bad("rng_word_pos"))?,
        },
        schema: side.schema,
        vocab,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> SavedModel {
        let schema = LabelSchema::pe();
        let vocab = Vocab::from_tokens(vec!["a".into(), "b".into()]);
        let train_config = TrainConfig::toy();
        let config = train_config.model_config(&schema, Some(vocab.size()));
        let params = ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        SavedModel {
            checkpoint: Checkpoint {
                params,
                train_config,
                epoch: 7,
                best_dev_macro_f1_ari: 0.625,
                rng_seed: [9; 32],
                rng_word_pos: u128::MAX - 5,
            },
            schema,
            vocab: Some(vocab),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.amck");
        let m = model();
        save_model(&path, &m).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert!(!dir.path().join("m.amck.tmp").exists());
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.amck");
        save_model(&path, &model()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_model(&path).is_err());
        std::fs::remove_file(&path).unwrap();
        assert!(matches!(load_model(&path), Err(CliError::MissingPath(_))));
    }
}
