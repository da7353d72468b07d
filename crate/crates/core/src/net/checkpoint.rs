//! Weight checkpoints: `<stem>.bin` holds every parameter tensor in store
//! order as little-endian f64; `<stem>.json` is the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::model::{Model, ModelMeta};
use super::train::History;
use crate::autodiff::Tensor;
use crate::dict::store::sha256_hex;
use crate::error::{Error, Result};
use crate::real::Real;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: ModelConfig,
    pub meta: ModelMeta,
    pub params: Vec<ParamEntry>,
    pub weights_sha256: String,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub loss: String,
    pub history: History,
    /// Caller-defined context, such as how inputs were prepared.
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn encode<T: Real>(model: &Model<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.params.count() * 8);
    for t in model.params.tensors() {
        for &v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

pub fn save<T: Real>(stem: &Path, model: &Model<T>, seed: u64, train: Option<&TrainConfig>, history: &History) -> Result<Manifest> {
    save_with(stem, model, seed, train, history, serde_json::Value::Null)
}

pub fn save_with<T: Real>(
    stem: &Path,
    model: &Model<T>,
    seed: u64,
    train: Option<&TrainConfig>,
    history: &History,
    extra: serde_json::Value,
) -> Result<Manifest> {
    let bytes = encode(model);
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        config: model.cfg.clone(),
        meta: model.meta.clone(),
        params: model
            .params
            .names()
            .iter()
            .zip(model.params.tensors())
            .map(|(n, t)| ParamEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        weights_sha256: sha256_hex(&bytes),
        seed,
        train: train.cloned(),
        loss: "sum over outputs of the batch-mean squared error, each output divided by its training-set standard deviation".into(),
        history: history.clone(),
        extra,
    };
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
    fs::write(&json, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    Ok(manifest)
}

/// Hashes a loaded model must match; `None` skips that check.
#[derive(Clone, Debug, Default)]
pub struct Expect<'a> {
    pub scheme_hash: Option<&'a str>,
    pub dict_hash: Option<&'a str>,
    /// Load despite scheme or dictionary mismatches.
    pub force: bool,
}

pub fn read_manifest(stem: &Path) -> Result<Manifest> {
    let json = stem.with_extension("json");
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Data(format!("checkpoint version {} is not supported", manifest.version)));
    }
    Ok(manifest)
}

pub fn load<T: Real>(stem: &Path, expect: &Expect) -> Result<(Model<T>, Manifest)> {
    let bin = stem.with_extension("bin");
    let manifest = read_manifest(stem)?;
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let found = sha256_hex(&bytes);
    if found != manifest.weights_sha256 {
        return Err(Error::HashMismatch {
            what: bin.display().to_string(),
            expected: manifest.weights_sha256.clone(),
            found,
        });
    }
    if !expect.force {
        for (what, want, have) in [
            ("scheme", expect.scheme_hash, &manifest.meta.scheme_hash),
            ("dictionary", expect.dict_hash, &manifest.meta.dict_hash),
        ] {
            if let Some(w) = want {
                if w != have {
                    return Err(Error::HashMismatch {
                        what: format!("checkpoint {what}"),
                        expected: have.clone(),
                        found: w.to_string(),
                    });
                }
            }
        }
    }
    let mut model = Model::skeleton(manifest.config.clone(), manifest.meta.clone())?;
    if model.params.names() != manifest.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>() {
        return Err(Error::Data("checkpoint parameter names do not match the configuration".into()));
    }
    if bytes.len() != model.params.count() * 8 {
        return Err(Error::Data(format!(
            "{}: {} bytes for {} parameters",
            bin.display(),
            bytes.len(),
            model.params.count()
        )));
    }
    let mut values = Vec::with_capacity(model.params.len());
    let mut off = 0;
    for t in model.params.tensors() {
        let data: Vec<T> = bytes[off..off + t.len() * 8]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        off += t.len() * 8;
        values.push(Tensor::new(t.shape().to_vec(), data)?);
    }
    model.params.load_values(values)?;
    Ok((model, manifest))
}
