use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::MetricsBreakdown;
use crate::data::FeatureStore;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::nn::{AdamW, AdamWConfig, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One line of the per-epoch run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_visual: Option<f64>,
    pub val_blind: Option<f64>,
    pub val_all: f64,
    pub lr_last: f64,
}

/// Everything needed to evaluate a model or continue its training run.
///
/// All random streams are derived from `(seed, epoch)`, so the completed-epoch
/// counter is the whole RNG state.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_val: Option<MetricsBreakdown>,
    pub log: Vec<EpochLog>,
    pub params: ModelParams<f32>,
    pub optimizer: Option<AdamW<f32>>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    config: AdamWConfig,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    seed: u64,
    step: u64,
    epoch: usize,
    best_epoch: Option<usize>,
    best_val: Option<MetricsBreakdown>,
    log: Vec<EpochLog>,
    tensors: Vec<TensorMeta>,
    optimizer: Option<OptimizerMeta>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let names = self.params.set.names();
        let header = Header {
            model: self.params.config.clone(),
            train: self.train.clone(),
            seed: self.train.seed,
            step: self.step,
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            best_val: self.best_val,
            log: self.log.clone(),
            tensors: names
                .iter()
                .zip(self.params.tensors())
                .map(|(n, t)| TensorMeta { name: n.clone(), shape: t.shape().to_vec() })
                .collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta { config: o.config, step: o.step_count() }),
        };
        let mut records = Vec::new();
        let mut add = |prefix: &str, tensors: &[Tensor<f32>]| {
            for (n, t) in names.iter().zip(tensors) {
                records.push((format!("{prefix}/{n}"), t.data().to_vec()));
            }
        };
        add("param", self.params.tensors());
        if let Some(o) = &self.optimizer {
            add("adam_m", o.first_moments());
            add("adam_v", o.second_moments());
        }
        let store = FeatureStore::new(1, records)?;
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&store.to_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(ckpt_err("file too short"));
        }
        if bytes[..4] != CHECKPOINT_MAGIC {
            return Err(ckpt_err(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ckpt_err(format!("unsupported version {version}")));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(ckpt_err("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..len])?;
        let store = FeatureStore::from_bytes(&body[len..])?;

        let mut shapes: HashMap<&str, &[usize]> = HashMap::new();
        for t in &header.tensors {
            shapes.insert(t.name.as_str(), t.shape.as_slice());
        }
        let tensor = |key: &str, name: &str| -> Option<Tensor<f32>> {
            let shape = shapes.get(name)?;
            Tensor::new(shape.to_vec(), store.get(key)?.to_vec()).ok()
        };
        let params = ModelParams::from_named(header.model.clone(), |name| tensor(&format!("param/{name}"), name))?;
        let optimizer = match header.optimizer {
            None => None,
            Some(meta) => {
                let load = |prefix: &str| -> Result<Vec<Tensor<f32>>> {
                    params
                        .set
                        .names()
                        .iter()
                        .map(|n| tensor(&format!("{prefix}/{n}"), n).ok_or_else(|| ckpt_err(format!("missing {prefix}/{n}"))))
                        .collect()
                };
                Some(AdamW::from_state(meta.config, meta.step, load("adam_m")?, load("adam_v")?)?)
            }
        };
        let mut train = header.train;
        train.model = header.model;
        Ok(Self {
            train,
            step: header.step,
            epoch: header.epoch,
            best_epoch: header.best_epoch,
            best_val: header.best_val,
            log: header.log,
            params,
            optimizer,
        })
    }
}

/// Writes atomically via a sibling temporary file.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, ckpt.to_bytes()?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
