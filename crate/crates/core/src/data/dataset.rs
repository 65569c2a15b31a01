use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use serde_json::Value;

use super::annotations::{parse_annotations, write_annotations, AnnotationRecord, Split};
use super::store::{read_feature_store, FeatureStore};
use super::synth::{SynthConfig, SynthDataset};
use crate::error::{Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const OBJECTS_FILE: &str = "objects.mvgf";
pub const LANGUAGE_FILE: &str = "language.mvgf";
pub const META_FILE: &str = "meta.json";

/// A dataset directory: annotations plus the object-view and language stores.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub annotations: Vec<AnnotationRecord>,
    pub objects: Arc<FeatureStore>,
    pub language: Arc<FeatureStore>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let annotations = parse_annotations(BufReader::new(File::open(dir.join(ANNOTATIONS_FILE))?))?;
        let objects = read_feature_store(&dir.join(OBJECTS_FILE))?;
        let language = read_feature_store(&dir.join(LANGUAGE_FILE))?;
        if objects.dim() != language.dim() {
            return Err(Error::Config(format!(
                "object features have dim {}, language features {}",
                objects.dim(),
                language.dim()
            )));
        }
        Ok(Self { annotations, objects: Arc::new(objects), language: Arc::new(language) })
    }

    pub fn dim(&self) -> usize {
        self.objects.dim()
    }

    pub fn split(&self, split: Split) -> Vec<AnnotationRecord> {
        self.annotations.iter().filter(|r| r.split == split).cloned().collect()
    }

    /// Distinct object ids referenced by records of `split`, in first-use order.
    pub fn object_pool(&self, split: Split) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in self.annotations.iter().filter(|r| r.split == split) {
            for o in &r.objects {
                if seen.insert(o.as_str()) {
                    out.push(o.clone());
                }
            }
        }
        out
    }
}

impl From<SynthDataset> for Dataset {
    fn from(s: SynthDataset) -> Self {
        Self { annotations: s.annotations, objects: Arc::new(s.objects), language: Arc::new(s.language) }
    }
}

/// Writes `annotations.jsonl`, `objects.mvgf`, `language.mvgf` and `meta.json`.
pub fn write_dataset(dir: &Path, data: &SynthDataset, cfg: &SynthConfig, extra_meta: Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_annotations(BufWriter::new(File::create(dir.join(ANNOTATIONS_FILE))?), &data.annotations)?;
    fs::write(dir.join(OBJECTS_FILE), data.objects.to_bytes())?;
    fs::write(dir.join(LANGUAGE_FILE), data.language.to_bytes())?;
    let meta = serde_json::json!({ "config": cfg, "seed": cfg.seed, "extra": extra_meta });
    fs::write(dir.join(META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
