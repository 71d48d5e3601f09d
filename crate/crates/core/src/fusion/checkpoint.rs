use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::ClifModel;
use crate::config::RunConfig;
use crate::dataset_io::{read_cache, write_cache, CacheMeta, FeatureCache};
use crate::nn::Parameters;
use crate::{Error, Result, Scalar};

pub const CHECKPOINT_FORMAT: &str = "clif-checkpoint/1";
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// `manifest.json` of a checkpoint directory. Each tensor lives next to it
/// as `<name>.clfc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    /// Effective config the model was built from, as TOML.
    pub config: String,
    pub prompt_digest: String,
    pub semantic_channels: usize,
    pub init_seed: u64,
    pub mos_range: (f64, f64),
    pub calibration: (f64, f64),
    /// Hash of every tensor (as stored, `f32`), the MOS range and the
    /// calibration.
    pub digest: String,
}

impl CheckpointManifest {
    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::parse(&self.config)
    }
}

/// Digest of a model's parameters as they would be stored.
pub fn model_digest<T: Scalar>(model: &ClifModel<T>) -> String {
    let mut h = Sha256::new();
    h.update(CHECKPOINT_FORMAT.as_bytes());
    model.visit("", &mut |name, shape, values| {
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        for d in shape {
            h.update((*d as u32).to_le_bytes());
        }
        for v in values {
            h.update((v.as_f64() as f32).to_le_bytes());
        }
    });
    h.update(model.mos_range.0.to_le_bytes());
    h.update(model.mos_range.1.to_le_bytes());
    h.update(model.calibration.0.to_le_bytes());
    h.update(model.calibration.1.to_le_bytes());
    hex::encode(h.finalize())
}

/// Write `model` into `dir` (created if needed); returns the manifest.
pub fn save_checkpoint<T: Scalar>(
    model: &ClifModel<T>,
    cfg: &RunConfig,
    prompt_digest: &str,
    init_seed: u64,
    dir: &Path,
) -> Result<CheckpointManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    let mut failure = None;
    model.visit("", &mut |name, shape, values| {
        if failure.is_some() {
            return;
        }
        tensors.push(TensorEntry { name: name.to_string(), shape: shape.to_vec() });
        let meta = CacheMeta { prompt_digest: prompt_digest.to_string(), ..CacheMeta::default() };
        let data = values.iter().map(|v| v.as_f64() as f32).collect();
        let res = FeatureCache::new(shape.to_vec(), data, meta).and_then(|c| write_cache(&c, dir.join(format!("{name}.clfc"))));
        if let Err(e) = res {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        tensors,
        config: cfg.to_toml(),
        prompt_digest: prompt_digest.to_string(),
        semantic_channels: model.semantic_channels,
        init_seed,
        mos_range: model.mos_range,
        calibration: model.calibration,
        digest: model_digest(model),
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_checkpoint_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Cache {
        path: path.clone(),
        message: format!("bad checkpoint manifest: {e}"),
    })?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::Cache { path, message: format!("unsupported checkpoint format `{}`", m.format) });
    }
    Ok(m)
}

/// Rebuild the model described by a checkpoint directory and load its
/// tensors. The stored digest is verified.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(ClifModel<T>, CheckpointManifest)> {
    let manifest = read_checkpoint_manifest(dir)?;
    let cfg = manifest.run_config()?;
    let mut model = ClifModel::<T>::from_config(&cfg, manifest.semantic_channels, manifest.init_seed)?;
    let mut expected = Vec::new();
    model.visit("", &mut |name, shape, _| expected.push(TensorEntry { name: name.into(), shape: shape.to_vec() }));
    if expected != manifest.tensors {
        return Err(Error::Cache {
            path: dir.to_path_buf(),
            message: "checkpoint tensors do not match the architecture in its config".into(),
        });
    }
    let mut loaded = Vec::new();
    for t in &manifest.tensors {
        let c = read_cache(dir.join(format!("{}.clfc", t.name)))?;
        if c.shape != t.shape {
            return Err(Error::Cache {
                path: dir.join(format!("{}.clfc", t.name)),
                message: format!("shape {:?} differs from manifest {:?}", c.shape, t.shape),
            });
        }
        loaded.push(c.data);
    }
    let mut it = loaded.into_iter();
    model.visit_mut("", &mut |_, values| {
        let data = it.next().expect("one tensor per visit");
        for (dst, src) in values.iter_mut().zip(data) {
            *dst = T::of(src as f64);
        }
    });
    model.mos_range = manifest.mos_range;
    model.calibration = manifest.calibration;
    let digest = model_digest(&model);
    if digest != manifest.digest {
        return Err(Error::Cache {
            path: dir.to_path_buf(),
            message: format!("checkpoint digest {digest} does not match manifest {}", manifest.digest),
        });
    }
    Ok((model, manifest))
}
