//! Checkpoint directories: `model.json` plus one little-endian float32 blob per parameter.

use std::fs;
use std::path::Path;

use fdbeam_core::Scalar;
use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::policy::{ModelConfig, Policy};
use crate::tensor::Matrix;
use crate::{Error, Result};

pub const MODEL_FILE: &str = "model.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub file: String,
    pub shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub config: ModelConfig,
    pub dtype: String,
    pub endianness: String,
    pub params: Vec<ParamEntry>,
    /// Free-form training record (schedule, steps, seeds, calibration constants, ...).
    pub provenance: serde_json::Value,
}

pub fn save<T: Scalar>(policy: &Policy<T>, dir: &Path, provenance: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut params = Vec::with_capacity(policy.store.len());
    for (name, value) in policy.store.names.iter().zip(&policy.store.values) {
        let file = format!("{name}.f32");
        let mut bytes = Vec::with_capacity(value.len() * 4);
        for &x in &value.data {
            bytes.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
        }
        fs::write(dir.join(&file), bytes)?;
        params.push(ParamEntry { name: name.clone(), file, shape: [value.rows, value.cols] });
    }
    let manifest = ModelManifest {
        config: policy.cfg.clone(),
        dtype: "float32".into(),
        endianness: "little".into(),
        params,
        provenance,
    };
    fs::write(dir.join(MODEL_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<ModelManifest> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join(MODEL_FILE))?)?)
}

pub fn load<T: Scalar>(dir: &Path) -> Result<(Policy<T>, ModelManifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != "float32" || manifest.endianness != "little" {
        return Err(Error::Checkpoint(format!("unsupported blob format {} {}", manifest.dtype, manifest.endianness)));
    }
    let mut store = ParamStore::new();
    for p in &manifest.params {
        let bytes = fs::read(dir.join(&p.file))?;
        let [rows, cols] = p.shape;
        if bytes.len() != rows * cols * 4 {
            return Err(Error::Checkpoint(format!("{}: {} bytes for shape {rows}x{cols}", p.file, bytes.len())));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        store.insert(&p.name, Matrix::from_vec(rows, cols, data));
    }
    let policy = Policy::with_store(manifest.config.clone(), store)?;
    Ok((policy, manifest))
}
