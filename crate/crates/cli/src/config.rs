//! Experiment configuration document (JSON, units in key names).

use std::fs;
use std::path::{Path, PathBuf};

use fdbeam_core::arraygeom::ArrayConfig;
use fdbeam_core::channelsim::{CalibrationTargets, SiteModel};
use fdbeam_core::dataset::DatasetSpec;
use fdbeam_exp::eval::{EvalConfig, Method};
use fdbeam_exp::train::{GroupConfig, TrainConfig};
use fdbeam_nn::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub seed: u64,
    pub train_scenes: usize,
    pub val_scenes: usize,
    pub test_scenes: usize,
    /// Users stored per scene; groups use subsets of them.
    pub k_max: usize,
    pub kappa_set_db: Vec<f64>,
    pub calibration_scenes: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            seed: 0,
            train_scenes: 2000,
            val_scenes: 100,
            test_scenes: 200,
            k_max: 16,
            kappa_set_db: vec![-20.0, -10.0, 0.0, 10.0, 20.0],
            calibration_scenes: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub n_test_scenes: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { n_test_scenes: 200, seed: 0, methods: Method::ALL.to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub name: String,
    pub axis: String,
    /// `start:stop:step` or a comma-separated list.
    pub values: String,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { name: "sweep".into(), axis: "kappa_db".into(), values: "-20:20:10".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub results_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { data_dir: "data".into(), checkpoint_dir: "checkpoints/pretrained".into(), results_dir: "results".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub site_seed: u64,
    pub array: ArrayConfig,
    pub calibration: CalibrationTargets,
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub kappa_db: f64,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub eval: EvalSection,
    pub sweep: SweepSection,
    pub paths: PathsSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            site_seed: 1,
            array: ArrayConfig::square(4),
            calibration: CalibrationTargets::default(),
            k: 8,
            l: 56,
            m: 16,
            kappa_db: 0.0,
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            training: TrainConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            paths: PathsSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
        Ok(serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.array.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        anyhow::ensure!(self.k >= 1 && self.l >= 1 && self.m >= 1, "k, l and m must be positive");
        anyhow::ensure!(self.dataset.k_max >= 1, "dataset.k_max must be positive");
        Ok(())
    }

    pub fn site(&self) -> SiteModel {
        SiteModel::generate(self.site_seed)
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig { k: self.k, l: self.l, m: self.m, kappa_db: self.kappa_db, nt: self.array.nt, nr: self.array.nr }
    }

    pub fn group(&self) -> GroupConfig {
        GroupConfig { k: self.k, m: self.m, kappa_db: self.kappa_db }
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        let d = &self.dataset;
        let mut spec = DatasetSpec::standard(
            self.site(),
            self.array.clone(),
            d.seed,
            [d.train_scenes, d.val_scenes, d.test_scenes],
            d.k_max,
            d.kappa_set_db.clone(),
        );
        spec.targets = self.calibration;
        spec.calibration_split.count = d.calibration_scenes;
        spec
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
