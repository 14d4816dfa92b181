//! Two-stage optimization: broad pretraining over a distribution of group sizes, probing
//! budgets and Rician factors, then fine-tuning on one configuration.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use fdbeam_core::arraygeom::ArrayConfig;
use fdbeam_core::channelsim::{mix_seed, Calibration, RawScene, SceneRealization};
use fdbeam_core::cmat::CMat;
use fdbeam_core::dataset::Dataset;
use fdbeam_core::probing::probing_noise;
use fdbeam_nn::checkpoint;
use fdbeam_nn::optim::{clip_global_norm, AdamW, AdamWConfig};
use fdbeam_nn::policy::noise_normalized;
use fdbeam_nn::{Policy32, ProbeSource};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::schedule::LrSchedule;
use crate::{Error, Result};

pub const LOG_FILE: &str = "train_log.csv";

/// One coherent-group configuration: `K` user pairs, `M` probing pairs, Rician factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub k: usize,
    pub m: usize,
    pub kappa_db: f64,
}

/// Uniform choices for each group drawn during pretraining.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigDistribution {
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    pub kappa_db: Vec<f64>,
}

impl Default for ConfigDistribution {
    fn default() -> Self {
        Self { k: vec![1, 2, 4, 8, 16, 32], m: vec![4, 8, 16, 32, 64], kappa_db: vec![-20.0, -10.0, 0.0, 10.0, 20.0] }
    }
}

impl ConfigDistribution {
    pub fn fixed(c: GroupConfig) -> Self {
        Self { k: vec![c.k], m: vec![c.m], kappa_db: vec![c.kappa_db] }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> GroupConfig {
        GroupConfig {
            k: self.k[rng.random_range(0..self.k.len())],
            m: self.m[rng.random_range(0..self.m.len())],
            kappa_db: self.kappa_db[rng.random_range(0..self.kappa_db.len())],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k.is_empty() || self.m.is_empty() || self.kappa_db.is_empty() {
            return Err(Error::Config("configuration distribution has an empty axis".into()));
        }
        if self.k.contains(&0) || self.m.contains(&0) {
            return Err(Error::Config("K and M must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: AdamWConfig,
    /// Cosine annealing from `pretrain_lr` to `pretrain_lr_final`.
    pub pretrain_lr: f64,
    pub pretrain_lr_final: f64,
    /// One-cycle peak and warmup fraction for fine-tuning.
    pub finetune_peak_lr: f64,
    pub finetune_warmup_frac: f64,
    /// Coherent groups per optimizer step.
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub config_distribution: ConfigDistribution,
    pub grad_clip_norm: Option<f64>,
    /// Validation period in steps (0 disables periodic validation).
    pub val_every: usize,
    pub val_groups: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: AdamWConfig::default(),
            pretrain_lr: 5e-5,
            pretrain_lr_final: 5e-6,
            finetune_peak_lr: 1e-4,
            finetune_warmup_frac: 0.1,
            batch_size: 8,
            steps: 2500,
            seed: 0,
            config_distribution: ConfigDistribution::default(),
            grad_clip_norm: Some(1.0),
            val_every: 250,
            val_groups: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.pretrain_lr) && pos(self.pretrain_lr_final) && pos(self.finetune_peak_lr)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.steps == 0 || self.val_groups == 0 {
            return Err(Error::Config("batch_size, steps and val_groups must be at least 1".into()));
        }
        self.config_distribution.validate()
    }

    pub fn pretrain_schedule(&self) -> LrSchedule {
        LrSchedule::cosine(self.pretrain_lr, self.pretrain_lr_final, self.steps)
    }

    pub fn finetune_schedule(&self) -> LrSchedule {
        LrSchedule::one_cycle(self.finetune_peak_lr, self.finetune_warmup_frac, self.steps)
    }
}

/// Uncalibrated scenes of one split plus the site calibration that realizes them.
#[derive(Clone, Debug)]
pub struct SceneBank {
    pub array: ArrayConfig,
    pub scenes: Vec<RawScene>,
    pub calibration: Calibration,
}

impl SceneBank {
    pub fn from_dataset(ds: &Dataset, split: &str) -> Result<Self> {
        Ok(Self {
            array: ds.manifest.array.clone(),
            scenes: ds.load_raw(split)?,
            calibration: ds.manifest.calibration.clone(),
        })
    }

    pub fn k_max(&self) -> usize {
        self.scenes.first().map_or(0, |s| s.users.len())
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Calibrated scene `index` at `kappa_db`, restricted to `users`.
    pub fn realize(&self, index: usize, users: &[usize], kappa_db: f64) -> Result<SceneRealization<f64>> {
        Ok(self.scenes[index].realize(kappa_db, &self.calibration)?.select_users(users))
    }

    fn check_support(&self, dist: &ConfigDistribution) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("scene bank is empty".into()));
        }
        if let Some(&k) = dist.k.iter().find(|&&k| k > self.k_max()) {
            return Err(Error::Config(format!("K = {k} exceeds the {} users stored per scene", self.k_max())));
        }
        for &kappa in &dist.kappa_db {
            self.calibration.for_kappa(kappa)?;
        }
        Ok(())
    }
}

/// A network-ready group: noise-normalized single-precision scene and fresh probing noise.
#[derive(Clone, Debug)]
pub struct TrainingGroup {
    pub config: GroupConfig,
    pub scene: SceneRealization<f32>,
    pub noise: CMat<f32>,
}

/// Draws a random scene, a random `K`-subset of its users and fresh probing noise.
pub fn draw_group(bank: &SceneBank, config: GroupConfig, rng: &mut impl Rng) -> Result<TrainingGroup> {
    let index = rng.random_range(0..bank.len());
    let users = sample(rng, bank.k_max(), config.k).into_vec();
    let scene = noise_normalized(&bank.realize(index, &users, config.kappa_db)?);
    let noise = probing_noise::<f32>(scene.si.nr(), config.m, 1.0, rng.random());
    Ok(TrainingGroup { config, scene: scene.cast(), noise })
}

/// Fixed validation groups, reproducible from `seed`.
pub fn validation_groups(bank: &SceneBank, dist: &ConfigDistribution, n: usize, seed: u64) -> Result<Vec<TrainingGroup>> {
    bank.check_support(dist)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x7A11));
    (0..n).map(|_| {
        let c = dist.sample(&mut rng);
        draw_group(bank, c, &mut rng)
    })
    .collect()
}

/// Mean normalized SSE per user pair over `groups`.
pub fn mean_group_nsse(policy: &Policy32, groups: &[TrainingGroup]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for g in groups {
        let f = policy.forward_group(&g.scene, g.config.m, Some(&g.noise), &ProbeSource::Learned)?;
        sum += f.outcome.nsse.iter().map(|&v| v as f64).sum::<f64>();
        n += g.config.k;
    }
    Ok(sum / n.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    /// Batch mean of `-Σ nsse_k / K`.
    pub train_loss: f64,
    pub val_nsse: Option<f64>,
    pub wall_time: f64,
}

impl LogRow {
    fn csv(&self) -> String {
        let val = self.val_nsse.map_or(String::new(), |v| v.to_string());
        format!("{},{},{},{},{:.3}\n", self.step, self.lr, self.train_loss, val, self.wall_time)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation score seen (including before the first step).
    pub policy: Policy32,
    pub initial_val_nsse: f64,
    pub best_val_nsse: f64,
    pub best_step: usize,
    pub final_val_nsse: f64,
    pub groups_seen: usize,
    pub log: Vec<LogRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Stage {
    Pretrain,
    Finetune(GroupConfig),
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune(_) => "finetune",
        }
    }
}

pub fn pretrain(policy: Policy32, train: &SceneBank, val: &SceneBank, tc: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    run(policy, train, val, tc, Stage::Pretrain, out)
}

pub fn finetune(
    policy: Policy32,
    train: &SceneBank,
    val: &SceneBank,
    fixed: GroupConfig,
    tc: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    run(policy, train, val, tc, Stage::Finetune(fixed), out)
}

fn run(mut policy: Policy32, train: &SceneBank, val: &SceneBank, tc: &TrainConfig, stage: Stage, out: Option<&Path>) -> Result<TrainOutcome> {
    tc.validate()?;
    let (dist, schedule) = match stage {
        Stage::Pretrain => (tc.config_distribution.clone(), tc.pretrain_schedule()),
        Stage::Finetune(c) => (ConfigDistribution::fixed(c), tc.finetune_schedule()),
    };
    if let Some(&m) = dist.m.iter().find(|&&m| m > policy.cfg.max_m) {
        return Err(Error::Config(format!("M = {m} exceeds the model's probing table ({})", policy.cfg.max_m)));
    }
    train.check_support(&dist)?;
    let val_set = validation_groups(val, &dist, tc.val_groups, mix_seed(tc.seed, 0x5A1))?;

    let mut log_file = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(LOG_FILE);
            let fresh = !path.exists();
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            if fresh {
                f.write_all(b"step,lr,train_loss,val_nsse,wall_time\n")?;
            }
            Some(f)
        }
        None => None,
    };
    let provenance = |step: usize, val: f64| {
        serde_json::json!({ "stage": stage.name(), "step": step, "val_nsse": val, "train": tc })
    };

    let start = Instant::now();
    let initial = mean_group_nsse(&policy, &val_set)?;
    let mut best = (initial, 0usize, policy.store.clone());
    if let Some(dir) = out {
        checkpoint::save(&policy, dir, provenance(0, initial))?;
    }
    let mut opt = AdamW::new(tc.optimizer, &policy.store);
    let mut log = Vec::new();
    let mut last_val = initial;

    for step in 0..tc.steps {
        let lr = schedule.lr(step);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(tc.seed, step as u64));
        let mut grads = policy.store.zeros_like();
        let mut loss_sum = 0.0;
        for _ in 0..tc.batch_size {
            let group = draw_group(train, dist.sample(&mut rng), &mut rng)?;
            let f = policy.forward_group(&group.scene, group.config.m, Some(&group.noise), &ProbeSource::Learned)?;
            let loss = f.graph.value(f.loss).data[0] as f64;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, detail: format!("loss {loss}") });
            }
            loss_sum += loss / group.config.k as f64;
            // per-pair mean, then batch mean
            let scale = 1.0 / (group.config.k * tc.batch_size) as f32;
            f.graph.backward(f.loss).accumulate_params_scaled(&mut grads, scale);
        }
        let norm = match tc.grad_clip_norm {
            Some(c) => clip_global_norm(&mut grads, c),
            None => clip_global_norm(&mut grads, f64::INFINITY),
        };
        if !norm.is_finite() {
            return Err(Error::Diverged { step, detail: format!("gradient norm {norm}") });
        }
        opt.step(&mut policy.store, &grads, lr);

        let done = step + 1;
        let validate = done == tc.steps || (tc.val_every > 0 && done % tc.val_every == 0);
        let val_nsse = if validate {
            let v = mean_group_nsse(&policy, &val_set)?;
            if !v.is_finite() {
                return Err(Error::Diverged { step, detail: format!("validation nsse {v}") });
            }
            last_val = v;
            if v > best.0 {
                best = (v, done, policy.store.clone());
                if let Some(dir) = out {
                    checkpoint::save(&policy, dir, provenance(done, v))?;
                }
            }
            Some(v)
        } else {
            None
        };
        let row = LogRow { step: done, lr, train_loss: loss_sum / tc.batch_size as f64, val_nsse, wall_time: start.elapsed().as_secs_f64() };
        if let Some(f) = log_file.as_mut() {
            f.write_all(row.csv().as_bytes())?;
        }
        log.push(row);
    }

    let (best_val, best_step, store) = best;
    policy.store = store;
    Ok(TrainOutcome {
        policy,
        initial_val_nsse: initial,
        best_val_nsse: best_val,
        best_step,
        final_val_nsse: last_val,
        groups_seen: tc.steps * tc.batch_size,
        log,
    })
}
