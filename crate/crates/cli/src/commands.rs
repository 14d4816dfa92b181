//! Subcommands and their shared flag handling.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fdbeam_core::channelsim::{calibrate_budget, link_bound_stats, sample_raw_scene, Calibration};
use fdbeam_core::dataset::{build_dataset, Dataset};
use fdbeam_exp::eval::{evaluate_method, parse_values, run_sweep, write_results, EvalOptions, Method, ModelSet, SweepRow, SweepSpec};
use fdbeam_exp::plot::plot_results;
use fdbeam_exp::train::{finetune, pretrain, SceneBank};
use fdbeam_nn::{checkpoint, Policy32};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::selftest;

pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Parser)]
#[command(name = "fdbeam", version, about = "Full-duplex probing and beam-policy experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags accepted by every subcommand; each overrides the matching config entry.
#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Experiment configuration (JSON). Defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long = "kappa-db", global = true, allow_hyphen_values = true)]
    pub kappa_db: Option<f64>,
    #[arg(long, global = true)]
    pub l: Option<usize>,
    /// Seed for the command's own randomness (dataset, training or evaluation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and calibrate a train/val/test scene dataset.
    GenData,
    /// Calibrate the link budget and check it on fresh scenes.
    Calibrate {
        /// Fresh scenes used to verify the calibration.
        #[arg(long, default_value_t = 10_000)]
        verify_scenes: usize,
    },
    /// Pretrain a policy across the configured distribution.
    Pretrain {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on the fixed (K, M, kappa) configuration.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate methods at one configuration.
    Eval {
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate methods across one swept parameter.
    Sweep {
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        values: Option<String>,
        #[arg(long, value_delimiter = ',')]
        method: Vec<Method>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        name: Option<String>,
    },
    /// Render SVG figures from a results directory.
    Plot,
    /// Run the built-in oracle and invariant checks.
    Selftest,
}

fn resolved_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(k) = c.k {
        cfg.k = k;
    }
    if let Some(m) = c.m {
        cfg.m = m;
    }
    if let Some(l) = c.l {
        cfg.l = l;
    }
    if let Some(kappa) = c.kappa_db {
        cfg.kappa_db = kappa;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// SHA-256 over every file (name, then contents) in the given order.
pub fn checksum(files: &[PathBuf]) -> anyhow::Result<String> {
    let mut h = Sha256::new();
    for f in files {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(name.as_bytes());
        let mut bytes = Vec::new();
        fs::File::open(f).with_context(|| format!("opening {}", f.display()))?.read_to_end(&mut bytes)?;
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn write_run(dir: &Path, command: &str, cfg: &ExperimentConfig, seeds: serde_json::Value, extra: serde_json::Value) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    let record = json!({
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg,
        "seeds": seeds,
        "versions": {
            "fdbeam": env!("CARGO_PKG_VERSION"),
            "dataset_format": fdbeam_core::dataset::FORMAT_VERSION,
        },
        "outputs": extra,
    });
    fs::write(dir.join(RUN_FILE), serde_json::to_string_pretty(&record)? + "\n")?;
    Ok(())
}

fn load_policy(dir: &Path) -> anyhow::Result<Policy32> {
    let (p, _) = checkpoint::load::<f32>(dir).with_context(|| format!("loading checkpoint {}", dir.display()))?;
    Ok(p)
}

fn open_dataset(dir: &Path) -> anyhow::Result<Dataset> {
    Dataset::open(dir).with_context(|| format!("opening dataset {}", dir.display()))
}

fn print_rows(rows: &[SweepRow]) {
    for r in rows {
        let e = &r.row;
        let at = r.value.map_or(String::new(), |v| format!("{}={v} ", r.axis));
        match &e.error {
            None => println!(
                "{at}{} raw_nsse {:.4} effective_nsse {:.4} measurements {}",
                e.method, e.mean_nsse, e.mean_effective_nsse, e.measurements
            ),
            Some(msg) => println!("{at}{} failed: {msg}", e.method),
        }
    }
}

/// Runs one parsed command line.
pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let mut cfg = resolved_config(c)?;
    match cli.command {
        Command::GenData => {
            if let Some(s) = c.seed {
                cfg.dataset.seed = s;
            }
            let out = c.out.clone().unwrap_or_else(|| cfg.paths.data_dir.clone());
            let ds = build_dataset(&cfg.dataset_spec(), &out)?;
            let sum = checksum(&ds.files())?;
            write_run(&out, "gen-data", &cfg, json!({ "dataset": cfg.dataset.seed, "site": cfg.site_seed }), json!({ "sha256": sum }))?;
            println!("dataset {} sha256 {sum}", out.display());
        }
        Command::Calibrate { verify_scenes } => {
            let spec = cfg.dataset_spec();
            let base = spec.calibration_split.first_seed + c.seed.unwrap_or(0).wrapping_mul(1 << 24);
            let site = cfg.site();
            let k = cfg.dataset.k_max;
            let sample = (0..cfg.dataset.calibration_scenes as u64)
                .map(|i| sample_raw_scene(&site, &cfg.array, k, base + i))
                .collect::<Result<Vec<_>, _>>()?;
            let cal: Calibration = calibrate_budget(&sample, &cfg.dataset.kappa_set_db, cfg.calibration)?;
            drop(sample);
            // fresh seeds, disjoint from every dataset split
            let fresh_base = spec.calibration_split.first_seed + (1 << 27);
            let stats = link_bound_stats(&site, &cfg.array, k, fresh_base..fresh_base + verify_scenes as u64, &cal)?;
            let mut report = Vec::new();
            for s in stats {
                println!(
                    "kappa_db {} snr_dl_db {:.3} snr_ul_db {:.3} inr_ul_db {:.3}",
                    s.kappa_db, s.snr_dl_db, s.snr_ul_db, s.inr_ul_db
                );
                report.push(s);
            }
            let out = c.out.clone().unwrap_or_else(|| cfg.paths.data_dir.join("calibration"));
            fs::create_dir_all(&out)?;
            fs::write(out.join("calibration.json"), serde_json::to_string_pretty(&json!({ "calibration": cal, "verification": report }))? + "\n")?;
            write_run(&out, "calibrate", &cfg, json!({ "calibration_offset": c.seed.unwrap_or(0) }), json!({ "verify_scenes": verify_scenes }))?;
        }
        Command::Pretrain { data } => {
            if let Some(s) = c.seed {
                cfg.training.seed = s;
            }
            let ds = open_dataset(data.as_deref().unwrap_or(&cfg.paths.data_dir))?;
            let (train, val) = (SceneBank::from_dataset(&ds, "train")?, SceneBank::from_dataset(&ds, "val")?);
            let out = c.out.clone().unwrap_or_else(|| cfg.paths.checkpoint_dir.clone());
            let policy = Policy32::new(cfg.model.clone())?;
            let o = pretrain(policy, &train, &val, &cfg.training, Some(&out))?;
            write_run(&out, "pretrain", &cfg, json!({ "training": cfg.training.seed, "init": cfg.model.init_seed }), json!({
                "initial_val_nsse": o.initial_val_nsse, "best_val_nsse": o.best_val_nsse, "best_step": o.best_step, "groups": o.groups_seen,
            }))?;
            println!("pretrained: val nsse {:.4} -> best {:.4} at step {}", o.initial_val_nsse, o.best_val_nsse, o.best_step);
        }
        Command::Finetune { checkpoint: ckpt, data } => {
            if let Some(s) = c.seed {
                cfg.training.seed = s;
            }
            let ckpt = ckpt.unwrap_or_else(|| cfg.paths.checkpoint_dir.clone());
            let policy = load_policy(&ckpt)?;
            let ds = open_dataset(data.as_deref().unwrap_or(&cfg.paths.data_dir))?;
            let (train, val) = (SceneBank::from_dataset(&ds, "train")?, SceneBank::from_dataset(&ds, "val")?);
            let g = cfg.group();
            let out = c.out.clone().unwrap_or_else(|| PathBuf::from(format!("checkpoints/finetuned_k{}_m{}_kappa{}", g.k, g.m, g.kappa_db)));
            if out == ckpt {
                bail!("fine-tuning would overwrite its input checkpoint; pass a different --out");
            }
            let o = finetune(policy, &train, &val, g, &cfg.training, Some(&out))?;
            write_run(&out, "finetune", &cfg, json!({ "training": cfg.training.seed }), json!({
                "from": ckpt.display().to_string(), "initial_val_nsse": o.initial_val_nsse, "best_val_nsse": o.best_val_nsse, "best_step": o.best_step,
            }))?;
            println!("fine-tuned: val nsse {:.4} -> best {:.4} at step {}", o.initial_val_nsse, o.best_val_nsse, o.best_step);
        }
        Command::Eval { method, checkpoint: ckpt, data } => {
            if let Some(s) = c.seed {
                cfg.eval.seed = s;
            }
            let methods = if method.is_empty() { cfg.eval.methods.clone() } else { method };
            let model = ckpt.as_deref().map(load_policy).transpose()?;
            let bank = match &data {
                Some(d) => Some(SceneBank::from_dataset(&open_dataset(d)?, "test")?),
                None => None,
            };
            let opts = EvalOptions { n_test_scenes: cfg.eval.n_test_scenes.min(bank.as_ref().map_or(usize::MAX, |b| b.len())), seed: cfg.eval.seed };
            let mut rows = Vec::new();
            for m in methods {
                let row = evaluate_method(m, model.as_ref(), bank.as_ref(), cfg.eval_config(), &opts)?;
                rows.push(SweepRow { axis: "none".into(), value: None, row });
            }
            print_rows(&rows);
            if let Some(out) = &c.out {
                write_results(out, &rows)?;
                write_run(out, "eval", &cfg, json!({ "eval": cfg.eval.seed }), json!({ "rows": rows.len() }))?;
            }
        }
        Command::Sweep { axis, values, method, checkpoint: ckpt, data, name } => {
            if let Some(s) = c.seed {
                cfg.eval.seed = s;
            }
            let axis = axis.unwrap_or_else(|| cfg.sweep.axis.clone());
            let values = values.unwrap_or_else(|| cfg.sweep.values.clone());
            let name = name.unwrap_or_else(|| cfg.sweep.name.clone());
            let methods = if method.is_empty() { cfg.eval.methods.clone() } else { method };
            let models = match ckpt.as_deref() {
                Some(p) => ModelSet::shared(load_policy(p)?),
                None => ModelSet::default(),
            };
            let banks = match &data {
                Some(d) => vec![SceneBank::from_dataset(&open_dataset(d)?, "test")?],
                None => Vec::new(),
            };
            let n = cfg.eval.n_test_scenes.min(banks.first().map_or(usize::MAX, |b| b.len()));
            let spec = SweepSpec { name: name.clone(), axis: axis.parse()?, values: parse_values(&values)?, fixed: cfg.eval_config(), n_test_scenes: n, seed: cfg.eval.seed };
            let rows = run_sweep(&spec, &methods, &models, &banks)?;
            print_rows(&rows);
            println!("{} sweep points, {} rows", spec.values.len(), rows.len());
            let out = c.out.clone().unwrap_or_else(|| cfg.paths.results_dir.join(&name));
            write_results(&out, &rows)?;
            plot_results(&out)?;
            write_run(&out, "sweep", &cfg, json!({ "eval": cfg.eval.seed }), json!({
                "axis": spec.axis.name(), "values": spec.values, "model_source": if models.shared.is_some() { "shared" } else { "none" },
            }))?;
        }
        Command::Plot => {
            let out = c.out.clone().unwrap_or_else(|| cfg.paths.results_dir.join(&cfg.sweep.name));
            for f in plot_results(&out)? {
                println!("{}", f.display());
            }
        }
        Command::Selftest => {
            let failures = selftest::run(&mut std::io::stdout())?;
            if failures > 0 {
                bail!("{failures} self-test check(s) failed");
            }
        }
    }
    Ok(())
}
