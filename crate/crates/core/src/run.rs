//! Command implementations behind the `fastadv` binary.
//!
//! Every command writes under one output directory with fixed names:
//! `config.resolved`, `records.csv`, `records.jsonl`, `timings.csv`,
//! `checkpoints/` and `reports/`.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::checkpoint::{self, hex_digest, Manifest};
use crate::config::ExperimentConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, landscape_grid, strength_sweep, EvalReport, SweepPoint};
use crate::model::{ModelParams, ModelSpec};
use crate::records::RecordWriter;
use crate::tensor::Real;
use crate::trainer::{CoStatus, Precision, Trainer};

/// Environment variable that relocates every relative `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "FASTADV_OUTPUT_ROOT";
pub const RESOLVED_CONFIG: &str = "config.resolved";
pub const CHECKPOINTS_DIR: &str = "checkpoints";
pub const REPORTS_DIR: &str = "reports";

/// `output_dir` joined onto the override root when it is set and the path is relative.
pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if config.output_dir.is_relative() => PathBuf::from(root).join(&config.output_dir),
        _ => config.output_dir.clone(),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the dataset and splits off the held-out tail.
pub fn load_splits(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let data = config.dataset.load()?;
    let holdout = config.train.co_monitor.holdout;
    if holdout == 0 || holdout >= data.len() {
        return Err(Error::Config {
            line: 0,
            message: format!("[dataset] holdout must be in 1..{}, got {holdout}", data.len()),
        });
    }
    Ok(data.split(holdout))
}

pub fn model_spec(config: &ExperimentConfig, data: &Dataset) -> Result<ModelSpec> {
    ModelSpec::new(data.dim(), config.hidden.clone(), data.classes())
}

/// Outcome of the overfitting monitor, written to `reports/co_report.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoReport {
    pub status: CoStatus,
    pub collapsed: bool,
    pub eval_attack: String,
    pub collapse_fraction: f64,
    pub peak_robust_acc: f64,
    pub peak_epoch: usize,
    pub final_robust_acc: f64,
    pub robust_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub epochs: usize,
    pub co: CoReport,
}

pub fn cmd_train(config_path: &Path) -> Result<TrainSummary> {
    let config = ExperimentConfig::load(config_path)?;
    train_with(&config)
}

/// Runs training for an already parsed configuration.
pub fn train_with(config: &ExperimentConfig) -> Result<TrainSummary> {
    match config.train.precision {
        Precision::F64 => train_impl::<f64>(config),
        Precision::F32 => train_impl::<f32>(config),
    }
}

fn train_impl<T: Real>(config: &ExperimentConfig) -> Result<TrainSummary> {
    let (train, holdout) = load_splits(config)?;
    let spec = model_spec(config, &train)?;
    let out = resolve_output_dir(config);
    let ckpt_dir = out.join(CHECKPOINTS_DIR);
    let reports = out.join(REPORTS_DIR);
    create_dir(&ckpt_dir)?;
    create_dir(&reports)?;
    let resolved = config.to_text();
    write(&out.join(RESOLVED_CONFIG), &resolved)?;
    let config_hash = hex_digest(resolved.as_bytes());

    let mut records = RecordWriter::create(&out)?;
    let mut trainer = Trainer::<T>::new(config.train.clone(), &spec, train.len())?;
    let averaged = config.train.wa.is_on();
    info!("training {spec} on {} samples ({} held out) into {}", train.len(), holdout.len(), out.display());

    trainer.run(&train, &holdout, |t, record, events| {
        records.append(record)?;
        info!(
            "epoch {} lr {:.4} train robust {:.3} eval clean {:.3} {} {:.3}",
            record.epoch, record.lr, record.train_robust_acc, record.eval_clean_acc, record.eval_attack, record.eval_robust_acc
        );
        let mut names = Vec::new();
        if events.lr_milestone {
            names.push(format!("epoch_{:04}", record.epoch));
        }
        if events.best_robust {
            names.push("best".to_string());
        }
        if events.last {
            names.push("last".to_string());
        }
        for name in names {
            let manifest = Manifest {
                seed: config.train.seed,
                epoch: record.epoch,
                config_hash: config_hash.clone(),
                averaged,
                spec: spec.clone(),
                precision: T::NAME.to_string(),
            };
            checkpoint::save(t.eval_params(), &ckpt_dir.join(format!("{name}.ckpt")))?;
            checkpoint::save_manifest(&manifest, &ckpt_dir.join(format!("{name}.json")))?;
            if averaged && events.last {
                checkpoint::save(t.params(), &ckpt_dir.join("last_live.ckpt"))?;
                checkpoint::save_manifest(
                    &Manifest { averaged: false, ..manifest },
                    &ckpt_dir.join("last_live.json"),
                )?;
            }
        }
        Ok(())
    })?;

    let history: Vec<f64> = trainer.history().iter().map(|r| r.eval_robust_acc).collect();
    let (peak_epoch, peak) = history
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &r)| if r > best.1 { (i + 1, r) } else { best });
    let status = trainer.co_status();
    let co = CoReport {
        status,
        collapsed: matches!(status, CoStatus::Collapsed { .. }),
        eval_attack: config.train.co_monitor.eval_attack.label(),
        collapse_fraction: config.train.co_monitor.collapse_fraction,
        peak_robust_acc: peak.max(0.0),
        peak_epoch,
        final_robust_acc: history.last().copied().unwrap_or(0.0),
        robust_history: history,
    };
    write(&reports.join("co_report.json"), &serde_json::to_string_pretty(&co)?)?;
    if co.collapsed {
        log::warn!("catastrophic overfitting detected: {:?}", co.status);
    }
    Ok(TrainSummary { output_dir: out, epochs: trainer.epochs_done(), co })
}

/// Held-out evaluation samples: the holdout split capped at `eval.samples`.
fn eval_samples(config: &ExperimentConfig) -> Result<Dataset> {
    let (_, holdout) = load_splits(config)?;
    Ok(holdout.slice(0, config.eval.samples.min(holdout.len())))
}

fn load_for<T: Real>(checkpoint_path: &Path, config: &ExperimentConfig, data: &Dataset) -> Result<ModelParams<T>> {
    checkpoint::load_expecting::<T>(checkpoint_path, &model_spec(config, data)?)
}

fn reports_dir(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = resolve_output_dir(config).join(REPORTS_DIR);
    create_dir(&dir)?;
    Ok(dir)
}

/// Evaluates a checkpoint and writes `reports/eval.json`.
pub fn cmd_eval(checkpoint_path: &Path, config_path: &Path) -> Result<(EvalReport, PathBuf)> {
    let config = ExperimentConfig::load(config_path)?;
    let data = eval_samples(&config)?;
    let report = match config.train.precision {
        Precision::F64 => {
            let p = load_for::<f64>(checkpoint_path, &config, &data)?;
            evaluate(&p, &data, &config.eval.attacks, config.eval.seed, config.train.exec)?
        }
        Precision::F32 => {
            let p = load_for::<f32>(checkpoint_path, &config, &data)?;
            evaluate(&p, &data, &config.eval.attacks, config.eval.seed, config.train.exec)?
        }
    };
    let path = reports_dir(&config)?.join("eval.json");
    write(&path, &report.to_json()?)?;
    Ok((report, path))
}

/// Writes the loss-surface grid to `reports/landscape.csv`.
pub fn cmd_landscape(checkpoint_path: &Path, config_path: &Path) -> Result<PathBuf> {
    let config = ExperimentConfig::load(config_path)?;
    let data = eval_samples(&config)?;
    let (e, n) = (&config.eval, config.eval.landscape_grid);
    let grid = match config.train.precision {
        Precision::F64 => {
            let p = load_for::<f64>(checkpoint_path, &config, &data)?;
            landscape_grid(&p, &data, e.landscape_eta, n, n, e.seed, config.train.exec)?
        }
        Precision::F32 => {
            let p = load_for::<f32>(checkpoint_path, &config, &data)?;
            landscape_grid(&p, &data, e.landscape_eta, n, n, e.seed, config.train.exec)?
        }
    };
    let path = reports_dir(&config)?.join("landscape.csv");
    write(&path, &grid.to_csv())?;
    Ok(path)
}

pub fn sweep_csv(points: &[SweepPoint], attack: &str) -> String {
    let mut out = format!("# attack,{attack}\nepsilon,robust_acc\n");
    for p in points {
        out.push_str(&format!("{:e},{:e}\n", p.epsilon, p.robust_acc));
    }
    out
}

/// Writes robust accuracy against ε to `reports/sweep.csv`.
pub fn cmd_sweep(checkpoint_path: &Path, config_path: &Path) -> Result<PathBuf> {
    let config = ExperimentConfig::load(config_path)?;
    let data = eval_samples(&config)?;
    let e = &config.eval;
    let points = match config.train.precision {
        Precision::F64 => {
            let p = load_for::<f64>(checkpoint_path, &config, &data)?;
            strength_sweep(&p, &data, &e.sweep_eps, &e.sweep_template, e.seed, config.train.exec)?
        }
        Precision::F32 => {
            let p = load_for::<f32>(checkpoint_path, &config, &data)?;
            strength_sweep(&p, &data, &e.sweep_eps, &e.sweep_template, e.seed, config.train.exec)?
        }
    };
    let path = reports_dir(&config)?.join("sweep.csv");
    write(&path, &sweep_csv(&points, &e.sweep_template.label()))?;
    Ok(path)
}
