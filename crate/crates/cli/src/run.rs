use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use biasblend::config::{unix_now, RunConfig, RunManifest};
use biasblend::data::{load_cifar, subset, ChannelStats, Dataset, Split};
use biasblend::model::save_checkpoint;
use biasblend::train::{pair_specs, run_pair, write_metrics_csv, MLP_NAME, PRIOR_NAME};
use biasblend::Error;
use serde::{Deserialize, Serialize};

pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Loads both splits, normalizes with full training-split statistics and
/// draws the optional class-balanced subset.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let root = cfg.data_dir.clone().ok_or_else(|| Error::MissingData {
        path: "<unset: pass --data-dir or set BIASBLEND_DATA>".into(),
        record_size: cfg.dataset.record_size(),
    })?;
    let train = load_cifar(&root, cfg.dataset, Split::Train)?;
    let test = load_cifar(&root, cfg.dataset, Split::Test)?;
    let stats = ChannelStats::compute(&train);
    let train = match cfg.subset {
        Some(n) => subset(&train, n, cfg.seed)?,
        None => train,
    };
    Ok((train.normalized(&stats), test.normalized(&stats)))
}

/// Fails early with the loader's error when a split file is absent.
pub fn require_data(cfg: &RunConfig) -> Result<()> {
    let record_size = cfg.dataset.record_size();
    let root = cfg.data_dir.clone().ok_or_else(|| Error::MissingData {
        path: "<unset: pass --data-dir or set BIASBLEND_DATA>".into(),
        record_size,
    })?;
    for split in [Split::Train, Split::Test] {
        for rel in cfg.dataset.files(split) {
            let path = root.join(rel);
            if !path.is_file() {
                return Err(Error::MissingData { path, record_size }.into());
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub epochs: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub mlp_params: usize,
    pub prior_params: Option<usize>,
    pub final_mlp_top1: f64,
    pub final_prior_top1: Option<f64>,
    pub test_time_top1: Option<f64>,
    pub seconds: f64,
}

impl Summary {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY_FILE);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<()> {
    let train_cfg = cfg.train_config()?;
    let (train, test) = prepare_data(cfg)?;
    let out = cfg.out.clone();
    let mut manifest = RunManifest::new(cfg);
    manifest.claim(&out, force)?;
    eprintln!("run {} -> {}", &manifest.config_hash[..12], out.display());

    let start = Instant::now();
    let (mlp_spec, prior_spec) = pair_specs(cfg.prior, cfg.dataset.classes())?;
    let result = run_pair(&train_cfg, &mlp_spec, prior_spec.as_ref(), &train, &test, &mut |r| {
        eprintln!(
            "epoch {:>3}/{} alpha {:.4} elapsed {:.1}s",
            r.epoch,
            train_cfg.epochs,
            r.alpha,
            start.elapsed().as_secs_f64()
        );
        Ok(())
    })?;

    write_metrics_csv(out.join(METRICS_FILE), &result.records)?;
    let ckpt = out.join("checkpoints");
    fs::create_dir_all(&ckpt)?;
    save_checkpoint(ckpt.join("mlp.ckpt"), &result.mlp, cfg.seed, cfg.epochs)?;
    if let Some(p) = &result.prior {
        save_checkpoint(ckpt.join("prior.ckpt"), p, cfg.seed, cfg.epochs)?;
    }
    let summary = Summary {
        config_hash: manifest.config_hash.clone(),
        epochs: cfg.epochs,
        train_size: train.len(),
        test_size: test.len(),
        mlp_params: result.mlp.param_count(),
        prior_params: result.prior.as_ref().map(|p| p.param_count()),
        final_mlp_top1: result.final_top1(MLP_NAME).unwrap_or(f64::NAN),
        final_prior_top1: result.final_top1(PRIOR_NAME),
        test_time_top1: result.test_time_top1,
        seconds: start.elapsed().as_secs_f64(),
    };
    fs::write(out.join(SUMMARY_FILE), serde_json::to_vec_pretty(&summary)?)?;
    manifest.finished_unix = Some(unix_now());
    manifest.write(&out)?;

    println!("mlp top-1 {:.2}%", summary.final_mlp_top1);
    if let Some(p) = summary.final_prior_top1 {
        println!("prior top-1 {p:.2}%");
    }
    if let Some(t) = summary.test_time_top1 {
        println!("test-time blend top-1 {t:.2}%");
    }
    Ok(())
}
