use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use biasblend::config::{parse_kv, RunConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "biasblend", version, about = "Train plain MLPs with weights blended toward structured priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one MLP/prior pair and write metrics, summary and checkpoints.
    Train(RunArgs),
    /// Run one training per (value, seed) as child processes and aggregate.
    Sweep(SweepArgs),
    /// Equivalence, count and gradient checks; needs no dataset.
    Selftest(SelftestArgs),
    /// Budgeted MLP-1 / MLP-2 baselines against their interpolated variants.
    BudgetCompare(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PriorArg {
    Cnn,
    Mixer,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Cifar10,
    Cifar100,
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Flat `key = value` file; flags given here take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub prior: Option<PriorArg>,
    /// Constant interpolation weight.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Starting weight of the polynomial decay.
    #[arg(long, allow_negative_numbers = true)]
    pub decay_a: Option<f64>,
    /// Decay exponent; selects the decaying schedule.
    #[arg(long, allow_negative_numbers = true)]
    pub decay_k: Option<f64>,
    /// Blend only once after training, with this weight.
    #[arg(long, allow_negative_numbers = true)]
    pub test_time_alpha: Option<f64>,
    /// Train the pair without touching the MLP weights.
    #[arg(long)]
    pub no_interp: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Class-balanced training subset of this size.
    #[arg(long)]
    pub subset: Option<usize>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetArg>,
    /// Directory holding the extracted CIFAR binary archives.
    #[arg(long, env = "BIASBLEND_DATA")]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_augment: bool,
    /// Overwrite a run directory that already has a manifest.
    #[arg(long)]
    pub force: bool,
}

#[derive(Args, Clone, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated constant weights.
    #[arg(long, value_delimiter = ',', conflicts_with = "decay_ks", required_unless_present = "decay_ks")]
    pub alphas: Vec<f64>,
    /// Comma-separated decay exponents, all starting from `--decay-a`.
    #[arg(long, value_delimiter = ',')]
    pub decay_ks: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Child processes running at once.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Clone, Debug)]
pub struct SelftestArgs {
    #[arg(long, value_enum)]
    pub inject_fault: Option<FaultArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    Conv,
}

impl RunArgs {
    /// Flag values as config keys, only for flags that were given.
    fn overrides(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                m.insert(k.to_string(), v);
            }
        };
        put(
            "prior",
            self.prior.map(|p| match p {
                PriorArg::Cnn => "cnn".into(),
                PriorArg::Mixer => "mixer".into(),
                PriorArg::None => "none".into(),
            }),
        );
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("decay_a", self.decay_a.map(|v| v.to_string()));
        put("decay_k", self.decay_k.map(|v| v.to_string()));
        put("test_time_alpha", self.test_time_alpha.map(|v| v.to_string()));
        put("no_interp", self.no_interp.then(|| "true".into()));
        put("epochs", self.epochs.map(|v| v.to_string()));
        put("batch_size", self.batch_size.map(|v| v.to_string()));
        put("lr", self.lr.map(|v| v.to_string()));
        put("seed", self.seed.map(|v| v.to_string()));
        put("subset", self.subset.map(|v| v.to_string()));
        put(
            "dataset",
            self.dataset.map(|d| match d {
                DatasetArg::Cifar10 => "cifar10".into(),
                DatasetArg::Cifar100 => "cifar100".into(),
            }),
        );
        put("augment", self.no_augment.then(|| "false".into()));
        put("data_dir", self.data_dir.as_ref().map(|p| p.display().to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        m
    }

    /// Defaults, then the config file, then the flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply(&parse_kv(&text)?)?;
        }
        cfg.apply(&self.overrides())?;
        Ok(cfg)
    }
}
