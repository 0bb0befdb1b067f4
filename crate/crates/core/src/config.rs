//! Flat `key = value` run configuration, its content hash, and the run
//! manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Variant;
use crate::error::{Error, Result};
use crate::model::PriorKind;
use crate::train::{ScheduleSpec, TrainConfig};

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// skipped; later keys override earlier ones.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::config(format!("line {}", n + 1), format!("expected key = value, got `{line}`")));
        };
        let key = k.trim().replace('-', "_");
        if key.is_empty() {
            return Err(Error::config(format!("line {}", n + 1), "empty key"));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

/// Everything a single run needs, as read from a config file and flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub prior: Option<PriorKind>,
    pub alpha: f64,
    pub decay_a: Option<f64>,
    pub decay_k: Option<f64>,
    pub test_time_alpha: Option<f64>,
    pub no_interp: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub subset: Option<usize>,
    pub dataset: Variant,
    pub augment: bool,
    pub data_dir: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            prior: t.prior,
            alpha: t.schedule.a,
            decay_a: None,
            decay_k: None,
            test_time_alpha: None,
            no_interp: false,
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.learning_rate,
            seed: t.seed,
            subset: None,
            dataset: t.dataset,
            augment: t.augment,
            data_dir: None,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// Keys left out of the hash: where things live, not what is computed.
const LOCATION_KEYS: [&str; 2] = ["data_dir", "out"];

fn parse_num<T: std::str::FromStr>(field: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(field, format!("cannot parse `{v}`")))
}

fn parse_bool(field: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(field, format!("expected true or false, got `{v}`"))),
    }
}

fn parse_prior(v: &str) -> Result<Option<PriorKind>> {
    match v {
        "cnn" => Ok(Some(PriorKind::Cnn)),
        "mixer" => Ok(Some(PriorKind::Mixer)),
        "none" => Ok(None),
        _ => Err(Error::config("prior", format!("expected cnn, mixer or none, got `{v}`"))),
    }
}

fn prior_name(p: Option<PriorKind>) -> &'static str {
    match p {
        Some(PriorKind::Cnn) => "cnn",
        Some(PriorKind::Mixer) => "mixer",
        None => "none",
    }
}

impl RunConfig {
    /// Applies `key = value` pairs on top of `self`. Unknown keys and bad
    /// values are errors naming the key.
    pub fn apply(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (k, v) in map {
            let opt = |v: &str| v != "none" && !v.is_empty();
            match k.as_str() {
                "prior" => self.prior = parse_prior(v)?,
                "alpha" => self.alpha = parse_num(k, v)?,
                "decay_a" => self.decay_a = opt(v).then(|| parse_num(k, v)).transpose()?,
                "decay_k" => self.decay_k = opt(v).then(|| parse_num(k, v)).transpose()?,
                "test_time_alpha" => self.test_time_alpha = opt(v).then(|| parse_num(k, v)).transpose()?,
                "no_interp" => self.no_interp = parse_bool(k, v)?,
                "epochs" => self.epochs = parse_num(k, v)?,
                "batch_size" => self.batch_size = parse_num(k, v)?,
                "lr" => self.lr = parse_num(k, v)?,
                "seed" => self.seed = parse_num(k, v)?,
                "subset" => self.subset = opt(v).then(|| parse_num(k, v)).transpose()?,
                "dataset" => {
                    self.dataset = Variant::parse(v)
                        .ok_or_else(|| Error::config(k, format!("expected cifar10 or cifar100, got `{v}`")))?
                }
                "augment" => self.augment = parse_bool(k, v)?,
                "data_dir" => self.data_dir = opt(v).then(|| PathBuf::from(v)),
                "out" => self.out = PathBuf::from(v),
                _ => return Err(Error::config(k.clone(), "unknown key")),
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let mut m = BTreeMap::new();
        m.insert("prior".into(), prior_name(self.prior).into());
        m.insert("alpha".into(), self.alpha.to_string());
        m.insert("decay_a".into(), opt(self.decay_a.map(|v| v.to_string())));
        m.insert("decay_k".into(), opt(self.decay_k.map(|v| v.to_string())));
        m.insert("test_time_alpha".into(), opt(self.test_time_alpha.map(|v| v.to_string())));
        m.insert("no_interp".into(), self.no_interp.to_string());
        m.insert("epochs".into(), self.epochs.to_string());
        m.insert("batch_size".into(), self.batch_size.to_string());
        m.insert("lr".into(), self.lr.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("subset".into(), opt(self.subset.map(|v| v.to_string())));
        m.insert("dataset".into(), self.dataset.name().into());
        m.insert("augment".into(), self.augment.to_string());
        m.insert("data_dir".into(), opt(self.data_dir.as_ref().map(|p| p.display().to_string())));
        m.insert("out".into(), self.out.display().to_string());
        m
    }

    /// Sorted `key=value` lines, locations excluded.
    pub fn canonical(&self) -> String {
        self.to_map()
            .into_iter()
            .filter(|(k, _)| !LOCATION_KEYS.contains(&k.as_str()))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// SHA-256 of `"config <len>\0"` followed by [`RunConfig::canonical`], hex.
    pub fn hash(&self) -> String {
        content_hash(&self.canonical())
    }

    pub fn schedule(&self) -> Result<ScheduleSpec> {
        let chosen = [self.decay_k.is_some(), self.test_time_alpha.is_some(), self.no_interp]
            .iter()
            .filter(|&&b| b)
            .count();
        if chosen > 1 {
            return Err(Error::config(
                "decay_k",
                "decay, test-time-alpha and no-interp are mutually exclusive",
            ));
        }
        let unit = [
            ("alpha", Some(self.alpha)),
            ("decay_a", self.decay_a),
            ("test_time_alpha", self.test_time_alpha),
        ];
        for (field, v) in unit {
            if let Some(v) = v.filter(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::config(field, format!("{v} is outside [0, 1]")));
            }
        }
        if let Some(k) = self.decay_k.filter(|k| !(*k >= 0.0)) {
            return Err(Error::config("decay_k", format!("{k} must be non-negative")));
        }
        let spec = if self.no_interp {
            ScheduleSpec::none()
        } else if let Some(alpha_test) = self.test_time_alpha {
            ScheduleSpec::test_time(alpha_test)
        } else if let Some(k) = self.decay_k {
            ScheduleSpec::decay(self.decay_a.unwrap_or(self.alpha), k)
        } else {
            ScheduleSpec::constant(self.alpha)
        };
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed: self.seed,
            dataset: self.dataset,
            augment: self.augment,
            schedule: self.schedule()?,
            prior: self.prior,
        };
        cfg.validate()?;
        if let Some(n) = self.subset {
            if n < self.dataset.classes() {
                return Err(Error::config("subset", format!("{n} is smaller than the class count")));
            }
        }
        Ok(cfg)
    }
}

/// Git-style object hash: SHA-256 over `"config <len>\0<body>"`.
pub fn content_hash(body: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("config {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub out_dir: PathBuf,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            config: cfg.to_map(),
            config_hash: cfg.hash(),
            out_dir: cfg.out.clone(),
            started_unix: unix_now(),
            finished_unix: None,
        }
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        fs::create_dir_all(dir.as_ref())?;
        fs::write(dir.as_ref().join(MANIFEST_FILE), serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Claims `dir` for this run. An existing manifest blocks the run
    /// unless `force` is set.
    pub fn claim(&self, dir: impl AsRef<Path>, force: bool) -> Result<()> {
        if let (Some(old), false) = (Self::read(dir.as_ref())?, force) {
            let why = if old.config_hash == self.config_hash {
                "already holds a run with the same config hash"
            } else {
                "already holds a run with a different config"
            };
            return Err(Error::config(
                "out",
                format!("{} {why} ({}); pass --force to overwrite", dir.as_ref().display(), old.config_hash),
            ));
        }
        self.write(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_overrides() {
        let m = parse_kv("# x\nalpha = 0.5\n\nbatch-size=64 # tail\nalpha=0.25\n").unwrap();
        assert_eq!(m["alpha"], "0.25");
        assert_eq!(m["batch_size"], "64");
    }

    #[test]
    fn unknown_key_names_field() {
        let err = RunConfig::from_text("alpah = 1").unwrap_err();
        assert!(err.to_string().contains("alpah"));
    }

    #[test]
    fn hash_ignores_locations() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 3;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn hash_matches_reference_digests() {
        assert_eq!(content_hash(""), "54df00b51c36bacc85b1e4fd3e397a96515c61b990e3b42bbb4941a902efd7e0");
        assert_eq!(content_hash("seed=42\n"), "f426b76ac2f249b81a511508f9f11e88091972862f0b5fb6086314ae262287ee");
    }
}
