use std::collections::VecDeque;
use std::fs::{self, File};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use biasblend::config::RunConfig;
use biasblend::train::{aggregate, write_aggregate_csv, SweepKind};

use crate::args::SweepArgs;
use crate::run::{require_data, Summary};

pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const POINTS_FILE: &str = "points.csv";

struct Point {
    value: f64,
    seed: u64,
    dir: PathBuf,
}

/// Outcome of a sweep whose points all ran; `failed` counts points whose
/// child exited nonzero or left no summary.
pub struct SweepOutcome {
    pub failed: usize,
    pub total: usize,
}

fn point_dir(kind: SweepKind, value: f64, seed: u64) -> String {
    match kind {
        SweepKind::Alpha => format!("alpha-{value}-seed-{seed}"),
        SweepKind::DecayK => format!("k-{value}-seed-{seed}"),
    }
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepOutcome> {
    let base = args.run.resolve()?;
    let (kind, values) = if args.decay_ks.is_empty() {
        (SweepKind::Alpha, &args.alphas)
    } else {
        (SweepKind::DecayK, &args.decay_ks)
    };
    if args.jobs == 0 {
        bail!("configuration error in `jobs`: must be at least 1");
    }
    // Validate every point before spawning anything.
    for &v in values {
        let mut probe = base.clone();
        match kind {
            SweepKind::Alpha => probe.alpha = v,
            SweepKind::DecayK => {
                probe.decay_k = Some(v);
                probe.decay_a.get_or_insert(probe.alpha);
            }
        }
        probe.train_config()?;
    }
    require_data(&base)?;

    let root = base.out.clone();
    fs::create_dir_all(&root)?;
    let shared = root.join("sweep.conf");
    let body: String = base.to_map().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    fs::write(&shared, body)?;

    let points: Vec<Point> = values
        .iter()
        .flat_map(|&value| args.seeds.iter().map(move |&seed| (value, seed)))
        .map(|(value, seed)| Point {
            value,
            seed,
            dir: root.join(point_dir(kind, value, seed)),
        })
        .collect();
    let exe = std::env::current_exe().context("locating the biasblend executable")?;
    let queue = Mutex::new(points.iter().collect::<VecDeque<_>>());
    let failures = Mutex::new(Vec::new());

    std::thread::scope(|s| {
        for _ in 0..args.jobs.min(points.len()) {
            s.spawn(|| loop {
                let Some(p) = queue.lock().unwrap().pop_front() else { break };
                let status = run_child(&exe, &shared, kind, &base, p, args.run.force);
                match status {
                    Ok(true) => eprintln!("done {}", p.dir.display()),
                    Ok(false) => {
                        eprintln!("FAILED {} (see train.log)", p.dir.display());
                        failures.lock().unwrap().push(p.dir.clone());
                    }
                    Err(e) => {
                        eprintln!("FAILED {}: {e:#}", p.dir.display());
                        failures.lock().unwrap().push(p.dir.clone());
                    }
                }
            });
        }
    });

    let failures = failures.into_inner().unwrap();
    let mut failed = failures.len();
    let mut rows = Vec::new();
    let mut csv = String::from("value,seed,top1\n");
    for p in points.iter().filter(|p| !failures.contains(&p.dir)) {
        match Summary::read(&p.dir) {
            Ok(s) => {
                rows.push((p.value, s.final_mlp_top1));
                csv.push_str(&format!("{},{},{}\n", p.value, p.seed, s.final_mlp_top1));
            }
            Err(e) => {
                eprintln!("FAILED {}: {e:#}", p.dir.display());
                failed += 1;
            }
        }
    }
    fs::write(root.join(POINTS_FILE), csv)?;
    let agg = aggregate(&rows);
    write_aggregate_csv(root.join(AGGREGATE_FILE), &agg)?;
    println!("alpha_or_k,mean,std");
    for a in &agg {
        println!("{},{:.2},{:.2}", a.alpha_or_k, a.mean, a.std);
    }
    Ok(SweepOutcome {
        failed,
        total: points.len(),
    })
}

fn run_child(
    exe: &PathBuf,
    shared: &PathBuf,
    kind: SweepKind,
    base: &RunConfig,
    p: &Point,
    force: bool,
) -> Result<bool> {
    fs::create_dir_all(&p.dir)?;
    let log = File::create(p.dir.join("train.log"))?;
    let mut cmd = Command::new(exe);
    cmd.arg("train")
        .arg("--config")
        .arg(shared)
        .arg("--seed")
        .arg(p.seed.to_string())
        .arg("--out")
        .arg(&p.dir);
    match kind {
        SweepKind::Alpha => {
            cmd.arg("--alpha").arg(p.value.to_string());
        }
        SweepKind::DecayK => {
            cmd.arg("--decay-k")
                .arg(p.value.to_string())
                .arg("--decay-a")
                .arg(base.decay_a.unwrap_or(base.alpha).to_string());
        }
    }
    if force {
        cmd.arg("--force");
    }
    let status = cmd
        .stdout(Stdio::from(log.try_clone()?))
        .stderr(Stdio::from(log))
        .status()
        .with_context(|| format!("spawning {}", exe.display()))?;
    Ok(status.success())
}
