use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use anyhow::{bail, Context};
use clap::ValueEnum;
use log::{info, warn};

use crate::config::{RunFile, OUT_DIR_ENV};
use crate::run::{execute, Summary};

pub const SWEEP_HEADER: &str =
    "axis,value,status,error_c1,error_c2,conservation_error,tape_nodes,memory_bytes,seconds,note";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Axis {
    Dimension,
    Batch,
    CloudSize,
    SubsetSize,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Dimension => "dimension",
            Axis::Batch => "batch",
            Axis::CloudSize => "cloud_size",
            Axis::SubsetSize => "subset_size",
        }
    }

    fn apply(self, f: &mut RunFile, v: usize) {
        match self {
            Axis::Dimension => f.run.dim = v,
            Axis::Batch => f.train.batch = v,
            Axis::CloudSize => f.train.cloud = v,
            Axis::SubsetSize => {
                f.train.subset_i = Some(v);
                f.train.subset_j = Some(v);
            }
        }
    }
}

/// Outcome of one sweep point.
#[derive(Debug, Clone)]
pub enum Outcome {
    Done(Summary),
    Refused(String),
    ConfigError(String),
    Failed(String),
}

fn clean(s: &str) -> String {
    s.replace([',', '\n', '\r'], ";")
}

fn row(axis: Axis, value: usize, o: &Outcome) -> String {
    match o {
        Outcome::Done(s) => format!(
            "{},{value},ok,{},{},{},{},{},{},",
            axis.name(),
            s.error_c1,
            s.error_c2,
            s.conservation_error,
            s.tape_nodes,
            s.memory_bytes,
            s.seconds
        ),
        Outcome::Refused(m) => format!("{},{value},refused,,,,,,,{}", axis.name(), clean(m)),
        Outcome::ConfigError(m) => format!("{},{value},config_error,,,,,,,{}", axis.name(), clean(m)),
        Outcome::Failed(m) => format!("{},{value},failed,,,,,,,{}", axis.name(), clean(m)),
    }
}

fn classify(err: &anyhow::Error) -> Outcome {
    let msg = format!("{err:#}");
    match err.chain().find_map(|e| e.downcast_ref::<cpl_core::Error>()) {
        Some(cpl_core::Error::Refused(_)) => Outcome::Refused(msg),
        Some(e) if e.is_config() => Outcome::ConfigError(msg),
        Some(_) => Outcome::Failed(msg),
        None => Outcome::ConfigError(msg),
    }
}

fn run_in_process(file: &RunFile, dir: &Path, train: bool) -> Outcome {
    let res = file.resolve().and_then(|r| execute(file, &r, dir, train));
    match res {
        Ok(s) => Outcome::Done(s),
        Err(e) => classify(&e),
    }
}

fn spawn_child(file: &RunFile, dir: &Path, train: bool) -> anyhow::Result<Child> {
    fs::create_dir_all(dir)?;
    let cfg = dir.join("input.toml");
    fs::write(&cfg, file.to_toml()?)?;
    let exe = std::env::current_exe().context("locating the cpl executable")?;
    let mut cmd = Command::new(exe);
    cmd.arg("train").arg("--config").arg(&cfg).arg("--out").arg(dir);
    if !train {
        cmd.arg("--eval-only");
    }
    let log = File::create(dir.join("stderr.log"))?;
    cmd.env_remove(OUT_DIR_ENV).stdout(Stdio::null()).stderr(Stdio::from(log));
    Ok(cmd.spawn()?)
}

fn collect_child(mut child: Child, dir: &Path) -> Outcome {
    let status = match child.wait() {
        Ok(s) => s,
        Err(e) => return Outcome::Failed(e.to_string()),
    };
    let stderr = fs::read_to_string(dir.join("stderr.log")).unwrap_or_default();
    let last = stderr.lines().rev().find(|l| l.starts_with("error")).unwrap_or("").to_string();
    match status.code() {
        Some(0) => match Summary::read(&dir.join("summary.csv")) {
            Ok(s) => Outcome::Done(s),
            Err(e) => Outcome::Failed(format!("{e:#}")),
        },
        Some(2) if last.contains("refused") => Outcome::Refused(last),
        Some(2) => Outcome::ConfigError(last),
        _ => Outcome::Failed(last),
    }
}

/// Run one training (or evaluation) per value and write `sweep.csv`.
/// With `parallel > 1` the points run as child `cpl train` processes,
/// at most `parallel` at a time.
pub fn sweep(
    base: &RunFile,
    axis: Axis,
    values: &[usize],
    out: &Path,
    parallel: usize,
    train: bool,
) -> anyhow::Result<Vec<(usize, Outcome)>> {
    if values.is_empty() {
        bail!(cpl_core::Error::Config("sweep needs at least one value".into()));
    }
    base.resolve()?;
    fs::create_dir_all(out)?;
    let jobs: Vec<(usize, RunFile, PathBuf)> = values
        .iter()
        .map(|&v| {
            let mut f = base.clone();
            axis.apply(&mut f, v);
            let dir = out.join(format!("{}_{v}", axis.name()));
            f.run.out_dir = Some(dir.display().to_string());
            (v, f, dir)
        })
        .collect();

    let mut results = Vec::with_capacity(jobs.len());
    if parallel <= 1 {
        for (v, f, dir) in &jobs {
            info!("sweep {} = {v}", axis.name());
            results.push((*v, run_in_process(f, dir, train)));
        }
    } else {
        for chunk in jobs.chunks(parallel) {
            let mut running = Vec::new();
            for (v, f, dir) in chunk {
                // Invalid configs are classified here rather than in a child.
                match f.resolve() {
                    Err(e) => running.push((*v, dir.clone(), Err(classify(&e)))),
                    Ok(_) => running.push((*v, dir.clone(), spawn_child(f, dir, train).map_err(|e| classify(&e)))),
                }
            }
            for (v, dir, child) in running {
                let o = match child {
                    Ok(c) => collect_child(c, &dir),
                    Err(o) => o,
                };
                results.push((v, o));
            }
        }
    }

    let mut csv = File::create(out.join("sweep.csv"))?;
    writeln!(csv, "{SWEEP_HEADER}")?;
    for (v, o) in &results {
        if !matches!(o, Outcome::Done(_)) {
            warn!("{} = {v}: {}", axis.name(), row(axis, *v, o));
        }
        writeln!(csv, "{}", row(axis, *v, o))?;
    }
    Ok(results)
}
