use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use cpl_core::net::save_checkpoint;
use cpl_core::trainer::{
    affine_table, evaluate, memory_account, BYTES_PER_NODE, prepare_problem, time_grid, EvalReport, MetricsRecord, Trainer,
};
use log::info;

use crate::config::{Resolved, RunFile};

pub const METRICS_HEADER: &str = "epoch,loss,error_u,error_c1,error_c2,tape_nodes,seconds";
pub const SUMMARY_HEADER: &str =
    "problem,method,estimator,seed,epochs,final_loss,error_u,error_c1,error_c2,conservation_error,tape_nodes,memory_bytes,seconds";

/// End-of-run numbers, as written to summary.csv.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub final_loss: Option<f64>,
    pub error_u: Option<f64>,
    pub error_c1: f64,
    pub error_c2: f64,
    pub conservation_error: f64,
    pub tape_nodes: usize,
    pub memory_bytes: usize,
    pub seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn metrics_line(m: &MetricsRecord, record_time: bool) -> String {
    let secs = if record_time { m.seconds.to_string() } else { String::new() };
    format!(
        "{},{},{},{},{},{},{}",
        m.epoch,
        m.loss,
        opt(m.error_u),
        m.error_c1,
        m.error_c2,
        m.tape_nodes,
        secs
    )
}

impl Summary {
    pub fn csv_row(&self, r: &Resolved) -> String {
        let t = &r.train;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            t.problem,
            t.method,
            t.estimator,
            t.seed,
            t.epochs,
            opt(self.final_loss),
            opt(self.error_u),
            self.error_c1,
            self.error_c2,
            self.conservation_error,
            self.tape_nodes,
            self.memory_bytes,
            self.seconds
        )
    }

    /// Parse the data row of a summary.csv.
    pub fn parse_row(line: &str) -> anyhow::Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        anyhow::ensure!(f.len() == 13, "summary row has {} fields", f.len());
        let num = |s: &str| -> anyhow::Result<f64> { s.parse::<f64>().with_context(|| format!("bad number {s:?}")) };
        let optn = |s: &str| -> anyhow::Result<Option<f64>> { if s.is_empty() { Ok(None) } else { num(s).map(Some) } };
        Ok(Self {
            final_loss: optn(f[5])?,
            error_u: optn(f[6])?,
            error_c1: num(f[7])?,
            error_c2: num(f[8])?,
            conservation_error: num(f[9])?,
            tape_nodes: f[10].parse()?,
            memory_bytes: f[11].parse()?,
            seconds: num(f[12])?,
        })
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let row = text.lines().nth(1).with_context(|| format!("{} has no data row", path.display()))?;
        Self::parse_row(row)
    }
}

fn record(epoch: usize, loss: f64, report: &EvalReport<f64>, tape_nodes: usize, seconds: f64) -> MetricsRecord {
    MetricsRecord {
        epoch,
        loss,
        error_u: report.error_u,
        error_c1: report.error_c1,
        error_c2: report.error_c2,
        tape_nodes,
        seconds,
    }
}

/// Train (or, with `train == false`, only evaluate the initialised
/// network) and write the run artefacts into `out`.
pub fn execute(file: &RunFile, r: &Resolved, out: &Path, train: bool) -> anyhow::Result<Summary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.resolved"), file.to_toml()?)?;

    let start = Instant::now();
    let (problem, reference) = prepare_problem::<f64>(&r.train, r.reference.as_ref())?;
    let mut trainer = Trainer::new(r.train.clone(), problem)?;
    let projector = trainer.projector()?;

    let mut metrics = BufWriter::new(File::create(out.join("metrics.csv"))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let mut timing = BufWriter::new(File::create(out.join("timing.csv"))?);
    writeln!(timing, "epoch,step_seconds,tape_nodes,memory_bytes")?;

    let mut final_loss = None;
    let mut max_nodes = 0usize;
    let mut max_bytes = 0usize;
    let epochs = if train { r.train.epochs } else { 0 };
    for e in 0..epochs {
        let t0 = Instant::now();
        let out_step = trainer.step().with_context(|| format!("epoch {}", e + 1))?;
        let dt = t0.elapsed().as_secs_f64();
        let nodes = out_step.diag.max_tape_nodes();
        let bytes = memory_account(&out_step.diag) * BYTES_PER_NODE;
        max_nodes = max_nodes.max(nodes);
        max_bytes = max_bytes.max(bytes);
        final_loss = Some(out_step.loss);
        writeln!(timing, "{},{dt},{nodes},{bytes}", e + 1)?;
        if (e + 1) % r.eval_every == 0 {
            let rep = evaluate(&trainer.params, &projector, &trainer.problem, reference.as_ref(), &r.eval)?;
            let m = record(e + 1, out_step.loss, &rep, nodes, start.elapsed().as_secs_f64());
            writeln!(metrics, "{}", metrics_line(&m, r.record_time))?;
            metrics.flush()?;
            info!(
                "epoch {} loss {:.4e} error_c1 {:.3e} error_c2 {:.3e}{}",
                e + 1,
                out_step.loss,
                rep.error_c1,
                rep.error_c2,
                rep.error_u.map(|u| format!(" error_u {u:.3e}")).unwrap_or_default()
            );
        }
    }
    metrics.flush()?;
    timing.flush()?;

    if !train {
        let data = trainer.sample()?;
        let probe = cpl_core::trainer::step(&trainer.params, &trainer.problem, &trainer.config, &data)?;
        max_nodes = probe.diag.max_tape_nodes();
        max_bytes = memory_account(&probe.diag) * BYTES_PER_NODE;
    }

    let report = evaluate(&trainer.params, &projector, &trainer.problem, reference.as_ref(), &r.eval)?;
    save_checkpoint(&trainer.params, &out.join("model.ckpt"))?;

    let times = time_grid(trainer.problem.domain.t_end(), r.eval.time_points);
    let table = affine_table(&projector, &trainer.params, &trainer.problem, &times)?;
    let mut aff = BufWriter::new(File::create(out.join("affine.csv"))?);
    writeln!(aff, "t,alpha,beta")?;
    for a in &table {
        writeln!(aff, "{},{},{}", a.t, a.alpha, a.beta)?;
    }
    aff.flush()?;

    let summary = Summary {
        final_loss,
        error_u: report.error_u,
        error_c1: report.error_c1,
        error_c2: report.error_c2,
        conservation_error: report.conservation_error(),
        tape_nodes: max_nodes,
        memory_bytes: max_bytes,
        seconds: start.elapsed().as_secs_f64(),
    };
    fs::write(out.join("summary.csv"), format!("{SUMMARY_HEADER}\n{}\n", summary.csv_row(r)))?;
    info!(
        "finished {}: error_c1 {:.3e} error_c2 {:.3e} conservation {:.3e}",
        out.display(),
        summary.error_c1,
        summary.error_c2,
        summary.conservation_error
    );
    Ok(summary)
}
