use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use cpl_core::pde::FpSplit;
use cpl_core::trainer::{EvalConfig, Estimator, Method, ProjCloud, ProjMode, ReferenceSettings, TrainConfig};
use serde::{Deserialize, Serialize};

pub const OUT_DIR_ENV: &str = "CPL_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "runs";

/// Contents of a run configuration file. Every field is optional in the
/// file; missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    pub run: RunSection,
    pub train: TrainSection,
    pub reference: ReferenceSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub problem: String,
    pub dim: usize,
    pub fp_split: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Evaluate and write a metrics row every this many epochs.
    pub eval_every: usize,
    /// Fill the `seconds` column of metrics.csv. Off by default so that
    /// repeated runs produce identical files.
    pub record_time: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            problem: t.problem,
            dim: t.dim,
            fp_split: split_name(t.fp_split).into(),
            out_dir: None,
            eval_every: 100,
            record_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: String,
    pub estimator: String,
    pub epochs: usize,
    pub lr0: f64,
    pub batch: usize,
    pub cloud: usize,
    pub frozen_cloud: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_i: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subset_j: Option<usize>,
    pub n_t: usize,
    pub lambda: f64,
    pub ic_points: usize,
    pub bc_points: usize,
    pub ic_weight: f64,
    pub bc_weight: f64,
    pub seed: u64,
    pub width: usize,
    pub hidden_layers: usize,
    pub eps: f64,
    pub proj_mode: String,
    pub proj_cloud: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            method: t.method.to_string(),
            estimator: t.estimator.to_string(),
            epochs: t.epochs,
            lr0: t.lr0,
            batch: t.batch,
            cloud: t.cloud,
            frozen_cloud: t.frozen_cloud,
            subset_i: t.subset_i,
            subset_j: t.subset_j,
            n_t: t.n_t,
            lambda: t.lambda,
            ic_points: t.ic_points,
            bc_points: t.bc_points,
            ic_weight: t.ic_weight,
            bc_weight: t.bc_weight,
            seed: t.seed,
            width: t.width,
            hidden_layers: t.hidden_layers,
            eps: t.eps,
            proj_mode: t.proj_mode.to_string(),
            proj_cloud: t.proj_cloud.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub time_points: usize,
    pub heldout_points: usize,
    pub heldout_skip: u64,
    pub stamp_stride: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            time_points: e.time_points,
            heldout_points: e.heldout_points,
            heldout_skip: e.heldout_skip,
            stamp_stride: e.stamp_stride,
        }
    }
}

/// Command-line overrides; they win over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides CPL_OUT_DIR and the file)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// pairwise or row_sum
    #[arg(long)]
    pub fp_split: Option<String>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub record_time: bool,
    /// vanilla, soft, discrete_proj or sdifp
    #[arg(long)]
    pub method: Option<String>,
    /// full, ds_uge or soo
    #[arg(long)]
    pub estimator: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Residual points per time slice (accepts 2^k and 1e4 forms)
    #[arg(long, value_parser = parse_count)]
    pub batch: Option<usize>,
    /// Detached cloud size M
    #[arg(long, value_parser = parse_count)]
    pub cloud: Option<usize>,
    #[arg(long)]
    pub frozen_cloud: bool,
    #[arg(long)]
    pub subset_i: Option<usize>,
    #[arg(long)]
    pub subset_j: Option<usize>,
    #[arg(long)]
    pub n_t: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub ic_points: Option<usize>,
    #[arg(long)]
    pub bc_points: Option<usize>,
    #[arg(long)]
    pub ic_weight: Option<f64>,
    #[arg(long)]
    pub bc_weight: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// through or post_hoc
    #[arg(long)]
    pub proj_mode: Option<String>,
    /// grid or random
    #[arg(long)]
    pub proj_cloud: Option<String>,
    /// Discrete projection on a grid of this many points (implies
    /// --proj-cloud grid)
    #[arg(long, value_parser = parse_count)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub ref_nx: Option<usize>,
    #[arg(long)]
    pub ref_dt: Option<f64>,
    #[arg(long)]
    pub ref_cache_dir: Option<String>,
    #[arg(long)]
    pub time_points: Option<usize>,
    #[arg(long, value_parser = parse_count)]
    pub heldout_points: Option<usize>,
    #[arg(long)]
    pub stamp_stride: Option<usize>,
}

/// Parse `12`, `2^21` or `1e4`.
pub fn parse_count(s: &str) -> Result<usize, String> {
    let s = s.trim();
    if let Some((b, e)) = s.split_once('^') {
        let b: usize = b.parse().map_err(|_| format!("bad base in {s:?}"))?;
        let e: u32 = e.parse().map_err(|_| format!("bad exponent in {s:?}"))?;
        return b.checked_pow(e).ok_or_else(|| format!("{s} overflows"));
    }
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    let f: f64 = s.parse().map_err(|_| format!("not a count: {s:?}"))?;
    if f < 0.0 || f.fract() != 0.0 || f > usize::MAX as f64 {
        return Err(format!("not a count: {s:?}"));
    }
    Ok(f as usize)
}

pub fn split_name(s: FpSplit) -> &'static str {
    match s {
        FpSplit::Pairwise => "pairwise",
        FpSplit::RowSum => "row_sum",
    }
}

fn parse_split(s: &str) -> anyhow::Result<FpSplit> {
    match s {
        "pairwise" => Ok(FpSplit::Pairwise),
        "row_sum" => Ok(FpSplit::RowSum),
        _ => Err(cpl_core::Error::Config(format!("unknown fp_split {s:?}; expected pairwise or row_sum")).into()),
    }
}

impl RunFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Defaults, then the file named by `--config`, then the flags.
    pub fn from_overrides(o: &Overrides) -> anyhow::Result<Self> {
        let mut f = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        f.apply(o);
        Ok(f)
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        let (r, t) = (&mut self.run, &mut self.train);
        set(&mut r.problem, &o.problem);
        set(&mut r.dim, &o.dim);
        set(&mut r.fp_split, &o.fp_split);
        set(&mut r.eval_every, &o.eval_every);
        r.record_time |= o.record_time;
        if let Some(p) = &o.out {
            r.out_dir = Some(p.display().to_string());
        }
        set(&mut t.method, &o.method);
        set(&mut t.estimator, &o.estimator);
        set(&mut t.epochs, &o.epochs);
        set(&mut t.lr0, &o.lr0);
        set(&mut t.batch, &o.batch);
        set(&mut t.cloud, &o.cloud);
        t.frozen_cloud |= o.frozen_cloud;
        if o.subset_i.is_some() {
            t.subset_i = o.subset_i;
        }
        if o.subset_j.is_some() {
            t.subset_j = o.subset_j;
        }
        set(&mut t.n_t, &o.n_t);
        set(&mut t.lambda, &o.lambda);
        set(&mut t.ic_points, &o.ic_points);
        set(&mut t.bc_points, &o.bc_points);
        set(&mut t.ic_weight, &o.ic_weight);
        set(&mut t.bc_weight, &o.bc_weight);
        set(&mut t.seed, &o.seed);
        set(&mut t.width, &o.width);
        set(&mut t.hidden_layers, &o.hidden_layers);
        set(&mut t.eps, &o.eps);
        set(&mut t.proj_mode, &o.proj_mode);
        set(&mut t.proj_cloud, &o.proj_cloud);
        if let Some(n) = o.grid {
            t.batch = n;
            t.proj_cloud = ProjCloud::Grid.to_string();
        }
        if o.ref_nx.is_some() {
            self.reference.nx = o.ref_nx;
        }
        if o.ref_dt.is_some() {
            self.reference.dt = o.ref_dt;
        }
        if o.ref_cache_dir.is_some() {
            self.reference.cache_dir = o.ref_cache_dir.clone();
        }
        set(&mut self.eval.time_points, &o.time_points);
        set(&mut self.eval.heldout_points, &o.heldout_points);
        set(&mut self.eval.stamp_stride, &o.stamp_stride);
    }

    /// Output directory: explicit setting, then `CPL_OUT_DIR`, then `runs`.
    /// A `--out` flag has already been folded into `run.out_dir`, but the
    /// environment variable outranks a value that came from the file.
    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        if let Some(v) = std::env::var_os(OUT_DIR_ENV) {
            if !v.is_empty() {
                return PathBuf::from(v);
            }
        }
        self.run.out_dir.as_deref().map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn resolve(&self) -> anyhow::Result<Resolved> {
        let t = &self.train;
        let train = TrainConfig {
            problem: self.run.problem.clone(),
            dim: self.run.dim,
            fp_split: parse_split(&self.run.fp_split)?,
            method: t.method.parse::<Method>()?,
            estimator: t.estimator.parse::<Estimator>()?,
            epochs: t.epochs,
            lr0: t.lr0,
            batch: t.batch,
            cloud: t.cloud,
            frozen_cloud: t.frozen_cloud,
            subset_i: t.subset_i,
            subset_j: t.subset_j,
            n_t: t.n_t,
            lambda: t.lambda,
            ic_points: t.ic_points,
            bc_points: t.bc_points,
            ic_weight: t.ic_weight,
            bc_weight: t.bc_weight,
            seed: t.seed,
            width: t.width,
            hidden_layers: t.hidden_layers,
            eps: t.eps,
            proj_mode: t.proj_mode.parse::<ProjMode>()?,
            proj_cloud: t.proj_cloud.parse::<ProjCloud>()?,
        };
        train.validate()?;
        if self.run.eval_every == 0 {
            bail!(cpl_core::Error::Config("eval_every must be at least 1".into()));
        }
        let e = &self.eval;
        if e.time_points < 2 || e.heldout_points == 0 || e.stamp_stride == 0 {
            bail!(cpl_core::Error::Config(
                "eval needs time_points ≥ 2, heldout_points ≥ 1 and stamp_stride ≥ 1".into()
            ));
        }
        let eval = EvalConfig {
            time_points: e.time_points,
            heldout_points: e.heldout_points,
            heldout_skip: e.heldout_skip,
            stamp_stride: e.stamp_stride,
        };
        let reference = ReferenceSettings::default_for(&train.problem).map(|d| ReferenceSettings {
            nx: self.reference.nx.unwrap_or(d.nx),
            dt: self.reference.dt.unwrap_or(d.dt),
            cache_dir: self.reference.cache_dir.as_deref().map(PathBuf::from),
        });
        Ok(Resolved { train, eval, reference, eval_every: self.run.eval_every, record_time: self.run.record_time })
    }
}

/// Validated settings of one run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub reference: Option<ReferenceSettings>,
    pub eval_every: usize,
    pub record_time: bool,
}
