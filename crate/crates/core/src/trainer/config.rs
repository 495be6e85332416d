use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pde::{FpSplit, PDEProblem};

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($var),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    _ => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($name), " '{}' (expected one of: {})"),
                        s,
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(
    /// Training method.
    Method { Vanilla => "vanilla", Soft => "soft", DiscreteProj => "discrete_proj", Sdifp => "sdifp" }
);
named_enum!(
    /// Gradient estimator over the linear term list (SDIFP only).
    Estimator { Full => "full", DsUge => "ds_uge", Soo => "soo" }
);
named_enum!(
    /// Whether the discrete projection is differentiated through.
    ProjMode { Through => "through", PostHoc => "post_hoc" }
);
named_enum!(
    /// Where the discrete projection's batch lives.
    ProjCloud { Grid => "grid", Random => "random" }
);

/// Everything a training run needs besides the reference solver.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub problem: String,
    /// Spatial dimension for `_nd` problems.
    pub dim: usize,
    pub fp_split: FpSplit,
    pub method: Method,
    pub estimator: Estimator,
    pub epochs: usize,
    pub lr0: f64,
    /// Residual points per time slice.
    pub batch: usize,
    /// Detached cloud size `M`.
    pub cloud: usize,
    /// Keep the detached cloud fixed instead of advancing the Sobol skip.
    pub frozen_cloud: bool,
    /// `|I|`; `None` means all terms.
    pub subset_i: Option<usize>,
    /// `|J|`; `None` means all terms.
    pub subset_j: Option<usize>,
    pub n_t: usize,
    pub lambda: f64,
    pub ic_points: usize,
    /// Boundary points per time slice.
    pub bc_points: usize,
    pub ic_weight: f64,
    pub bc_weight: f64,
    pub seed: u64,
    pub width: usize,
    pub hidden_layers: usize,
    pub eps: f64,
    pub proj_mode: ProjMode,
    pub proj_cloud: ProjCloud,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            problem: "advection1d".into(),
            dim: 2,
            fp_split: FpSplit::Pairwise,
            method: Method::Sdifp,
            estimator: Estimator::Full,
            epochs: 2000,
            lr0: 1e-3,
            batch: 100,
            cloud: 10_000,
            frozen_cloud: false,
            subset_i: None,
            subset_j: None,
            n_t: 4,
            lambda: 1.0,
            ic_points: 100,
            bc_points: 8,
            ic_weight: 10.0,
            bc_weight: 1.0,
            seed: 0,
            width: 128,
            hidden_layers: 4,
            eps: crate::sdifp::EPS_FLOOR,
            proj_mode: ProjMode::Through,
            proj_cloud: ProjCloud::Random,
        }
    }
}

impl TrainConfig {
    /// Checks that need no problem instance.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch == 0 {
            return fail("batch must be at least 1".into());
        }
        if self.method == Method::Sdifp && self.cloud < 2 {
            return fail(format!("detached cloud needs at least 2 points, got {}", self.cloud));
        }
        if self.method == Method::DiscreteProj && self.batch < 2 {
            return fail("discrete projection needs a batch of at least 2".into());
        }
        if self.n_t == 0 {
            return fail("n_t must be at least 1".into());
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        for (name, v) in [("lambda", self.lambda), ("ic_weight", self.ic_weight), ("bc_weight", self.bc_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive".into());
        }
        if self.width == 0 || self.hidden_layers == 0 {
            return fail("network needs positive width and depth".into());
        }
        if self.subset_i == Some(0) || self.subset_j == Some(0) {
            return fail("index subsets must be nonempty".into());
        }
        Ok(())
    }

    /// Checks against the problem's term count.
    pub fn validate_for<S>(&self, problem: &PDEProblem<S>) -> Result<()> {
        self.validate()?;
        let nl = problem.terms.len();
        for (name, k) in [("|I|", self.subset_i), ("|J|", self.subset_j)] {
            if let Some(k) = k {
                if k > nl {
                    return Err(Error::Config(format!("{name} = {k} exceeds the {nl} linear terms of {}", problem.name)));
                }
            }
        }
        Ok(())
    }

    pub fn size_i(&self, n_terms: usize) -> usize {
        self.subset_i.unwrap_or(n_terms).min(n_terms)
    }

    pub fn size_j(&self, n_terms: usize) -> usize {
        self.subset_j.unwrap_or(n_terms).min(n_terms)
    }
}
