//! Exactly conservative physics-informed network training.

pub mod adcore;
pub mod baselines;
pub mod error;
pub mod net;
pub mod pde;
pub mod refsolve;
pub mod sampler;
pub mod scalar;
pub mod sdifp;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tape64<'a> = adcore::Tape<'a, f64>;
pub type Var64 = adcore::Var<f64>;
pub type Jet64 = adcore::Jet<f64>;
pub type GradVector64 = adcore::GradVector<f64>;
pub type MlpParams64 = net::MLPParams<f64>;
pub type Problem64 = pde::PDEProblem<f64>;
pub type AffineParams64 = sdifp::AffineParams<f64>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type StepBatch64 = trainer::StepBatch<f64>;
