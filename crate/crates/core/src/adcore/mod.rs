//! Scalar reverse-mode differentiation and truncated Taylor jets.
//!
//! Numerical code is written once against the [`Backend`] trait and then
//! run either on plain values ([`Eval`]) or recorded on a [`Tape`] for a
//! reverse sweep. Jets ([`Jet`]) carry normalized Taylor coefficients
//! `f^(k)/k!` along one input direction; on a tape each coefficient is a
//! recorded value, so derivatives of any order up to [`MAX_ORDER`] can be
//! differentiated again with respect to the network parameters.

mod backend;
mod jet;
mod tape;

pub use backend::{dot_value, Backend, Eval, Primitive};
pub use jet::{jet_eval, Jet, Program, MAX_ORDER};
pub use tape::{GradVector, Gradients, NodeId, OpCode, Tape, Var};
