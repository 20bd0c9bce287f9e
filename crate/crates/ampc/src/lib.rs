//! Approximate dynamic models of a nonlinear plant, embedded in receding
//! horizon control.
//!
//! The crate builds surrogate models of a continuous-time nonlinear plant by
//! three routes and plugs each of them into the same tracking-MPC and
//! economic-MPC machinery so that open-loop accuracy, solve time, and
//! closed-loop objective can be compared on equal footing:
//!
//! * [`pod`] / [`tpwl`] — projection-based model reduction: proper orthogonal
//!   decomposition of state snapshots combined with trajectory piecewise
//!   linearization of the plant dynamics;
//! * [`subspace`] — discrete LTI state-space identification from input-output
//!   data via block-Hankel matrices and an oblique projection;
//! * [`nn`] — fully connected multi-step-ahead neural predictors trained by
//!   backpropagation with Adam-style updates.
//!
//! [`plant`] defines and simulates the ground-truth system (including a
//! two-CSTR benchmark), [`excitation`] generates persistently exciting input
//! signals and assembles datasets, [`control`] houses the steady-state
//! economic optimization and the MPC/EMPC solvers, and [`bench`] runs the
//! whole comparison protocol from a config file.

pub mod bench;
pub mod control;
pub mod error;
pub mod excitation;
pub mod linalg;
pub mod nn;
pub mod plant;
pub mod pod;
pub mod subspace;
pub mod tpwl;

pub use error::{Error, Result};
