//! Stationary analysis of Markov-modulated fluid queues.
//!
//! The crate covers three model families that build on each other:
//!
//! * [`classic`]: a fluid level driven up or down at unit rate by a finite
//!   background chain;
//! * [`colored`]: fluid that carries ordered colors, where the color on top of
//!   the stack selects the active rate matrices;
//! * [`jumps`]: colored queues with upward phase-type fluid jumps, reduced to
//!   the jump-free case by replacing each jump with a unit-rate climb.
//!
//! [`models`] builds finite LCFS and cascade FCFS queues on top of these, and
//! contains a finite QBD baseline. [`sim`] is a discrete-event simulator used
//! to cross-check the analytic results.

pub mod classic;
pub mod colored;
pub mod error;
pub mod jumps;
pub mod matcore;
pub mod models;
pub mod par;
pub mod sim;

pub use error::{FluidError, Result};
pub use matcore::{Matrix, RowVector, Tolerances};
pub use par::Execution;
