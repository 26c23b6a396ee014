//! Incremental-stability toolbox: backstepping synthesis for cascade
//! systems, numerically checked incremental Lyapunov certificates and
//! contraction metrics, quantized finite abstractions with a deviation
//! bound, and symbolic reach-avoid-stay synthesis under scheduling
//! constraints.
//!
//! The pieces compose into one pipeline, exercised end to end by the
//! `increstab` binary on the built-in `sat-cascade` example:
//!
//! 1. [`backstepping`] turns a stabilizer for the driven subsystem into a
//!    feedback law for the full cascade.
//! 2. [`lyapunov`] and [`contraction`] build the matching incremental
//!    certificates and falsify-or-accept them on sampled boxes.
//! 3. [`abstraction`] quantizes the closed loop into a finite transition
//!    system whose runs track continuous trajectories within a computable
//!    deviation.
//! 4. [`synthesis`] solves reach-avoid-stay games on the abstraction under a
//!    scheduler automaton and replays the discrete controller against the
//!    continuous loop.
//!
//! Everything numeric is deterministic: fixed-step integration,
//! low-discrepancy sampling, and order-fixed parallel reductions make every
//! artifact byte-reproducible at any thread count.

pub mod abstraction;
pub mod backstepping;
pub mod config;
pub mod contraction;
pub mod domain;
pub mod dynamics;
pub mod error;
mod linalg;
pub mod lyapunov;
pub mod sampling;
pub mod svg;
pub mod synthesis;
pub mod systems;

pub use error::{Error, Result};
