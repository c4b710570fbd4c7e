//! Extended-target tracking over random finite sets of trajectories.
//!
//! The crate implements two Poisson multi-Bernoulli mixture (PMBM) trackers
//! for extended targets, one over the set of current trajectories and one
//! over the set of all trajectories, together with the GGIW single-target model,
//! the data-association reduction stage, a scenario simulator and the
//! trajectory metric used for evaluation.

pub mod association;
pub mod error;
pub mod ggiw;
pub mod metrics;
pub mod numeric;
pub mod pmbm;
pub mod sim;
pub mod trajectory;

pub use error::{Error, Result};
