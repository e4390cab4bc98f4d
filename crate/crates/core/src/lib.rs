//! Adversarial policy imitation learning on desk-scale two-player Markov games.
//!
//! The crate is organised around a tabular [`game::MarkovGame`] and an exact
//! dynamic-programming [`oracle`] that computes values, occupancies, exact
//! policy gradients and every performance bound the learners rely on. The
//! sample-based learners ([`imitator`], [`adversary`]) and the [`trainer`]
//! loop are checked against that oracle.

pub mod adversary;
pub mod error;
pub mod eval;
pub mod game;
pub mod imitator;
pub mod oracle;
pub mod pg;
pub mod plot;
pub mod policy;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
pub use game::{make_env, EnvSpec, MarkovGame, Outcome, Trajectory, Transition};
pub use policy::{Encoding, ObsLayout, Policy, PolicyKind};

/// Version stamped into every JSON checkpoint and report this crate writes.
pub const SCHEMA_VERSION: u32 = 1;
