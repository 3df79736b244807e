//! Beam-annealing mutation fuzzing for black-box text systems.
//!
//! A seed input (prompt plus example) is mutated one word position at a
//! time, in word-importance order, by substituting lexically related words.
//! A beam of variants is carried between positions; admission is governed by
//! simulated annealing, the beam width follows the entropy of the beam's loss
//! distribution, and the best variant found so far is kept by probabilistic
//! elitism. A run succeeds once a variant pushes the target's output quality
//! below the success threshold.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod objective;
pub mod perturb;
pub mod search;
pub mod text;
pub mod threat;
pub mod wir;

pub use error::{Error, Result};
