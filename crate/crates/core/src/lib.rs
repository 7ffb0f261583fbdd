//! Tabular testbed for projection-based multi-objective preference
//! optimization: exactly solvable preference worlds, reward/weight learning
//! from pairwise feedback, outer-loop drivers that chase power-mean target
//! sets, and brute-force oracles that certify them.

pub mod error;
pub mod geometry;
pub mod learning;
pub mod mopo;
pub mod oracle;
pub mod world;

pub(crate) mod vecmath;

pub use error::{Error, Result};
