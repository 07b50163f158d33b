//! First-passage Laplace transforms for Markov processes without negative jumps.
//!
//! The crate evaluates scale functions for four process families (possibly
//! killed spectrally positive Lévy processes, their Lamperti transforms into
//! self-similar processes, continuous-state branching processes, and
//! deterministic drifts with position-dependent killing), simulates the
//! corresponding first-passage times, and inverts transform data back into
//! process parameters.

pub mod cli;
pub mod error;
pub mod exponent;
pub mod identify;
pub mod optim;
pub mod quadrature;
pub mod rng;
pub mod scale;
pub mod simulate;
pub mod verify;

pub use error::{Error, Result};
pub use exponent::{Exponent, JumpMeasureSpec, LevyTriplet};
pub use scale::{first_passage_transform, ProcessSpec, ScaleEval, ScaleModel};
