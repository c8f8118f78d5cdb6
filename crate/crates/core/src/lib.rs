//! Data-driven discovery of partial differential equations.
//!
//! The library searches for the governing equation of a gridded observation
//! field with a memetic evolutionary algorithm: candidate equations are sets
//! of token products whose coefficients are fitted by LASSO regression, and
//! the crossover/mutation operators can be biased by a term-importance
//! distribution extracted from an initial guess. The guess itself is produced
//! by a small symbolic polynomial network trained on the same data.
//!
//! Modules follow the pipeline order:
//!
//! * [`field`] — grids, observation fields, finite differences, noise.
//! * [`datasets`] — built-in benchmark problems and CSV ingestion.
//! * [`tokens`] — token families, term products, the candidate-equation
//!   chromosome and the enumerated term space.
//! * [`sparsity`] — LASSO + refit coefficient fitting and fitness.
//! * [`knowledge`] — term-importance distributions (smoothing, tuning,
//!   sampling).
//! * [`symnet`] — symbolic polynomial network for initial guesses.
//! * [`evolution`] — population management and both operator sets.
//! * [`harness`] — metrics, noise sweeps and the experiment protocol.
//!
//! With the default `parallel` feature the population fitness evaluations,
//! dataset generators and experiment sweeps run on rayon; building with
//! `--no-default-features` produces a fully sequential binary with identical
//! results (all randomness is derived from per-task seeds, never from
//! scheduling order).

pub mod config;
pub mod datasets;
pub mod error;
mod exec;
pub mod evolution;
pub mod field;
pub mod harness;
pub mod knowledge;
pub mod numerics;
pub mod sparsity;
pub mod symnet;
pub mod tokens;

pub use config::ProblemConfig;
pub use error::{Error, Result};
pub use field::{Field, Grid};
pub use tokens::{Chromosome, Term, TermSpace, Token};
