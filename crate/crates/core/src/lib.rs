//! Conditional click models for single lists, grids and carousels.
//!
//! Parse click logs ([`clicklog`]), describe models by dependencies,
//! sequentiality and factorization ([`taxonomy`]), evaluate and simulate
//! catalog models ([`models`], [`simulation`]), fit them ([`estimation`]) and
//! score them ([`evaluation`]).

pub mod cli;
pub mod clicklog;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod models;
pub mod parallel;
pub mod rng;
pub mod simulation;
pub mod taxonomy;

pub use error::{Error, Result};
