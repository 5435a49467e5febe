//! Markovian homogenized constitutive models for one-dimensional viscoelasticity.
//!
//! The crate covers the whole pipeline: layered and continuous cell materials
//! ([`material`]), the exact pole/residue form of the homogenized symbol
//! ([`homogenize`]), internal-variable constitutive laws ([`constitutive`]),
//! fine-scale reference solvers ([`microsolver`]), training data generation
//! ([`datagen`]), recurrent neural surrogates ([`nn`]) and the homogenized
//! macroscale solver ([`macrosolver`]).

pub mod constitutive;
pub mod datagen;
pub mod error;
pub mod homogenize;
pub mod macrosolver;
pub mod material;
pub mod microsolver;
pub mod nn;
mod quad;
pub mod signal;

pub use error::{Error, Result};
