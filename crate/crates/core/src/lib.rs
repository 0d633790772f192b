//! Polyhedral decompositions of small ReLU networks on the plane, with
//! dual-graph spectral partitions and Betti curves of random filtrations.

pub mod datagen;
pub mod dualgraph;
pub mod eigen;
pub mod homology;
pub mod error;
pub mod io;
pub mod nn;
pub mod polydecomp;
pub mod report;
pub mod sweep;
pub mod trainer;
pub mod unionfind;

pub use error::{Error, Result};
