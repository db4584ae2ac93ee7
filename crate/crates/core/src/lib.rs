//! Topology optimisation of periodic and layered microstructures on the fully
//! resolved macroscopic structure, solved with GMRES preconditioned by a
//! spectral (MsFEM) coarse space plus symmetric Gauss–Seidel smoothing.

pub mod banded;
pub mod eigen;
pub mod error;
pub mod fem;
pub mod filters;
pub mod gmres;
pub mod mesh;
pub mod mma;
pub mod optimizer;
pub mod policy;
pub mod sparse;
pub mod spectral;

pub use error::{Error, Result};
