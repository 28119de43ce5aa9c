//! Quasicontinuum reduction of X-braced truss lattices with enriched
//! local maximum-entropy interpolation.

pub mod basis;
pub mod bench;
pub mod enrichment;
pub mod error;
pub mod geometry;
pub mod io;
pub mod lattice;
pub mod lme;
pub mod locality;
pub mod qc;
pub mod reduce;
pub mod scheme;
pub mod sparse;

pub use error::{Result, XqcError};
