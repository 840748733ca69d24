//! Structure-preserving discretizations of evolutionary systems built on
//! discrete grad/curl/div complexes.

pub mod block;
pub mod cli;
pub mod dirac;
pub mod discrete;
pub mod error;
pub mod evo;
pub mod grid;
pub mod layout;
pub mod linsolve;
pub mod material;
pub mod maxwell_dirac;
pub mod pointwise;
pub mod potentials;
pub mod sparse;
pub mod transfer;

pub use block::{BlockOp, BlockTag};
pub use discrete::ComplexOps;
pub use error::{Error, Result};
pub use evo::{Integrator, SourceTerm, TimeGrid, Trajectory};
pub use grid::{Backend, EntityKind, EntitySpace, GridSpec};
pub use layout::Layout;
pub use material::{MaterialLaw, PositivityReport};
pub use pointwise::{PointwiseMatrix, PointwiseWeight};
pub use sparse::SparseOp;
