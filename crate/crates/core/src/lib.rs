//! Box spaces of residually finite groups, their embeddings into ℓ^p, and affine cocycles.

pub mod box_space;
pub mod chain_file;
pub mod cocycle;
pub mod embedding;
pub mod error;
pub mod fce;
pub mod group_chain;
pub mod isometry;
pub mod spectral;

pub use box_space::{assemble_box_space, BoxPoint, BoxSpace};
pub use error::{Error, Result};
pub use group_chain::{build_quotient, AmbientElement, AmbientGroup, GroupChain, MarkedQuotient, QuotientSpec, Radius};
