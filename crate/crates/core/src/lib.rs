//! Wasserstein dictionary learning: entropic barycenters, differentiation
//! through unrolled Sinkhorn iterations, and a quasi-Newton trainer.

pub mod barycenter;
pub mod error;
pub mod grad;
pub mod gradcheck;
pub mod grid;
pub mod kernel;
pub mod learn;
pub mod losses;
pub mod oracle;
pub mod registry;
pub mod simplex;
pub mod sinkhorn;

pub use error::{Result, WdlError};
