//! Entropic optimal transport on fixed grids: Sinkhorn divergences, three
//! families of barycenters, closed-form Gaussian references and barycentric
//! coordinates.
//!
//! The guide under `book/` walks through each module with runnable examples.

pub mod barycenters;
pub mod embedding;
pub mod error;
pub mod gaussian_oracle;
pub mod kernels;
pub mod measures;
pub mod sinkhorn;

pub use error::{Error, Result};

// Book chapters, compiled as doctests so the guide cannot drift.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/divergences.md")]
    mod divergences {}
    #[doc = include_str!("../../../book/src/barycenters.md")]
    mod barycenters {}
    #[doc = include_str!("../../../book/src/gaussian-oracle.md")]
    mod gaussian_oracle {}
    #[doc = include_str!("../../../book/src/embedding.md")]
    mod embedding {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
