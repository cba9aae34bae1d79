//! Dynamics harmonic analysis for symmetric dynamical systems.
//!
//! The crate is organised bottom-up:
//!
//! - [`group`]: finite abelian groups built from cyclic factors, orthogonal
//!   representations and tables of real irreducible representations.
//! - [`harmonic`]: isotypic decomposition of arbitrary representations.
//! - [`equiv`]: bases of equivariant linear maps (commutants and hom-spaces).
//! - [`neural`]: small feed-forward networks, equivariant layers and Adam.
//! - [`sim`]: symmetric constrained stochastic linear systems and datasets.
//! - [`koopman`]: closed-form (e)EDMD and trained (e)DAE Koopman models.
//! - [`analysis`]: block spectra, isotypic energy, prediction error, plots.

pub mod analysis;
pub mod equiv;
mod error;
pub mod group;
pub mod harmonic;
pub mod koopman;
pub mod linalg;
pub mod neural;
pub mod sim;

pub use error::{Error, Result};
