//! Minimal-variation embeddings of planar point clouds.
//!
//! Three objectives learn a feature map φ: R² → R^p with orthonormal
//! coordinates and small variation: an augmentation energy (SSL), a
//! graph-Laplacian finite-difference energy and the Dirichlet energy
//! ‖Dφ‖². All three are checked against the exact spectral embedding of the
//! sample's graph Laplacian and scored with a linear probe.

pub mod cli;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod objectives;
pub mod oracle;
pub mod report;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{Network, NetworkConfig, ParamGradient};
pub use rng::Rng;
