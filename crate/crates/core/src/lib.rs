//! Monte Carlo laboratory for a one-dimensional superprocess SPDE driven by
//! a Brownian-sheet environment.
//!
//! The crate simulates the typical-particle SDE in a frozen environment,
//! computes its Malliavin derivatives in closed form, estimates the
//! environment-conditional transition density by Malliavin-weight Monte
//! Carlo, evolves the density field two independent ways (convolution
//! representation and explicit finite differences), and runs the moment /
//! Holder-exponent experiment harness on top.
//!
//! All numerics are generic over the scalar type via [`scalar::Real`];
//! the `*64` aliases at the crate root fix the default f64 lane.

pub mod error;
pub mod experiments;
pub mod grid;
pub mod kernel;
pub mod malliavin;
pub mod particle;
pub mod regularity;
pub mod rng;
pub mod scalar;
pub mod sheet;
pub mod spde;

pub use error::{Error, Result};
pub use kernel::SmoothingKernel;
pub use scalar::Real;

/// Default-precision aliases.
pub type Kernel64 = kernel::SmoothingKernel<f64>;
pub type Grid64 = grid::GridSpec<f64>;
pub type Sheet64 = sheet::DenseSheet<f64>;
pub type BrownianPath64 = sheet::BrownianPath<f64>;
pub type ParticlePath64 = particle::ParticlePath<f64>;
pub type MalliavinState64 = particle::MalliavinState<f64>;
pub type Field64 = spde::FieldState<f64>;
