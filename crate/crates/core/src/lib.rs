//! Signed-particle Wigner Monte Carlo for one-body quantum transport in
//! 1D/2D, with on-demand kernel evaluation.
//!
//! The simulator represents the quasi-distribution as an ensemble of signed
//! point particles. Particles drift field-free; the potential acts through a
//! phase-space kernel whose positive part sets a Poisson pair-creation rate
//! per spatial cell, and opposite signs annihilate on a shared phase-space
//! cell. The kernel is never stored globally: [`kernel_net`] evaluates it in
//! closed form at occupied cells only, while [`kernel_oracle`] keeps the
//! naive dense path around as a correctness oracle and memory baseline.
//!
//! Core math is generic over the floating-point scalar ([`scalar::Scalar`]);
//! the aliases at the crate root fix `f64`, which is what the CLI and the
//! shipped tolerances use.

pub mod engine;
pub mod error;
pub mod kernel_net;
pub mod kernel_oracle;
pub mod numerics;
pub mod particles;
pub mod phase_space;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations used by the CLI, tests and most callers.
pub type PhysicalConstants = phase_space::PhysicalConstants<f64>;
pub type GridSpec = phase_space::GridSpec<f64>;
pub type PotentialField = phase_space::PotentialField<f64>;
pub type BarrierGeometry = phase_space::BarrierGeometry<f64>;
pub type OnDemandKernel = kernel_net::OnDemandKernel<f64>;
pub type CellKernelTable = kernel_net::CellKernelTable<f64>;
pub type KernelCache = kernel_net::KernelCache<f64>;
pub type DenseKernel = kernel_oracle::DenseKernel<f64>;
pub type SignedParticle = particles::SignedParticle<f64>;
pub type Ensemble = particles::Ensemble<f64>;
pub type InitialCondition = engine::InitialCondition<f64>;
pub type SimConfig = engine::SimConfig<f64>;
pub type SimState = engine::SimState<f64>;
pub type DensityGrid = engine::DensityGrid<f64>;
