//! Solver library for nonlinear parabolic gradient systems whose coefficients
//! depend on the unknown itself.
//!
//! The library discretizes the evolution by a semi-implicit minimizing-movements
//! scheme: principal (divergence-form) terms are taken at the new time level,
//! while the lower-order coefficient terms lag one step behind. Each accepted
//! step is certified against a discrete energy-dissipation inequality; steps
//! that violate it are retried with a halved time step.
//!
//! Crate layout mirrors the solver pipeline:
//!
//! - [`grid`]: rectangular grids (1D/2D), nodal vector fields, cell-based
//!   gradient fields, and mimetic differential operators with an exact
//!   summation-by-parts identity.
//! - [`model`]: the pluggable coefficient bundle (mobility, scalar weight,
//!   gradient coupling, potential, convex anisotropy with smoothing family,
//!   p-growth regularizer) plus sampled contract validation.
//! - [`energy`]: the governing energy and its per-term breakdown.
//! - [`scheme`]: the per-step nonlinear solve, the time loop, the dissipation
//!   monitor, and the time interpolants.
//! - [`limits`]: refinement schedules and convergence diagnostics (Cauchy
//!   metrics, variational-inequality residuals, energy-inequality checks,
//!   subgradient probes).
//! - [`apps`]: ready-made configurations for orientation-adaptive image
//!   denoising and grain-boundary evolution.
//!
//! With the default `parallel` feature the data-parallel kernels run on rayon;
//! disabling it swaps in sequential fallbacks with identical results. All
//! reductions use fixed-size chunking so outputs are bit-reproducible
//! regardless of thread count.

pub mod apps;
pub mod energy;
pub mod grid;
pub mod limits;
pub mod model;
pub(crate) mod par;
pub mod scheme;
pub mod tensor;
