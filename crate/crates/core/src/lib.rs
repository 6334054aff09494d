//! MCMC samplers for hierarchical linear-Gaussian Bayesian inverse problems.
//!
//! The measurement model is `b = A x + ε`, `ε ~ N(0, μ⁻¹I)`, with a Gaussian
//! smoothness prior `x | σ ~ N(0, (σ Γ_prior⁻¹)⁻¹)` and independent Gamma
//! hyperpriors on the precision pair `θ = (μ, σ)`.  Everything is organized
//! around sampling the joint posterior `π(x, θ | b)`:
//!
//! * [`operators`] — matrix-free forward maps and prior factors with
//!   instrumented matvec counts,
//! * [`lowrank`] — truncated eigendecomposition of the prior-preconditioned
//!   data-misfit Hessian `L⁻ᵀAᵀAL⁻¹` and the conditional covariance factor it
//!   induces,
//! * [`model`] — exact and surrogate log-densities, full conditionals, and
//!   the density-ratio quantities that control the approximate samplers,
//! * [`samplers`] — hierarchical Gibbs, one-block, approximate one-block,
//!   delayed acceptance, and pseudo-marginal chains over a shared adaptive
//!   proposal,
//! * [`diagnostics`] — autocorrelation, IACT/ESS, Geweke, multivariate PSRF,
//!   credible bounds,
//! * [`problems`] — the 1D deblurring and 2D inverse-heat benchmark setups.

pub mod diagnostics;
pub mod lowrank;
pub mod model;
pub mod operators;
pub mod problems;
pub mod samplers;
