//! Core library for the QSF sequence-modeling stack.
//!
//! The stack has four progressively constrained architectures — causal
//! Fourier mixing, learned Koopman operators, a Koopman + linear-attention
//! hybrid, and an orthogonally constrained variant — together with the
//! closed-form propagator machinery (affine evolution, noise covariance,
//! guidance-weighted Gaussian posteriors, multi-step chaining) and spectral
//! mode analysis of trained operators. Every closed form ships with an
//! independent numerical oracle in [`oracles`].

pub mod autodiff;
pub mod data;
pub mod fsio;
pub mod linalg;
pub mod model;
pub mod oracles;
pub mod propagator;
pub mod spectral;
pub mod train;
