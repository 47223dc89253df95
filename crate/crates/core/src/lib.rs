//! Saddle-escape dynamics of deep nonlinear networks trained from small
//! initialization.
//!
//! The crate is `no_std` with `alloc`. Enable the `std` feature to route
//! transcendental functions through the platform math library and to let
//! the GEMM kernels detect SIMD support at runtime.
//!
//! Modules:
//!
//! * [`activation`]: activation registry, Taylor data, Hermite moments and
//!   the four-class classification.
//! * [`quadrature`]: Gauss–Hermite and Gauss–Legendre rules, adaptive
//!   Gauss–Kronrod integration and the logarithmic endpoint substitution.
//! * [`ode`]: adaptive Dormand–Prince integrator with dense output and
//!   event location.
//! * [`reduced_flow`]: the scalar chain and its exact and leading-order flows.
//! * [`escape_laws`]: closed-form and quadrature escape-time predictions.
//! * [`fullnet`]: dense network simulator, initializations, estimators and
//!   observables.
//! * [`cascade`]: multi-mode stage dynamics, coupling channels, the
//!   Schur–Perron test and the escape-time homotopy identity.
//! * [`fit`]: least-squares slope fits.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod activation;
pub mod cascade;
pub mod error;
pub mod escape_laws;
pub mod fit;
pub mod fullnet;
pub mod linalg;
pub mod num;
pub mod ode;
pub mod quadrature;
pub mod reduced_flow;
pub mod rng;

pub use error::{Error, Result};
