//! Symbolic-numeric toolkit for rank-type harmonic-analysis identities.
//!
//! The crate is organized around six layers, each usable on its own:
//!
//! * [`ratfun`] — exact sparse multivariate polynomials and rational functions
//!   over arbitrary-precision rationals, with the variable permutations,
//!   parameter shifts, subspace restrictions and one-sided limits the
//!   identity layer needs.
//! * [`identities`] — the six rational-function families (two per root-system
//!   flavour), their Weyl-group symmetrization identities and the starred
//!   limit identities on the fixed-point subspaces, verified exactly.
//! * [`pvlimits`] — numeric principal-value limits: the one-variable
//!   limit formula, the multivariable product-kernel limit, and the residual
//!   distributions attached to a spectral configuration, with s→0⁺
//!   extrapolation.
//! * [`localfactors`] — local L-, ε- and γ-factor arithmetic for unramified
//!   p-adic and Archimedean quadratic extensions: exact rational γ data at
//!   finite places, Γ_ℝ-atom products at Archimedean ones, leading values at
//!   the center, λ-constants and the abelian γ product.
//! * [`tempered`] — base-change and centralizer combinatorics for tempered
//!   parameters: block registries, adjoint/Asai γ assembly, component-group
//!   and Weyl-group orders, Plancherel densities, formal degrees and the
//!   normalization constants of the rank-one theory.
//! * [`toyplancherel`] — a self-contained numeric verification of the
//!   rank-one Archimedean Plancherel identity on the circle.
//!
//! Everything is `no_std` + `alloc`; numeric code relies on `libm`-backed
//! float operations. IO, CLI and serialization live in the companion crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod util;

pub mod ratfun;

pub mod identities;

pub mod pvlimits;

pub mod localfactors;

pub mod tempered;

pub mod toyplancherel;

/// Complex double-precision scalar used throughout the numeric layers.
pub type C64 = num_complex::Complex<f64>;
