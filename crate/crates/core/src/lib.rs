//! Exact and multiprecision engine for linearizing germs of biholomorphisms
//! of (C^n, 0) whose linear part is a Jordan matrix `Lambda + eps N`.
//!
//! The crate is organized around the pipeline the analyses follow:
//!
//! - [`series`]: sparse truncated power series, composition, Jacobians,
//!   polydisc norms;
//! - [`spectrum`]: eigenvalue data, modulus classes, resonance and
//!   quasi-resonance detection, Diophantine fits, derived operator constants;
//! - [`slices`]: the Siegel/Poincare decomposition of multi-indices and its
//!   invariance checks;
//! - [`homological`]: the operator `L(phi) = phi o Lambda^eps - Lambda^eps
//!   phi`, its exact per-degree solver, and quantitative bound reports;
//! - [`newton`]: the quadratic iteration for the conjugacy equation, a
//!   degree-by-degree direct solver used as a cross-oracle, and convergence
//!   diagnostics.
//!
//! Coefficients are generic: exact Gaussian rationals ([`num::CRat`]) or
//! multiprecision complex floats ([`num::CF`]). Everything is deterministic:
//! identical inputs and precision produce identical results, independent of
//! thread counts (the engine is single-threaded; all types are `Send + Sync`
//! and immutable once built).

pub mod error;
pub mod homological;
pub mod newton;
pub mod num;
pub mod series;
pub mod slices;
pub mod spectrum;

pub use error::{CoreError, Result};
pub use num::{Coeff, CRat, CF};
pub use series::{
    block_degrees, compose, compose_linear, compose_linear_vec, lex_compare, sup_norm_estimate,
    LinearMap, MatrixSeries, MultiIndex, PolydiscRadii, ScalarSeries, VectorSeries,
};
pub use slices::{SliceConfig, SliceLabel};
pub use spectrum::{ModulusClasses, QuasiResonanceTable, Spectrum};
