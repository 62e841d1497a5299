//! Bilinear multimodal fusion built on block-term tensor decompositions.
//!
//! A bilinear fusion maps `x1 ∈ R^I`, `x2 ∈ R^J` to `y ∈ R^K` through a
//! third-order tensor, `y_k = Σ_ij T_ijk x1_i x2_j`. The operators in
//! [`fusion`] constrain `T` in different ways; BLOCK writes it as a sum of
//! `R` rank-`(L, M, N)` terms, which contains CP (`L = M = N = 1`) and Tucker
//! (`R = 1`) as its extreme cases.
//!
//! - [`tensor`]: dense order-1..3 tensors and multilinear primitives.
//! - [`sketch`]: count sketch and circular convolution for MCB.
//! - [`fusion`]: the operators, their gradients and parameter accounting.
//! - [`oracle`]: brute-force reference paths used to check the operators.
//! - [`train`]: teacher-student tasks, Adam, early stopping and block sweeps.
//! - [`verify`]: the self-check suites behind `block-fusion verify`.

pub mod error;
pub mod fusion;
pub mod oracle;
pub mod sketch;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{FusionError, Result};
pub use fusion::{FusionParams, FusionSpec, Scheme, SchemeKind};
pub use tensor::DenseTensor;
