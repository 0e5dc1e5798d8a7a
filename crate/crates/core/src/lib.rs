//! Numerical laboratory for the periodic non-Hermitian Anderson (Hatano–Nelson) model.
//!
//! The operator `H_n^g` acts on `l_2(1, n)` as
//! `(H φ)_k = -e^{g} φ_{k+1} - e^{-g} φ_{k-1} + q_k φ_k` with periodic
//! boundary conditions. The crate is organised bottom-up:
//!
//! * [`potentials`]: diagonal sequences `q_k` and their growth statistics,
//! * [`hermitian`]: the `g = 0` spectrum `E_1..E_n` and its counting function,
//! * [`logpotential`]: `F_n(z) = (1/n) Σ ln(E_j - z)` and the sets it cuts out,
//! * [`nha`]: the eigenvalues of `H_n^g`, transfer matrices, Lyapunov exponents,
//! * [`curves`]: level arcs of `U_n`, phase quantization, counting and spacing laws.

// `!(x > 0.0)` is used on purpose so that NaN takes the failing branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod curves;
pub mod error;
pub mod exec;
pub mod hermitian;
pub mod logpotential;
pub mod nha;
pub mod potentials;
pub mod table;

pub use error::{Error, Result};
pub use exec::Execution;
pub use num_complex::Complex64;
