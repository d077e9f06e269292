//! Constructive first-order semiclassical expansion of the two-electron
//! Levy-Lieb functional on the line.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coulomb_ot;
pub mod density;
pub mod error;
pub mod grid;
pub mod marginal_fix;
pub mod oracle;
pub mod quad;
pub mod recovery;
pub mod run;
pub mod trunc_gauss;

pub use error::{Error, Result};
