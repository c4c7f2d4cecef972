//! Numerical laboratory on the periodic unit torus for Kolmogorov equations
//! with rough diffusion, their backward duals, and triangular non-local
//! cross-diffusion (SKT) systems.

// `!(a < b)` is deliberate throughout: NaN must fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the stencil and quadrature formulas
#![allow(clippy::needless_range_loop)]
#![allow(clippy::len_without_is_empty, clippy::unnecessary_map_or, clippy::manual_is_multiple_of)]

pub mod dual;
pub mod error;
pub mod kolmo;
pub mod lab;
pub mod mollify;
pub mod sample;
pub mod skt;
pub mod torus;
pub mod weights;

pub use error::{Error, Result};
