// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod params;
pub mod representation;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
