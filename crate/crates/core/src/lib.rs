//! Cost-function recovery for input-affine continuous-time systems from
//! recorded expert trajectories.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alg1;
pub mod alg2;
pub mod basis;
pub mod domain;
pub mod error;
pub mod excitation;
pub mod experiment;
pub mod forward;
pub mod hjb;
pub mod linalg;
pub mod sgd;
pub mod sim;

pub use error::{Error, Result};
