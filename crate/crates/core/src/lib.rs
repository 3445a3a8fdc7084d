//! Second-order equivariant graph ODEs with an EGNN coupling, plus the
//! N-body and graph-autoencoder experiments built on them.

// `!(x > 0.0)` is how validators reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod dynamics;
pub mod egnn;
pub mod error;
pub mod graph;
pub mod model;
pub mod ode;
pub mod params;
pub mod persist;
pub mod rng;
pub mod tasks;
pub mod train;
pub mod transform;

pub use error::{Error, NonFinite, Result};
