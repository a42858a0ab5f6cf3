//! Reduced-order models of transient heat conduction through multi-layer
//! building walls.

pub mod analytical;
pub mod bvp;
pub mod cases;
pub mod climate;
pub mod domain;
pub mod error;
pub mod field;
pub mod lom;
pub mod manifold;
pub mod metrics;
pub mod ode;
pub mod pod;
pub mod series;

pub use error::{Error, Result};
