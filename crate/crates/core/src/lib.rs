//! Reduced dynamic models of building heat and moisture behavior,
//! identified from sampled data and checked against a reference RC-network
//! simulator under on/off climate control.

pub mod error;
pub mod signal;
pub mod sysid;
pub mod refsim;
pub mod control;
pub mod validation;

pub use error::{Error, Result};
