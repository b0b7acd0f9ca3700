//! Realized integrated beta from noisy, jump-contaminated high-frequency
//! prices, and the dynamic realized beta model for its daily dynamics.

pub mod error;
pub mod ingest;
pub mod io;
pub mod kernel;
pub mod mc;
pub mod model;
pub mod panel;
pub mod par;
pub mod preavg;
pub mod rib;
pub mod sim;
pub mod tuning;

pub use error::{Error, Result};
