//! Consensus-based distributed tracking of a single target over a static
//! sensor network with linear TDOA measurements and fixed, heterogeneous
//! link delays.

pub mod analysis;
pub mod baseline;
pub mod delay;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod harness;
pub mod linalg;
pub mod measurement;
pub mod network;
pub mod par;

pub use error::{Error, Result};
