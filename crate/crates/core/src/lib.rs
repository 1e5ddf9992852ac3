//! Two-hop diffusive molecular communication with a decode-and-forward relay.

pub mod analytics;
pub mod error;
pub mod link;
pub mod model;
pub mod physics;
pub mod protocol;
pub mod seed;
pub mod sim;
pub mod stats;

pub use error::{Error, Result, Violation};
