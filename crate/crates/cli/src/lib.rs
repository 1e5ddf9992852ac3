//! Experiment harness for the two-hop relay engine: spec files, sweeps,
//! physics validation and report writers.

pub mod experiments;
pub mod output;
pub mod spec;

use mcrelay_core::Error as CoreError;

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;

/// Process exit status for an error: configuration problems get their own
/// code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let config = err.chain().any(|e| {
        e.is::<spec::ConfigError>()
            || matches!(e.downcast_ref::<CoreError>(), Some(CoreError::InvalidConfig(_) | CoreError::Usage(_)))
    });
    if config {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}
