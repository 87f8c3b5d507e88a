//! Library surface of the pipeline tool, used by the binary and the
//! integration tests.

pub mod manifest;
pub mod render;
pub mod stages;

use dogm_core::CoreError;
use dogm_nn::NnError;

/// Exit code classification: 3 for data-contract violations, 4 for i/o.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return if core.is_contract() { 3 } else { 4 };
        }
        if let Some(nn) = cause.downcast_ref::<NnError>() {
            return match nn {
                NnError::Io { .. } => 4,
                NnError::Core(c) if !c.is_contract() => 4,
                _ => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    3
}

/// Default seed, overridable through the environment.
pub fn default_seed() -> u64 {
    std::env::var("DOGM_SEED")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}
