//! Support library for the `bhm` binary: on-disk formats and band
//! assembly. Lives in a library target so integration tests can drive the
//! same code paths the binary uses.

pub mod band;
pub mod formats;
