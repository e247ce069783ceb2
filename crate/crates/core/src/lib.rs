//! Action-aware dynamic pruning of visual tokens for vision-language-action
//! inference, without a live model.
//!
//! The crate turns recorded 7-DoF action chunks into per-window motion
//! distances ([`se3`]), gates each forward pass between full vision and a
//! pruned token set ([`gate`]), selects the retained visual tokens from
//! text-to-vision similarity ([`scoring`]), and prices every forward with a
//! closed-form transformer cost model ([`flops`]). [`harness`] replays whole
//! episodes through that pipeline and [`stats`] holds the score diagnostics.

pub mod embfile;
pub mod error;
pub mod flops;
pub mod gate;
pub mod harness;
pub mod scoring;
pub mod se3;
pub mod stats;

pub use error::{AdpError, Result};

/// Crate version, exposed for compatibility checks by embedding hosts.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
