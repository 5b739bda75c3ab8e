//! Set-to-sequence laboratory: the Read-Process-and-Write encoder,
//! glimpse-augmented pointer decoding, chain-rule sequence models with
//! search over output orderings, synthetic tasks with exact oracles, and the
//! training harness that ties them together.

pub mod cells;
pub mod diffcore;
pub mod error;
pub mod harness;
pub mod order_search;
pub mod par;
pub mod seq_models;
pub mod set_models;
pub mod tasks;
pub use error::{ModelError, Result};
