//! Translation preference mining via multilingual consistency search.
//!
//! A source sentence seeds a search tree of candidate translations. Each
//! candidate is scored by how well it survives round trips through other
//! languages, and the finished tree is turned into weighted preference pairs
//! for self-play preference optimization.

pub mod backends;
pub mod cli;
pub mod consistency;
pub mod error;
pub mod gmcts;
pub mod mtp;
pub mod preference;
pub mod selfplay;
pub mod synthlab;

pub use error::{Error, Result};
pub use mtp::{Direction, LanguageTag, SearchConfig, Sentence};
