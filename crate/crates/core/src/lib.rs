//! Entity alignment across knowledge graphs with embedding-based candidate
//! retrieval and chat-model reasoning over code-formatted entity cards.

pub mod align;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod kg;
pub mod llm;
pub mod prompt;
pub mod run;
pub mod synthetic;

pub use error::{Error, Result};
