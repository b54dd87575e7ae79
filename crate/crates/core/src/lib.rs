//! Hierarchy-aware text classification for plant equipment records.
//!
//! The pipeline ingests free-text device descriptions labeled with
//! IEC-81346-style class codes, rolls under-represented classes up into their
//! hierarchy parents, trains a token-count classifier, evaluates it, and maps
//! the resulting classifications into subject-predicate-object triples that
//! can be queried with subclass closure.

pub mod classify;
pub mod corpus;
pub mod hierarchy;
pub mod kbmap;
pub mod metrics;
pub mod pipeline;
pub mod rollup;
pub mod sweep;

pub use hierarchy::{BreakdownLevel, ClassCode, Hierarchy};
