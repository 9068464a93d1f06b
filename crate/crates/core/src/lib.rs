//! Edit-script machinery for automatic post-editing data.
//!
//! A post-edit turns a machine translation (`mt`) into its human correction
//! (`pe`). This crate represents that change as word-level insert/delete
//! actions and provides the pieces needed to study and supervise the order in
//! which those actions are applied:
//!
//! - [`edit`]: actions, traces, their text format, and minimal script extraction.
//! - [`reorder`]: realizing a minimal script under any execution order.
//! - [`keystrokes`]: turning character-level editor states into word actions.
//! - [`align`]: recovering the human order of the minimal actions.
//! - [`analysis`]: ordering statistics (Kendall's tau, jump-backs, curves).
//! - [`metrics`]: TER and BLEU.
//! - [`corpus`]: sample I/O and training-set construction.
//! - [`synthetic`]: generators for synthetic corpora and editor logs.

pub mod align;
pub mod analysis;
pub mod corpus;
pub mod decoding;
pub mod edit;
pub mod keystrokes;
pub mod metrics;
pub mod reorder;
pub mod synthetic;

pub use edit::{apply, apply_all, min_edit_script, tokenize, AnchoredScript, EditAction, ScriptItem, Trace};
pub use reorder::{l2r_trace, realize, shuffled_trace, Permutation};
