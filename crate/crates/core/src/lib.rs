//! Atomic self-consistency for long-form and list answers.
//!
//! Many answers are sampled for one question, split into atomic facts
//! (sentences or list items), and clustered. Facts that recur across samples
//! form strong clusters; the representatives of clusters whose strength
//! reaches a threshold are merged into the final answer. The crate also
//! carries the comparison baselines, ablations, oracle ceilings, the
//! entropy-based sampling budget and the evaluation metrics.

pub mod atomizer;
pub mod cluster;
pub mod composer;
pub mod consistency;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod io;
pub mod model;
pub mod orchestrator;
pub mod pipeline;
pub mod settings;
pub mod synth;

pub use error::{Error, Result};
