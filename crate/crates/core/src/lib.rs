//! Plan-aware concept-to-text generation toolkit.
//!
//! Builds oracle plans for training, orders concepts at inference time from a
//! planner draft, ranks every permutation by sequence log-probability, scores
//! outputs with the usual captioning metrics, and analyzes how a generator
//! responds to input permutations (output invariance, encoder attention and
//! hidden-state statistics, attention probing against dependency relations).

pub mod attnlab;
pub mod corpus;
pub mod genclient;
pub mod invariance;
pub mod metrics;
pub mod pipeline;
pub mod plankit;
pub mod textmatch;

pub use corpus::{ConceptSet, GenerationRecord, Instance, Plan, Skeleton};
