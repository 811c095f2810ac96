//! Reasoning-aware commonsense knowledge retrieval.
//!
//! A corpus of generic-knowledge sentences is linked through shared concepts
//! ([`kb`]). A reasoner proposes relation-tagged inferences about a
//! conversation ([`reasoner`]); a rollout-free tree search ([`mcts`]) first
//! bridges the conversation's concepts to carve out a context-relevant
//! sub-region ([`bridging`]), then walks that sub-region once per inference
//! to collect supporting, mutually diverse knowledge chains ([`retrieval`]).
//! [`pipeline`] ties the stages together; [`metrics`] evaluates the output.

pub mod kb;
pub mod providers;
pub mod simmath;
pub mod reasoner;
pub mod mcts;
pub mod bridging;
pub mod retrieval;
pub mod metrics;
pub mod pipeline;
