//! Inject entity definitions into language models and measure whether the
//! injected knowledge propagates to inferences about the entity.

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod harness;
pub mod injection;
pub mod metrics;
pub mod text;
pub mod toy;
