//! Consumer-fairness auditing for recommenders that rank through an LLM.
//!
//! The pipeline ingests a ratings dataset, splits every user's history in
//! time, samples a profile per user, renders Neutral / Sensitive /
//! Counterfactual prompts, executes them against a backend, matches the
//! returned titles back to the catalog, scores hit and NDCG benefits and
//! finally tests group disparities of the benefit deviations.

pub mod audit;
pub mod backend;
pub mod corpus;
pub mod digest;
pub mod extraction;
pub mod fairness;
pub mod ids;
pub mod metrics;
pub mod profiles;
pub mod prompts;
pub mod stats;

pub use ids::{ItemId, UserId};
