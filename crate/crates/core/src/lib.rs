//! Knowledge-graph path reasoning for explainable recommendation.
//!
//! The pipeline is coarse-to-fine: mine user-centric relation patterns,
//! train one small reasoning module per relation, compose a weighted pattern
//! profile per user, then run profile-guided batch path reasoning to emit
//! recommendations, each explained by a concrete graph path.

pub mod config;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod graph;
pub mod io;
pub mod metrics;
pub mod miner;
pub mod ppr;
pub mod profile;
pub mod reasoner;
pub mod seed;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use graph::{EntityId, EntityType, GraphStats, KnowledgeGraph, ReasoningPath, Relation, RelationId, Schema};
pub use io::{Dataset, Roles};
pub use miner::{MineConfig, PathSample, Pattern};
pub use ppr::{LayoutTree, ReasonOptions, ReasonStats, Recommendation, ScoredPath};
pub use profile::{ProfileConfig, ProfileEntry, ProfileVariant, UserProfile};
pub use reasoner::{HopCache, Hyperparams, RankLoss, ReasonerModel, RelationModule};
