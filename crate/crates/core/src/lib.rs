//! Simulation library for searching knowledge graphs for biased nodes with
//! attention-based node embeddings, a learned Q-function and a cooperating
//! swarm of walkers.

pub mod bench;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod graph;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod swarm;
pub mod trainer;

pub use error::{Error, Result};
pub use graph::{Distance, KnowledgeGraph, NodeId, NodeSet};
pub use oracle::{FeatureTable, Oracle, OracleResponse, QueryBudget, SimulatedOracle};
