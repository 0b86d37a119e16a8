//! Network discovery for influence maximization.
//!
//! A hidden social network can only be explored through a limited number of
//! neighborhood queries. This crate trains and evaluates policies that decide
//! which node to query next so that influence maximization on the discovered
//! subgraph seeds a large cascade in the full network. It provides the cascade
//! model and greedy oracle, the query MDP, baseline samplers, random-walk node
//! embeddings, a small reverse-mode autodiff engine, a graph-convolutional
//! Q-network with hierarchical pooling, prioritized-replay DQN training,
//! block-model graph synthesis, and an experiment harness with a CLI.

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod deepwalk;
pub mod env;
pub mod error;
pub mod gdqn;
pub mod graph;
pub mod harness;
pub mod influence;
pub mod replay;
pub mod rng;
pub mod samplers;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use graph::Graph;
