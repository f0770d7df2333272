//! MCTS-driven prompt-sequence search for LLM code generation.
//!
//! The engine treats the choice of prompts for a multi-step code-generation
//! task as a sequential decision problem. A problem description is decomposed
//! into sentences; each sentence is turned into a candidate prompt, scored,
//! and placed in a search tree whose nodes are prompt-score pairs. Code is
//! generated incrementally along the tree path, executed in a sandbox, graded,
//! and the reward is backpropagated to guide later iterations. An optional
//! feedback loop revises low-scoring scripts.
//!
//! The crate also ships the benchmark family the engine is evaluated on
//! (box-constrained and SINR-constrained transmit-power minimization), an
//! exact ground-truth solver, three baseline pipelines, and metrics
//! aggregation.

pub mod baselines;
pub mod benchgen;
pub mod config;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod reward;
pub mod sandbox;
pub(crate) mod sync;
pub mod telemetry;
pub mod tree;

pub use benchgen::{Difficulty, GroundTruth, ProblemSpec};
pub use gateway::{Gateway, LlmRequest, LlmResponse, RoleTag};
pub use pipeline::{SearchOutcome, run_search};
pub use sandbox::{ExecutionResult, ExecutionStatus, Sandbox};
pub use tree::{NodeId, SearchConfig, SearchTree};
