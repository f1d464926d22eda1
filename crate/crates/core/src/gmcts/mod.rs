//! Genetic Monte-Carlo tree search over translation candidates.
//!
//! The root holds the source sentence; every other node is a candidate in the
//! target language. After `b` sampled children are fast-initialized, each
//! iteration picks the global UCB maximum, grows it by a merge (few-shot
//! re-translation of the source with the best and selected candidates as
//! exemplars) or a mutation (translation of the node's best reconstruction),
//! scores the new node by rolling out a `b^n` multilingual sub-tree, and
//! backpropagates the reward to the root.

mod dot;
mod search;
mod tree;

pub use dot::to_dot;
pub use search::{
    initialize, run_search, ExpansionRecord, RolloutBranch, SearchOutcome, Searcher, SimulationReport,
};
pub use tree::{
    backpropagate, select, ucb, ucb_value, Genesis, NodeJson, SearchCounters, SearchNode, SearchTree,
    TreeJson,
};
