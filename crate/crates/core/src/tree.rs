//! Search tree over prompt-score nodes.
//!
//! Nodes are identified by the pair (prompt text, prompt score); two sibling
//! prompts with equal score are treated as the same decision, so expansion
//! reuses the existing node instead of growing the tree. Selection uses the
//! UCT rule, and rewards are added to every node on the leaf-to-root path.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a node in the tree arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("node {0:?} has no children")]
    NoChildren(NodeId),
    #[error("node {0:?} is not in the tree")]
    UnknownNode(NodeId),
    #[error("expansion below node {0:?} would exceed the depth cap {1}")]
    DepthExceeded(NodeId, usize),
    #[error("best path requested on a tree whose root has no visits")]
    EmptyTree,
    #[error("contract violation: {0}")]
    ContractViolation(&'static str),
}

/// One prompt-score node with its bandit statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: NodeId,
    /// Empty at the root.
    pub prompt_text: String,
    /// Absent at the root; integer in 0..=10 everywhere else.
    pub prompt_score: Option<u8>,
    /// Cumulative reward Q(v).
    pub q: f64,
    /// Visit count N(v).
    pub visits: u64,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Root is 0.
    pub depth: usize,
}

/// Knobs for one search run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    /// UCT exploration constant.
    pub exploration_c: f64,
    /// Iteration budget.
    pub simulations: usize,
    /// Branching cap per node.
    pub max_children: usize,
    /// Depth cap (root = 0).
    pub max_depth: usize,
    pub rng_seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            exploration_c: std::f64::consts::SQRT_2,
            simulations: 20,
            max_children: 3,
            max_depth: 8,
            rng_seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.simulations < 1 {
            return Err(TreeError::ContractViolation("simulations must be >= 1"));
        }
        if self.max_children < 1 {
            return Err(TreeError::ContractViolation("max_children must be >= 1"));
        }
        if self.max_depth < 1 {
            return Err(TreeError::ContractViolation("max_depth must be >= 1"));
        }
        if !(self.exploration_c >= 0.0) {
            return Err(TreeError::ContractViolation(
                "exploration_c must be non-negative",
            ));
        }
        Ok(())
    }
}

/// UCT value of a child with statistics (q, visits) under a parent with
/// `parent_visits` visits. An unvisited child sorts above everything so each
/// child is tried at least once.
pub fn uct_value(q: f64, visits: u64, parent_visits: u64, c: f64) -> Result<f64, TreeError> {
    if parent_visits == 0 {
        return Err(TreeError::ContractViolation(
            "uct_value requires parent_visits >= 1",
        ));
    }
    if visits == 0 {
        return Ok(f64::INFINITY);
    }
    let n = visits as f64;
    Ok(q / n + c * ((parent_visits as f64).ln() / n).sqrt())
}

/// Arena-backed search tree. The root holds no prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchTree {
    nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn new() -> Self {
        Self {
            nodes: vec![TreeNode {
                id: NodeId(0),
                prompt_text: String::new(),
                prompt_score: None,
                q: 0.0,
                visits: 0,
                parent: None,
                children: Vec::new(),
                depth: 0,
            }],
        }
    }

    pub fn root_id(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&TreeNode, TreeError> {
        self.nodes.get(id.0).ok_or(TreeError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut TreeNode, TreeError> {
        self.nodes.get_mut(id.0).ok_or(TreeError::UnknownNode(id))
    }

    pub fn children_of(&self, id: NodeId) -> Result<&[NodeId], TreeError> {
        Ok(&self.node(id)?.children)
    }

    /// Child of `parent` maximizing the UCT value; ties break toward the
    /// lowest child index so repeated calls are stable.
    pub fn select_child(&self, parent: NodeId, config: &SearchConfig) -> Result<NodeId, TreeError> {
        let node = self.node(parent)?;
        if node.children.is_empty() {
            return Err(TreeError::NoChildren(parent));
        }
        let parent_visits = node.visits.max(1);
        let mut best = node.children[0];
        let mut best_value = f64::NEG_INFINITY;
        for &child_id in &node.children {
            let child = self.node(child_id)?;
            let value = uct_value(child.q, child.visits, parent_visits, config.exploration_c)?;
            if value > best_value {
                best_value = value;
                best = child_id;
            }
        }
        Ok(best)
    }

    /// Places a scored prompt under `parent`: reuse the sibling with an equal
    /// score when one exists, else create a node while below the branching
    /// cap, else reuse the sibling with the nearest score (ties toward the
    /// lower score). The flag reports whether an existing node was reused.
    pub fn expand_or_reuse(
        &mut self,
        parent: NodeId,
        prompt_text: &str,
        prompt_score: u8,
        config: &SearchConfig,
    ) -> Result<(NodeId, bool), TreeError> {
        let parent_depth = self.node(parent)?.depth;
        if parent_depth >= config.max_depth {
            return Err(TreeError::DepthExceeded(parent, config.max_depth));
        }
        let children = self.node(parent)?.children.clone();
        for &child_id in &children {
            if self.node(child_id)?.prompt_score == Some(prompt_score) {
                return Ok((child_id, true));
            }
        }
        if children.len() < config.max_children {
            let id = NodeId(self.nodes.len());
            self.nodes.push(TreeNode {
                id,
                prompt_text: prompt_text.to_string(),
                prompt_score: Some(prompt_score),
                q: 0.0,
                visits: 0,
                parent: Some(parent),
                children: Vec::new(),
                depth: parent_depth + 1,
            });
            self.node_mut(parent)?.children.push(id);
            return Ok((id, false));
        }
        // At the cap with no exact match: nearest score, ties to the lower one.
        let mut best = children[0];
        let mut best_key = (u8::MAX, u8::MAX);
        for &child_id in &children {
            let score = self
                .node(child_id)?
                .prompt_score
                .ok_or(TreeError::ContractViolation("non-root child without score"))?;
            let key = (score.abs_diff(prompt_score), score);
            if key < best_key {
                best_key = key;
                best = child_id;
            }
        }
        Ok((best, true))
    }

    /// Adds `reward` and one visit to every node from `leaf` up to the root.
    pub fn backpropagate(&mut self, leaf: NodeId, reward: f64) -> Result<(), TreeError> {
        let mut current = Some(leaf);
        // Validate before mutating so a bad id leaves the tree untouched.
        self.node(leaf)?;
        while let Some(id) = current {
            let node = self.node_mut(id)?;
            node.visits += 1;
            node.q += reward;
            current = node.parent;
        }
        Ok(())
    }

    /// Greedy root-to-leaf descent by mean reward over visited children;
    /// unvisited children are skipped, and the walk stops where no visited
    /// child remains.
    pub fn best_path(&self) -> Result<Vec<NodeId>, TreeError> {
        let root = self.node(self.root_id())?;
        if root.visits == 0 {
            return Err(TreeError::EmptyTree);
        }
        let mut path = vec![self.root_id()];
        let mut current = self.root_id();
        loop {
            let mut best: Option<(f64, NodeId)> = None;
            for &child_id in &self.node(current)?.children {
                let child = self.node(child_id)?;
                if child.visits == 0 {
                    continue;
                }
                let mean = child.q / child.visits as f64;
                match best {
                    Some((best_mean, _)) if mean <= best_mean => {}
                    _ => best = Some((mean, child_id)),
                }
            }
            match best {
                Some((_, next)) => {
                    path.push(next);
                    current = next;
                }
                None => return Ok(path),
            }
        }
    }

    /// Flat export for reports: one record per node, ordered by id.
    pub fn snapshot(&self) -> TreeSnapshot {
        TreeSnapshot {
            nodes: self
                .nodes
                .iter()
                .map(|n| SnapshotNode {
                    id: n.id.0,
                    parent: n.parent.map(|p| p.0),
                    prompt_text: n.prompt_text.clone(),
                    prompt_score: n.prompt_score,
                    q: n.q,
                    visits: n.visits,
                    depth: n.depth,
                })
                .collect(),
        }
    }
}

impl Default for SearchTree {
    fn default() -> Self {
        Self::new()
    }
}

/// Immutable tree export used by `report --tree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSnapshot {
    pub nodes: Vec<SnapshotNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub prompt_text: String,
    pub prompt_score: Option<u8>,
    pub q: f64,
    pub visits: u64,
    pub depth: usize,
}
