//! Visited/unvisited classification and the frontier branch set.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::target::{edge_source, nottaken_edge, taken_edge, EdgeId, ExecutionTrace, GuardProgram, NodeId};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrontierError {
    #[error("edge {0} does not belong to the program")]
    UnknownEdge(EdgeId),
}

/// Accumulated edge hits and the node classification derived from them.
/// Bits are only ever set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageMap {
    edge_hits: Vec<bool>,
    node_visited: Vec<bool>,
    covered: usize,
}

impl CoverageMap {
    pub fn new(program: &GuardProgram) -> Self {
        CoverageMap {
            edge_hits: vec![false; program.edge_space()],
            node_visited: vec![false; program.node_count()],
            covered: 0,
        }
    }

    pub fn edge_hit(&self, edge: EdgeId) -> bool {
        self.edge_hits.get(edge).copied().unwrap_or(false)
    }

    pub fn node_visited(&self, node: NodeId) -> bool {
        self.node_visited.get(node).copied().unwrap_or(false)
    }

    pub fn visited_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_visited.len()).filter(|n| self.node_visited[*n])
    }

    pub fn edges_covered(&self) -> usize {
        self.covered
    }

    /// Records the trace and returns the previously unseen edges, in path
    /// order. The map is left untouched if any edge is unknown.
    pub fn absorb_edges(
        &mut self,
        program: &GuardProgram,
        trace: &ExecutionTrace,
    ) -> Result<Vec<EdgeId>, FrontierError> {
        if let Some(bad) = trace.edges.iter().find(|e| !program.is_edge(**e)) {
            return Err(FrontierError::UnknownEdge(*bad));
        }
        let mut fresh = Vec::new();
        for &edge in &trace.edges {
            self.node_visited[edge_source(edge)] = true;
            if let Some(target) = program.edge_target(edge) {
                self.node_visited[target] = true;
            }
            if !self.edge_hits[edge] {
                self.edge_hits[edge] = true;
                self.covered += 1;
                fresh.push(edge);
            }
        }
        Ok(fresh)
    }

    /// Records the trace; returns the number of previously unseen edges.
    pub fn absorb_trace(
        &mut self,
        program: &GuardProgram,
        trace: &ExecutionTrace,
    ) -> Result<usize, FrontierError> {
        self.absorb_edges(program, trace).map(|fresh| fresh.len())
    }
}

/// Visited guard nodes with at least one unexercised outgoing edge.
pub type FrontierSet = BTreeSet<NodeId>;

fn is_frontier(cov: &CoverageMap, program: &GuardProgram, node: NodeId) -> bool {
    program.node(node).is_some_and(|n| n.is_guard())
        && cov.node_visited(node)
        && !(cov.edge_hit(taken_edge(node)) && cov.edge_hit(nottaken_edge(node)))
}

/// From-scratch frontier computation.
pub fn recompute_frontier(cov: &CoverageMap, program: &GuardProgram) -> FrontierSet {
    cov.visited_nodes()
        .filter(|n| is_frontier(cov, program, *n))
        .collect()
}

/// Incrementally maintained frontier; must agree with [`recompute_frontier`]
/// after every update.
#[derive(Clone, Debug, Default)]
pub struct FrontierTracker {
    frontier: FrontierSet,
}

impl FrontierTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frontier(&self) -> &FrontierSet {
        &self.frontier
    }

    /// Folds in edges that `cov` just reported as new.
    pub fn update(&mut self, cov: &CoverageMap, program: &GuardProgram, fresh: &[EdgeId]) {
        for &edge in fresh {
            for node in [Some(edge_source(edge)), program.edge_target(edge)]
                .into_iter()
                .flatten()
            {
                if is_frontier(cov, program, node) {
                    self.frontier.insert(node);
                } else {
                    self.frontier.remove(&node);
                }
            }
        }
    }
}
