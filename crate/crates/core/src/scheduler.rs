//! Frontier-branch scheduling.
//!
//! Each frontier branch carries a productive clock `pt` (time spent on inputs
//! that lowered the branch's minimum distance) and a total clock `tt` (time
//! spent on all inputs reaching it). The next stage mutates the top seed of
//! the branch maximising `pt / (tt * sc)`, where `sc` counts how often that
//! seed has already been scheduled.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use thiserror::Error;

use crate::distance::{BranchDistance, DistanceError, DistanceRecord};
use crate::frontier::FrontierSet;
use crate::target::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchedulerError {
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("site {0} is not on the frontier")]
    NotFrontier(NodeId),
    #[error("frontier branch {0} has never been reached")]
    MissingStats(NodeId),
    #[error(transparent)]
    Distance(#[from] DistanceError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchStats {
    pub pt: u64,
    pub tt: u64,
    pub ph: u64,
    pub th: u64,
    pub ts: DistanceRecord,
}

impl BranchStats {
    fn new(site: NodeId) -> Self {
        BranchStats {
            pt: 0,
            tt: 0,
            ph: 0,
            th: 0,
            ts: DistanceRecord::new(site),
        }
    }
}

/// Schedule counts per seed, implicitly 1 for seeds never scheduled.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ScheduleCounters {
    counts: BTreeMap<Vec<u8>, u64>,
}

impl ScheduleCounters {
    pub fn get(&self, seed: &[u8]) -> u64 {
        self.counts.get(seed).copied().unwrap_or(1)
    }

    pub fn increment(&mut self, seed: &[u8]) {
        *self.counts.entry(seed.to_vec()).or_insert(1) += 1;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub branch: NodeId,
    pub seed: Vec<u8>,
    /// `ln pt - ln tt - ln sc`, with `sc` taken before the increment.
    pub logprob: f64,
    pub sc: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Scheduler {
    stats: BTreeMap<NodeId, BranchStats>,
    counters: ScheduleCounters,
    frontier: FrontierSet,
}

impl Scheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_frontier(&mut self, frontier: FrontierSet) {
        self.frontier = frontier;
    }

    pub fn frontier(&self) -> &FrontierSet {
        &self.frontier
    }

    pub fn stats(&self, site: NodeId) -> Option<&BranchStats> {
        self.stats.get(&site)
    }

    pub fn counters(&self) -> &ScheduleCounters {
        &self.counters
    }

    /// Frontier branches that have no statistics yet.
    pub fn unreached(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.frontier
            .iter()
            .copied()
            .filter(|b| !self.stats.contains_key(b))
    }

    /// Charges one execution to `site`. Returns whether it lowered the
    /// branch's minimum distance.
    pub fn record_execution(
        &mut self,
        site: NodeId,
        input: &[u8],
        d: &BranchDistance,
        exec_time: u64,
    ) -> Result<bool, SchedulerError> {
        if !self.frontier.contains(&site) {
            return Err(SchedulerError::NotFrontier(site));
        }
        let stats = self
            .stats
            .entry(site)
            .or_insert_with(|| BranchStats::new(site));
        let lowered = stats.ts.update(input, d)?;
        stats.tt += exec_time;
        stats.th += 1;
        if lowered {
            stats.pt += exec_time;
            stats.ph += 1;
        }
        Ok(lowered)
    }

    /// Picks the frontier branch with the highest discounted productive
    /// ratio (lowest id on ties) and charges its top seed one schedule.
    pub fn select_next(&mut self) -> Result<Selection, SchedulerError> {
        let mut best: Option<(NodeId, &BranchStats, u64)> = None;
        for &branch in &self.frontier {
            let stats = self
                .stats
                .get(&branch)
                .ok_or(SchedulerError::MissingStats(branch))?;
            let sc = self.counters.get(&stats.ts.best_input);
            let better = match best {
                None => true,
                Some((_, other, other_sc)) => beats(stats, sc, other, other_sc),
            };
            if better {
                best = Some((branch, stats, sc));
            }
        }
        let (branch, stats, sc) = best.ok_or(SchedulerError::EmptyFrontier)?;
        let selection = Selection {
            branch,
            seed: stats.ts.best_input.clone(),
            logprob: log_probability(stats.pt, stats.tt, sc),
            sc,
        };
        self.counters.increment(&selection.seed);
        Ok(selection)
    }
}

pub fn log_probability(pt: u64, tt: u64, sc: u64) -> f64 {
    (pt as f64).ln() - (tt as f64).ln() - (sc as f64).ln()
}

/// `pt/(tt*sc) > pt'/(tt'*sc')`, evaluated exactly by cross-multiplication.
fn beats(a: &BranchStats, a_sc: u64, b: &BranchStats, b_sc: u64) -> bool {
    let lhs = BigUint::from(a.pt) * BigUint::from(b.tt) * BigUint::from(b_sc);
    let rhs = BigUint::from(b.pt) * BigUint::from(a.tt) * BigUint::from(a_sc);
    lhs > rhs
}
