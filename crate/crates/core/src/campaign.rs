//! The fuzzing control loop.
//!
//! Each stage picks a seed, mutates it and folds every execution back into
//! coverage, corpus and scheduler state. Three modes are supported:
//!
//! - `Fox`: frontier-branch scheduling plus local search and Newton steps.
//! - `FoxSched`: frontier-branch scheduling plus plain havoc batches.
//! - `Base`: corpus round-robin plus plain havoc batches.
//!
//! With [`Clock::Synthetic`] every execution costs one time unit and a
//! campaign bounded by executions is bit-for-bit reproducible.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distance::{observation_distance, BranchDistance};
use crate::frontier::{recompute_frontier, CoverageMap, FrontierSet, FrontierTracker};
use crate::havoc::{havoc_mutate, HavocConfig};
use crate::mutator::{mutate_stage, Executor, HotByteSet, MutatorConfig, MutatorError, MutatorState};
use crate::scheduler::Scheduler;
use crate::target::{edge_source, Clock, EdgeId, ExecutionTrace, GuardProgram, Harness, NodeId};

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("no seeds given")]
    EmptySeeds,
    #[error("seed {index} has {len} bytes, target accepts at most {max}")]
    SeedTooLong { index: usize, len: usize, max: usize },
    #[error("budget must bound executions or time")]
    UnboundedBudget,
    #[error(transparent)]
    Mutator(#[from] MutatorError),
    #[error("input does not reach site {0}")]
    NotReached(NodeId),
    #[error("probe inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Report(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "fox")]
    Fox,
    #[serde(rename = "sched")]
    FoxSched,
    #[serde(rename = "base")]
    Base,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Fox, Mode::FoxSched, Mode::Base];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Fox => "fox",
            Mode::FoxSched => "sched",
            Mode::Base => "base",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode `{s}` (expected fox, sched or base)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub max_execs: Option<u64>,
    pub max_time: Option<Duration>,
}

impl Budget {
    pub fn execs(n: u64) -> Self {
        Budget {
            max_execs: Some(n),
            max_time: None,
        }
    }

    pub fn time(d: Duration) -> Self {
        Budget {
            max_execs: None,
            max_time: Some(d),
        }
    }

    fn validate(&self) -> Result<(), CampaignError> {
        if self.max_execs.is_none() && self.max_time.is_none() {
            return Err(CampaignError::UnboundedBudget);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusEntry {
    pub input: Vec<u8>,
    /// Edges this entry covered first.
    pub new_edges: Vec<EdgeId>,
    pub exec_index: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    /// Top seeds that never made it into the corpus proper.
    pub side_pool: BTreeSet<Vec<u8>>,
}

/// One line of `stats.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t_ns: u64,
    pub execs: u64,
    pub edges_covered: usize,
    pub frontier_size: usize,
    pub corpus_size: usize,
    pub flips: u64,
    pub mode: Mode,
    pub stage: u64,
    pub scheduled_branch: Option<NodeId>,
    /// Edges first covered during this stage.
    pub new_edges: usize,
    pub logprob: Option<f64>,
    pub sc: Option<u64>,
    pub findings: usize,
    /// Stage fell back to corpus round-robin because the frontier was empty.
    pub fallback: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CampaignLog {
    pub records: Vec<LogRecord>,
}

impl CampaignLog {
    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn to_jsonl(&self) -> Result<String, serde_json::Error> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(CampaignLog { records })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CampaignConfig {
    pub mode: Mode,
    pub budget: Budget,
    pub mutator: MutatorConfig,
    pub rng_seed: u64,
    pub clock: Clock,
    /// Run midpoint convexity probes around every Newton step. Probe
    /// executions bypass the budget and do not touch campaign state.
    pub probe_convexity: bool,
}

impl CampaignConfig {
    pub fn new(mode: Mode, budget: Budget, rng_seed: u64) -> Self {
        CampaignConfig {
            mode,
            budget,
            mutator: MutatorConfig {
                rng_seed,
                ..MutatorConfig::default()
            },
            rng_seed,
            clock: Clock::Synthetic,
            probe_convexity: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub node: NodeId,
    pub input: Vec<u8>,
    pub exec_index: u64,
}

/// A frontier branch flipped during a stage, with the distances involved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlipEvent {
    pub stage: u64,
    pub site: NodeId,
    pub exec_index: u64,
    pub distance: Option<BranchDistance>,
    pub prior_min: Option<BranchDistance>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvexityStats {
    pub passes: u64,
    pub fails: u64,
    /// Midpoints that did not reach the site.
    pub skipped: u64,
}

impl ConvexityStats {
    pub fn record(&mut self, outcome: ProbeOutcome) {
        match outcome {
            ProbeOutcome::Pass => self.passes += 1,
            ProbeOutcome::Fail => self.fails += 1,
            ProbeOutcome::NotProbed => self.skipped += 1,
        }
    }

    /// Passes over probes that reached the site.
    pub fn ratio(&self) -> Option<f64> {
        let reached = self.passes + self.fails;
        (reached > 0).then(|| self.passes as f64 / reached as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbeOutcome {
    Pass,
    Fail,
    NotProbed,
}

/// Byte-wise `floor((x1 + x2) / 2)`.
pub fn midpoint(x1: &[u8], x2: &[u8]) -> Vec<u8> {
    x1.iter()
        .zip(x2)
        .map(|(a, b)| ((*a as u16 + *b as u16) / 2) as u8)
        .collect()
}

/// Midpoint convexity check: does `d(mid) <= (d(x1) + d(x2)) / 2` hold at
/// `site`? `site` must be active on `harness`.
pub fn convexity_probe(
    site: NodeId,
    x1: &[u8],
    x2: &[u8],
    harness: &Harness,
) -> Result<ProbeOutcome, CampaignError> {
    if x1.len() != x2.len() {
        return Err(CampaignError::LengthMismatch(x1.len(), x2.len()));
    }
    let distance_at = |x: &[u8]| {
        harness
            .execute(x)
            .observation(site)
            .map(|o| observation_distance(o).magnitude())
    };
    let d1 = distance_at(x1).ok_or(CampaignError::NotReached(site))?;
    let d2 = distance_at(x2).ok_or(CampaignError::NotReached(site))?;
    Ok(match distance_at(&midpoint(x1, x2)) {
        None => ProbeOutcome::NotProbed,
        Some(dm) if 2 * dm <= d1 + d2 => ProbeOutcome::Pass,
        Some(_) => ProbeOutcome::Fail,
    })
}

#[derive(Clone, Debug)]
pub struct CampaignOutcome {
    pub log: CampaignLog,
    pub corpus: Corpus,
    pub coverage: CoverageMap,
    pub findings: Vec<Finding>,
    pub flip_events: Vec<FlipEvent>,
    pub convexity: BTreeMap<NodeId, ConvexityStats>,
    pub hot_bytes: BTreeMap<NodeId, HotByteSet>,
    /// Executions spent on convexity probes (not part of `execs`).
    pub probe_execs: u64,
}

impl CampaignOutcome {
    pub fn edges_covered(&self) -> usize {
        self.coverage.edges_covered()
    }
}

struct Engine {
    program: Arc<GuardProgram>,
    harness: Harness,
    coverage: CoverageMap,
    tracker: FrontierTracker,
    corpus: Corpus,
    scheduler: Scheduler,
    budget: Budget,
    started: Instant,
    execs: u64,
    clock_ns: u64,
    stage: u64,
    stage_frontier: FrontierSet,
    flips: u64,
    flip_events: Vec<FlipEvent>,
    findings: Vec<Finding>,
    /// First input seen visiting each node.
    first_visit: Vec<Option<Vec<u8>>>,
}

impl Engine {
    fn exhausted(&self) -> bool {
        self.budget.max_execs.is_some_and(|n| self.execs >= n)
            || self
                .budget
                .max_time
                .is_some_and(|t| u128::from(self.t_ns()) >= t.as_nanos())
    }

    fn t_ns(&self) -> u64 {
        match self.harness.clock() {
            Clock::Synthetic => self.clock_ns,
            Clock::Wall => self.started.elapsed().as_nanos() as u64,
        }
    }

    fn begin_stage(&mut self, frontier: &FrontierSet) {
        self.stage += 1;
        self.harness
            .set_active_sites(frontier.iter().copied())
            .expect("frontier nodes belong to the program");
        self.scheduler.set_frontier(frontier.clone());
        self.stage_frontier = frontier.clone();
    }

    fn execute_unbounded(&mut self, input: &[u8]) -> ExecutionTrace {
        let trace = self.harness.execute(input);
        let exec_index = self.execs;
        self.execs += 1;
        self.clock_ns += trace.exec_time;

        let fresh = self
            .coverage
            .absorb_edges(&self.program, &trace)
            .expect("harness only emits program edges");
        self.tracker.update(&self.coverage, &self.program, &fresh);
        for &edge in &trace.edges {
            for node in [Some(edge_source(edge)), self.program.edge_target(edge)]
                .into_iter()
                .flatten()
            {
                if self.first_visit[node].is_none() {
                    self.first_visit[node] = Some(input.to_vec());
                }
            }
        }
        for &edge in &fresh {
            let site = edge_source(edge);
            if self.stage_frontier.contains(&site) {
                self.flips += 1;
                self.flip_events.push(FlipEvent {
                    stage: self.stage,
                    site,
                    exec_index,
                    distance: trace.observation(site).map(observation_distance),
                    prior_min: self
                        .scheduler
                        .stats(site)
                        .and_then(|s| s.ts.best.clone()),
                });
            }
        }
        if !fresh.is_empty() {
            self.corpus.entries.push(CorpusEntry {
                input: input.to_vec(),
                new_edges: fresh,
                exec_index,
            });
        }
        if let Some(node) = trace.finding {
            if !self.findings.iter().any(|f| f.node == node) {
                self.findings.push(Finding {
                    node,
                    input: input.to_vec(),
                    exec_index,
                });
            }
        }
        for obs in &trace.observations {
            let d = observation_distance(obs);
            let recorded = self
                .scheduler
                .record_execution(obs.site, input, &d, trace.exec_time);
            debug_assert!(recorded.is_ok(), "{recorded:?}");
        }
        trace
    }

    fn record(&self, log: &mut CampaignLog, mode: Mode, stage_info: StageInfo) {
        log.records.push(LogRecord {
            t_ns: self.t_ns(),
            execs: self.execs,
            edges_covered: self.coverage.edges_covered(),
            frontier_size: self.tracker.frontier().len(),
            corpus_size: self.corpus.entries.len(),
            flips: self.flips,
            mode,
            stage: self.stage,
            scheduled_branch: stage_info.branch,
            new_edges: stage_info.new_edges,
            logprob: stage_info.logprob,
            sc: stage_info.sc,
            findings: self.findings.len(),
            fallback: stage_info.fallback,
        });
    }

    fn havoc_batch(&mut self, seed: &[u8], k: usize, havoc: &HavocConfig, rng: &mut ChaCha8Rng) {
        for _ in 0..k {
            let mutant = havoc_mutate(seed, havoc, rng);
            if self.run(&mutant).is_none() {
                break;
            }
        }
    }
}

impl Executor for Engine {
    fn run(&mut self, input: &[u8]) -> Option<ExecutionTrace> {
        if self.exhausted() {
            return None;
        }
        Some(self.execute_unbounded(input))
    }

    fn edges_covered(&self) -> usize {
        self.coverage.edges_covered()
    }

    fn flips(&self) -> u64 {
        self.flips
    }
}

#[derive(Default)]
struct StageInfo {
    branch: Option<NodeId>,
    new_edges: usize,
    logprob: Option<f64>,
    sc: Option<u64>,
    fallback: bool,
}

/// Runs one campaign to the end of its budget.
pub fn run(
    program: Arc<GuardProgram>,
    seeds: &[Vec<u8>],
    cfg: &CampaignConfig,
) -> Result<CampaignOutcome, CampaignError> {
    if seeds.is_empty() {
        return Err(CampaignError::EmptySeeds);
    }
    for (index, seed) in seeds.iter().enumerate() {
        if seed.len() > program.max_input_len() {
            return Err(CampaignError::SeedTooLong {
                index,
                len: seed.len(),
                max: program.max_input_len(),
            });
        }
    }
    cfg.budget.validate()?;
    cfg.mutator.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let max_len = program.max_input_len();
    let conventional = HavocConfig::conventional(max_len);
    let k = cfg.mutator.sample_size;
    let mut engine = Engine {
        harness: Harness::new(program.clone(), cfg.clock),
        coverage: CoverageMap::new(&program),
        tracker: FrontierTracker::new(),
        corpus: Corpus::default(),
        scheduler: Scheduler::new(),
        budget: cfg.budget,
        started: Instant::now(),
        execs: 0,
        clock_ns: 0,
        stage: 0,
        stage_frontier: FrontierSet::new(),
        flips: 0,
        flip_events: Vec::new(),
        findings: Vec::new(),
        first_visit: vec![None; program.node_count()],
        program,
    };
    let mut log = CampaignLog::default();
    let mut mutator_state = MutatorState::default();
    let mut convexity: BTreeMap<NodeId, ConvexityStats> = BTreeMap::new();
    let mut probe_execs = 0u64;
    let mut round_robin = 0usize;

    for seed in seeds {
        engine.execute_unbounded(seed);
    }
    engine.record(
        &mut log,
        cfg.mode,
        StageInfo {
            new_edges: engine.coverage.edges_covered(),
            ..StageInfo::default()
        },
    );

    while !engine.exhausted() {
        let frontier = engine.tracker.frontier().clone();
        debug_assert_eq!(frontier, recompute_frontier(&engine.coverage, &engine.program));
        engine.begin_stage(&frontier);
        let edges_before = engine.coverage.edges_covered();
        let mut info = StageInfo::default();

        let mut scheduled = None;
        if cfg.mode != Mode::Base {
            // Newly visited frontier branches have no clocks yet: replay an
            // input known to reach each of them.
            let pending: Vec<NodeId> = engine.scheduler.unreached().collect();
            for branch in pending {
                if engine.scheduler.stats(branch).is_some() {
                    continue;
                }
                let input = engine.first_visit[branch]
                    .clone()
                    .expect("frontier nodes are visited");
                if engine.run(&input).is_none() {
                    break;
                }
            }
            if engine.exhausted() {
                break;
            }
            if !frontier.is_empty() {
                scheduled = Some(engine.scheduler.select_next().expect("every frontier branch has clocks"));
            }
        }

        match (&scheduled, cfg.mode) {
            (Some(selection), Mode::Fox) => {
                info.branch = Some(selection.branch);
                info.logprob = Some(selection.logprob);
                info.sc = Some(selection.sc);
                let report = mutate_stage(
                    &selection.seed,
                    &frontier,
                    &cfg.mutator,
                    max_len,
                    &mut engine,
                    &mut mutator_state,
                    &mut rng,
                );
                if cfg.probe_convexity {
                    for attempt in &report.attempts {
                        let stats = convexity.entry(attempt.site).or_default();
                        for (a, b) in [
                            (&selection.seed, &attempt.witness),
                            (&attempt.witness, &attempt.output),
                        ] {
                            probe_execs += 3;
                            if let Ok(outcome) = convexity_probe(attempt.site, a, b, &engine.harness) {
                                stats.record(outcome);
                            }
                        }
                    }
                }
            }
            (Some(selection), _) => {
                info.branch = Some(selection.branch);
                info.logprob = Some(selection.logprob);
                info.sc = Some(selection.sc);
                let seed = selection.seed.clone();
                engine.havoc_batch(&seed, k, &conventional, &mut rng);
            }
            (None, mode) => {
                info.fallback = mode != Mode::Base;
                let entry = &engine.corpus.entries[round_robin % engine.corpus.entries.len()];
                let seed = entry.input.clone();
                round_robin += 1;
                engine.havoc_batch(&seed, k, &conventional, &mut rng);
            }
        }
        info.new_edges = engine.coverage.edges_covered() - edges_before;
        engine.record(&mut log, cfg.mode, info);
    }

    let in_corpus: BTreeSet<&[u8]> = engine.corpus.entries.iter().map(|e| e.input.as_slice()).collect();
    let side_pool: BTreeSet<Vec<u8>> = engine
        .tracker
        .frontier()
        .iter()
        .filter_map(|b| engine.scheduler.stats(*b))
        .map(|s| s.ts.best_input.clone())
        .filter(|s| !in_corpus.contains(s.as_slice()))
        .collect();
    engine.corpus.side_pool = side_pool;

    Ok(CampaignOutcome {
        log,
        corpus: engine.corpus,
        coverage: engine.coverage,
        findings: engine.findings,
        flip_events: engine.flip_events,
        convexity,
        hot_bytes: mutator_state.hot_bytes,
        probe_execs,
    })
}

/// Writes `stats.jsonl`, `corpus/` and `findings/` (plus `convexity.json`
/// when probes ran) under `out`.
pub fn write_outputs(out: &Path, outcome: &CampaignOutcome) -> Result<(), CampaignError> {
    std::fs::create_dir_all(out.join("corpus"))?;
    std::fs::create_dir_all(out.join("findings"))?;
    std::fs::write(out.join("stats.jsonl"), outcome.log.to_jsonl()?)?;
    for entry in &outcome.corpus.entries {
        std::fs::write(out.join("corpus").join(format!("{:010}", entry.exec_index)), &entry.input)?;
    }
    for finding in &outcome.findings {
        std::fs::write(
            out.join("findings").join(format!("{:010}", finding.exec_index)),
            &finding.input,
        )?;
    }
    if !outcome.convexity.is_empty() {
        std::fs::write(
            out.join("convexity.json"),
            serde_json::to_string_pretty(&outcome.convexity)?,
        )?;
    }
    Ok(())
}

/// Reads every regular file in `dir` (sorted by name) as a seed.
pub fn read_seed_dir(dir: &Path) -> Result<Vec<Vec<u8>>, CampaignError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    paths
        .into_iter()
        .map(|p| std::fs::read(p).map_err(CampaignError::from))
        .collect()
}
