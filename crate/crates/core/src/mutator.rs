//! Branch-aware mutation: local search for a subgradient of each frontier
//! branch's distance, then one Newton step toward its root.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use rand::Rng;
use thiserror::Error;

use crate::distance::{observation_distance, BranchDistance, DistanceRule};
use crate::frontier::FrontierSet;
use crate::havoc::{havoc_mutate, HavocConfig};
use crate::target::{BranchObservation, ExecutionTrace, IntOperand, NodeId, ObservedValue};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MutatorError {
    #[error("subgradient has zero norm")]
    ZeroGradient,
    #[error("invalid mutator config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MutatorConfig {
    /// Local-search sample size `k`.
    pub sample_size: usize,
    pub havoc_stack_max: usize,
    pub havoc_bytes_per_op: usize,
    pub rng_seed: u64,
}

impl Default for MutatorConfig {
    fn default() -> Self {
        MutatorConfig {
            sample_size: 1024,
            havoc_stack_max: 4,
            havoc_bytes_per_op: 4,
            rng_seed: 0,
        }
    }
}

impl MutatorConfig {
    pub fn validate(&self) -> Result<(), MutatorError> {
        if self.sample_size < 2 {
            return Err(MutatorError::Config("sample size must be at least 2".into()));
        }
        if self.havoc_stack_max < 1 {
            return Err(MutatorError::Config("havoc stack must be at least 1".into()));
        }
        if self.havoc_bytes_per_op < 1 {
            return Err(MutatorError::Config("havoc bytes per op must be at least 1".into()));
        }
        Ok(())
    }

    pub fn local_havoc(&self, max_len: usize) -> HavocConfig {
        HavocConfig::local(self.havoc_stack_max, self.havoc_bytes_per_op, max_len)
    }
}

/// Something that runs inputs on the target and does the bookkeeping
/// (coverage, corpus, scheduler clocks) for every execution.
pub trait Executor {
    /// Runs one input, or returns `None` once the execution budget is spent.
    fn run(&mut self, input: &[u8]) -> Option<ExecutionTrace>;
    fn edges_covered(&self) -> usize;
    fn flips(&self) -> u64;
}

pub type SparseVector = BTreeMap<usize, BigRational>;

pub fn l1_norm(v: &SparseVector) -> BigRational {
    v.values().fold(BigRational::zero(), |acc, c| acc + c.abs())
}

fn rational(v: i128) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Element-wise `(d(mutant) - d(seed)) / (mutant - seed)` over the bytes
/// where the inputs differ. Vector distances contribute their L1 norm.
pub fn compute_subgradient(
    seed: &[u8],
    mutant: &[u8],
    d_seed: &BranchDistance,
    d_mut: &BranchDistance,
) -> SparseVector {
    let delta = d_mut.magnitude() - d_seed.magnitude();
    let len = seed.len().max(mutant.len());
    let mut g = SparseVector::new();
    for j in 0..len {
        let a = seed.get(j).copied().unwrap_or(0) as i128;
        let b = mutant.get(j).copied().unwrap_or(0) as i128;
        if a != b {
            g.insert(j, BigRational::new(BigInt::from(delta), BigInt::from(b - a)));
        }
    }
    g
}

/// Coordinates a subgradient is expressed in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GradientSpace {
    /// One coordinate per input byte.
    Bytes,
    /// A single coordinate: the integer operand value.
    Operand(IntOperand),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgradient {
    pub space: GradientSpace,
    pub components: SparseVector,
}

impl Subgradient {
    pub fn l1(&self) -> BigRational {
        l1_norm(&self.components)
    }

    pub fn is_zero(&self) -> bool {
        self.components.values().all(Zero::is_zero)
    }
}

/// Slope of the distance with respect to the operand value; `None` when the
/// operand did not change.
pub fn operand_slope(
    operand: &IntOperand,
    seed: &[u8],
    mutant: &[u8],
    d_seed: &BranchDistance,
    d_mut: &BranchDistance,
) -> Option<BigRational> {
    let dv = operand.read(mutant) - operand.read(seed);
    if dv == 0 {
        return None;
    }
    let dd = d_mut.magnitude() - d_seed.magnitude();
    Some(BigRational::new(BigInt::from(dd), BigInt::from(dv)))
}

fn site_subgradient(
    seed: &[u8],
    seed_obs: &BranchObservation,
    mutant: &[u8],
    mut_obs: &BranchObservation,
) -> Subgradient {
    let d_seed = observation_distance(seed_obs);
    let d_mut = observation_distance(mut_obs);
    match &mut_obs.value {
        ObservedValue::Int { operand, .. } => {
            let mut components = SparseVector::new();
            if let Some(slope) = operand_slope(operand, seed, mutant, &d_seed, &d_mut) {
                components.insert(operand.offset, slope);
            }
            Subgradient {
                space: GradientSpace::Operand(*operand),
                components,
            }
        }
        _ => Subgradient {
            space: GradientSpace::Bytes,
            components: compute_subgradient(seed, mutant, &d_seed, &d_mut),
        },
    }
}

/// Best (largest-norm) subgradient seen for one site, with the mutant that
/// produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgradientRecord {
    pub g: Subgradient,
    pub witness: Vec<u8>,
    pub witness_obs: BranchObservation,
}

impl SubgradientRecord {
    pub fn witness_distance(&self) -> BranchDistance {
        observation_distance(&self.witness_obs)
    }
}

/// Samples `k` neighbours of `seed` and keeps, per frontier site they reach,
/// the neighbour whose subgradient has the largest L1 norm. `seed_trace` is
/// the seed's own execution, used as the reference point.
pub fn local_search<E: Executor, R: Rng + ?Sized>(
    seed: &[u8],
    seed_trace: &ExecutionTrace,
    frontier: &FrontierSet,
    k: usize,
    havoc: &HavocConfig,
    exec: &mut E,
    rng: &mut R,
) -> BTreeMap<NodeId, SubgradientRecord> {
    let mut records: BTreeMap<NodeId, SubgradientRecord> = BTreeMap::new();
    let reference: BTreeMap<NodeId, &BranchObservation> = seed_trace
        .observations
        .iter()
        .filter(|o| frontier.contains(&o.site))
        .map(|o| (o.site, o))
        .collect();
    if reference.is_empty() {
        return records;
    }
    for _ in 0..k {
        let mutant = havoc_mutate(seed, havoc, rng);
        let Some(trace) = exec.run(&mutant) else {
            break;
        };
        for obs in &trace.observations {
            let Some(seed_obs) = reference.get(&obs.site) else {
                continue;
            };
            let g = site_subgradient(seed, seed_obs, &mutant, obs);
            let keep = match records.get(&obs.site) {
                None => true,
                Some(existing) => g.l1() > existing.g.l1(),
            };
            if keep {
                records.insert(
                    obs.site,
                    SubgradientRecord {
                        g,
                        witness: mutant.clone(),
                        witness_obs: obs.clone(),
                    },
                );
            }
        }
    }
    records
}

fn clamp_byte(v: &BigRational) -> u8 {
    let r = v.round().to_integer();
    if r.is_negative() {
        0
    } else {
        r.to_u8().unwrap_or(u8::MAX)
    }
}

/// Byte-space Newton step `x - d / g`, applied to each nonzero component,
/// rounded half away from zero and clamped to a byte.
pub fn newton_step(
    witness: &[u8],
    d: &BranchDistance,
    g: &SparseVector,
) -> Result<Vec<u8>, MutatorError> {
    if l1_norm(g).is_zero() {
        return Err(MutatorError::ZeroGradient);
    }
    let delta = rational(d.magnitude());
    let mut out = witness.to_vec();
    for (&j, gj) in g {
        if gj.is_zero() || j >= out.len() {
            continue;
        }
        let next = rational(out[j] as i128) - &delta / gj;
        out[j] = clamp_byte(&next);
    }
    Ok(out)
}

/// Newton step on an integer operand: solve for the operand value, then
/// write it back with the operand's width, endianness and signedness.
pub fn newton_operand(
    witness: &[u8],
    d: &BranchDistance,
    operand: &IntOperand,
    slope: &BigRational,
) -> Result<Vec<u8>, MutatorError> {
    if slope.is_zero() {
        return Err(MutatorError::ZeroGradient);
    }
    let value = rational(operand.read(witness)) - rational(d.magnitude()) / slope;
    let (lo, hi) = operand.range();
    let rounded = value.round().to_integer();
    let target = rounded
        .to_i128()
        .unwrap_or(if rounded.is_negative() { lo } else { hi })
        .clamp(lo, hi);
    let mut out = witness.to_vec();
    operand.write(&mut out, target);
    Ok(out)
}

/// Input positions feeding one string comparison.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HotByteSet {
    pub site: NodeId,
    /// Sorted, contiguous.
    pub offsets: Vec<usize>,
    pub compared_length: usize,
    /// Change of the compared byte difference per unit change of the input
    /// byte, as measured by the successful probe.
    pub byte_slope: BigRational,
}

impl HotByteSet {
    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    fn empty(site: NodeId) -> Self {
        HotByteSet {
            site,
            offsets: Vec::new(),
            compared_length: 0,
            byte_slope: BigRational::zero(),
        }
    }
}

fn string_diffs(trace: &ExecutionTrace, site: NodeId) -> Option<(&[i128], usize)> {
    match &trace.observation(site)?.value {
        ObservedValue::Str {
            byte_diffs,
            compared_length,
        } => Some((byte_diffs, *compared_length)),
        _ => None,
    }
}

/// Finds the input window of a string comparison by replaying the seed with
/// one byte of the mutant at a time. The first probe that moves a compared
/// byte locates the window; the rest is filled in by adjacency.
pub fn infer_hot_bytes<E: Executor>(
    seed: &[u8],
    mutant: &[u8],
    site: NodeId,
    exec: &mut E,
) -> HotByteSet {
    let differing: Vec<usize> = (0..seed.len().min(mutant.len()))
        .filter(|j| seed[*j] != mutant[*j])
        .collect();
    if differing.is_empty() {
        return HotByteSet::empty(site);
    }
    let Some(seed_trace) = exec.run(seed) else {
        return HotByteSet::empty(site);
    };
    let Some((seed_diffs, _)) = string_diffs(&seed_trace, site) else {
        return HotByteSet::empty(site);
    };
    let seed_diffs = seed_diffs.to_vec();
    for j in differing {
        let mut probe = seed.to_vec();
        probe[j] = mutant[j];
        let Some(trace) = exec.run(&probe) else {
            break;
        };
        let Some((diffs, compared_length)) = string_diffs(&trace, site) else {
            continue;
        };
        let Some(index) = (0..diffs.len().min(seed_diffs.len())).find(|i| diffs[*i] != seed_diffs[*i])
        else {
            continue;
        };
        if index > j {
            continue;
        }
        let start = j - index;
        let end = (start + compared_length).min(seed.len());
        return HotByteSet {
            site,
            offsets: (start..end).collect(),
            compared_length,
            byte_slope: BigRational::new(
                BigInt::from(diffs[index] - seed_diffs[index]),
                BigInt::from(mutant[j] as i128 - seed[j] as i128),
            ),
        };
    }
    HotByteSet::empty(site)
}

/// Per-byte Newton step for a string comparison: each hot byte is solved
/// against its own component of the distance vector.
pub fn newton_string(witness: &[u8], obs: &BranchObservation, hot: &HotByteSet) -> Vec<u8> {
    let mut out = witness.to_vec();
    let ObservedValue::Str { byte_diffs, .. } = &obs.value else {
        return out;
    };
    let Some(&start) = hot.offsets.first() else {
        return out;
    };
    let rule = DistanceRule::for_tuple(obs.outcome, obs.relation);
    for &j in &hot.offsets {
        let i = j - start;
        let (Some(&diff), Some(byte)) = (byte_diffs.get(i), out.get(j).copied()) else {
            continue;
        };
        let g = &hot.byte_slope * rational(rule.slope(diff));
        if g.is_zero() {
            continue;
        }
        let next = rational(byte as i128) - rational(rule.apply(diff)) / g;
        out[j] = clamp_byte(&next);
    }
    out
}

/// State that survives across stages.
#[derive(Clone, Debug, Default)]
pub struct MutatorState {
    pub hot_bytes: BTreeMap<NodeId, HotByteSet>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NewtonAttempt {
    pub site: NodeId,
    pub witness: Vec<u8>,
    pub output: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StageReport {
    pub samples: usize,
    pub newton_execs: usize,
    pub probe_execs: usize,
    pub flips: u64,
    pub new_edges: usize,
    pub attempts: Vec<NewtonAttempt>,
}

/// One full mutation stage: re-run the seed, local search, then a Newton
/// input for every site with a usable subgradient.
pub fn mutate_stage<E: Executor, R: Rng + ?Sized>(
    seed: &[u8],
    frontier: &FrontierSet,
    cfg: &MutatorConfig,
    max_len: usize,
    exec: &mut E,
    state: &mut MutatorState,
    rng: &mut R,
) -> StageReport {
    let edges_before = exec.edges_covered();
    let flips_before = exec.flips();
    let mut report = StageReport::default();
    if frontier.is_empty() {
        return report;
    }
    let Some(seed_trace) = exec.run(seed) else {
        return report;
    };
    let havoc = cfg.local_havoc(max_len);
    let records = local_search(
        seed,
        &seed_trace,
        frontier,
        cfg.sample_size,
        &havoc,
        &mut CountingExecutor {
            inner: exec,
            count: &mut report.samples,
        },
        rng,
    );
    for (site, rec) in records {
        if rec.g.is_zero() {
            continue;
        }
        let d = rec.witness_distance();
        let output = match (&rec.g.space, &rec.witness_obs.value) {
            (GradientSpace::Operand(operand), _) => {
                let slope = rec.g.components.values().next().expect("nonzero gradient");
                newton_operand(&rec.witness, &d, operand, slope)
            }
            (GradientSpace::Bytes, ObservedValue::Str { .. }) => {
                if !state.hot_bytes.contains_key(&site) {
                    let seed_d = seed_trace.observation(site).map(observation_distance);
                    if seed_d.as_ref() != Some(&d) {
                        let mut probes = 0;
                        let hot = infer_hot_bytes(
                            seed,
                            &rec.witness,
                            site,
                            &mut CountingExecutor {
                                inner: exec,
                                count: &mut probes,
                            },
                        );
                        report.probe_execs += probes;
                        if !hot.is_empty() {
                            state.hot_bytes.insert(site, hot);
                        }
                    }
                }
                match state.hot_bytes.get(&site) {
                    Some(hot) => Ok(newton_string(&rec.witness, &rec.witness_obs, hot)),
                    None => newton_step(&rec.witness, &d, &rec.g.components),
                }
            }
            (GradientSpace::Bytes, _) => newton_step(&rec.witness, &d, &rec.g.components),
        };
        let Ok(output) = output else {
            continue;
        };
        if exec.run(&output).is_none() {
            break;
        }
        report.newton_execs += 1;
        report.attempts.push(NewtonAttempt {
            site,
            witness: rec.witness,
            output,
        });
    }
    report.new_edges = exec.edges_covered() - edges_before;
    report.flips = exec.flips() - flips_before;
    report
}

struct CountingExecutor<'a, E: Executor> {
    inner: &'a mut E,
    count: &'a mut usize,
}

impl<E: Executor> Executor for CountingExecutor<'_, E> {
    fn run(&mut self, input: &[u8]) -> Option<ExecutionTrace> {
        let trace = self.inner.run(input)?;
        *self.count += 1;
        Some(trace)
    }

    fn edges_covered(&self) -> usize {
        self.inner.edges_covered()
    }

    fn flips(&self) -> u64 {
        self.inner.flips()
    }
}
