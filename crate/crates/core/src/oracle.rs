//! Exhaustive check that greedy stage-by-stage scheduling is optimal when
//! every branch has a fixed flip probability.
//!
//! A branch scheduled `n` times is flipped with probability `1 - (1-p)^n`, so
//! the expected coverage of a schedule is the sum of those terms. Greedy picks
//! the branch with the largest marginal gain `p (1-p)^n` at every stage; the
//! optimum is found by enumerating all `m^K` schedules.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use thiserror::Error;

/// Largest schedule space `verify` will enumerate.
pub const MAX_SCHEDULES: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("branch {choice} out of range for {branches} branches")]
    ChoiceOutOfRange { choice: usize, branches: usize },
    #[error("schedule has {got} stages, instance has {expected}")]
    WrongLength { got: usize, expected: usize },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(BigRational),
    #[error("{branches}^{stages} schedules exceed the enumeration limit")]
    TooLarge { branches: usize, stages: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbstractInstance {
    /// Flip probability of each branch's top seed.
    pub probabilities: Vec<BigRational>,
    pub stages: usize,
}

impl AbstractInstance {
    pub fn new(probabilities: Vec<BigRational>, stages: usize) -> Result<Self, OracleError> {
        for p in &probabilities {
            if *p < BigRational::zero() || *p > BigRational::one() {
                return Err(OracleError::BadProbability(p.clone()));
            }
        }
        Ok(AbstractInstance {
            probabilities,
            stages,
        })
    }

    /// Convenience constructor from tenths, e.g. `[9, 5]` for (0.9, 0.5).
    pub fn from_tenths(tenths: &[u32], stages: usize) -> Result<Self, OracleError> {
        Self::new(
            tenths
                .iter()
                .map(|t| BigRational::new(BigInt::from(*t), BigInt::from(10)))
                .collect(),
            stages,
        )
    }

    pub fn branches(&self) -> usize {
        self.probabilities.len()
    }
}

fn coverage_of_counts(instance: &AbstractInstance, counts: &[usize]) -> BigRational {
    instance
        .probabilities
        .iter()
        .zip(counts)
        .map(|(p, n)| BigRational::one() - num_traits::pow(BigRational::one() - p, *n))
        .fold(BigRational::zero(), |acc, x| acc + x)
}

fn counts_of(instance: &AbstractInstance, schedule: &[usize]) -> Result<Vec<usize>, OracleError> {
    let mut counts = vec![0; instance.branches()];
    for &choice in schedule {
        *counts
            .get_mut(choice)
            .ok_or(OracleError::ChoiceOutOfRange {
                choice,
                branches: instance.branches(),
            })? += 1;
    }
    Ok(counts)
}

/// Exact expected number of flipped branches after running `schedule`.
pub fn expected_coverage(
    instance: &AbstractInstance,
    schedule: &[usize],
) -> Result<BigRational, OracleError> {
    if schedule.len() != instance.stages {
        return Err(OracleError::WrongLength {
            got: schedule.len(),
            expected: instance.stages,
        });
    }
    let counts = counts_of(instance, schedule)?;
    Ok(coverage_of_counts(instance, &counts))
}

/// Stage-by-stage argmax of the marginal gain, lowest index on ties.
pub fn greedy_schedule(instance: &AbstractInstance) -> Vec<usize> {
    let m = instance.branches();
    let mut counts = vec![0usize; m];
    let mut schedule = Vec::with_capacity(instance.stages);
    if m == 0 {
        return schedule;
    }
    for _ in 0..instance.stages {
        let mut best = 0;
        let mut best_gain: Option<BigRational> = None;
        for (b, p) in instance.probabilities.iter().enumerate() {
            let gain = p * num_traits::pow(BigRational::one() - p, counts[b]);
            if best_gain.as_ref().is_none_or(|g| gain > *g) {
                best = b;
                best_gain = Some(gain);
            }
        }
        counts[best] += 1;
        schedule.push(best);
    }
    schedule
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub greedy: Vec<usize>,
    pub greedy_value: BigRational,
    pub optimum_value: BigRational,
    pub optimal: bool,
}

/// Compares greedy against the best of all `m^K` schedules.
pub fn verify(instance: &AbstractInstance) -> Result<Verdict, OracleError> {
    let m = instance.branches();
    let k = instance.stages;
    let space = (m as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if space > MAX_SCHEDULES {
        return Err(OracleError::TooLarge {
            branches: m,
            stages: k,
        });
    }
    let greedy = greedy_schedule(instance);
    let greedy_value = expected_coverage(instance, &greedy)?;

    // Walk every schedule as a base-m odometer. Values depend on the
    // multiset of choices only, so evaluate each count vector once.
    let mut cache: BTreeMap<Vec<usize>, BigRational> = BTreeMap::new();
    let mut optimum_value: Option<BigRational> = None;
    let mut schedule = vec![0usize; k];
    let total = if m == 0 && k > 0 { 0 } else { space };
    for _ in 0..total {
        let counts = counts_of(instance, &schedule)?;
        let value = cache
            .entry(counts)
            .or_insert_with_key(|c| coverage_of_counts(instance, c));
        if optimum_value.as_ref().is_none_or(|best| *value > *best) {
            optimum_value = Some(value.clone());
        }
        for digit in schedule.iter_mut() {
            *digit += 1;
            if *digit < m {
                break;
            }
            *digit = 0;
        }
    }
    let optimum_value = optimum_value.unwrap_or_else(BigRational::zero);
    Ok(Verdict {
        optimal: greedy_value == optimum_value,
        greedy,
        greedy_value,
        optimum_value,
    })
}

/// Random instance with `1..=max_branches` branches, `1..=max_stages`
/// stages and probabilities drawn from {0, 0.1, ..., 1}.
pub fn random_instance<R: rand::Rng + ?Sized>(
    rng: &mut R,
    max_branches: usize,
    max_stages: usize,
) -> AbstractInstance {
    let m = rng.gen_range(1..=max_branches.max(1));
    let k = rng.gen_range(1..=max_stages.max(1));
    let tenths: Vec<u32> = (0..m).map(|_| rng.gen_range(0..=10)).collect();
    AbstractInstance::from_tenths(&tenths, k).expect("tenths are valid probabilities")
}
