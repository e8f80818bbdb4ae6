//! Branch distance: how far an input is from flipping a frontier branch.

use std::cmp::Ordering;

use thiserror::Error;

use crate::target::{BranchObservation, ConditionType, NodeId, ObservedValue};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DistanceError {
    #[error("inconsistent tuple: outcome {outcome} but {f} {relation:?} 0 is {}", !outcome)]
    Inconsistent {
        outcome: bool,
        relation: ConditionType,
        f: i128,
    },
    #[error("empty byte difference vector")]
    EmptyVector,
    #[error("distance form mismatch (scalar vs vector)")]
    FormMismatch,
}

/// The six distance functions of the (outcome, relation) table. Each is a
/// linear or piecewise-linear function of `f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DistanceRule {
    FMinusOne,
    F,
    OneMinusF,
    NegF,
    AbsF,
    OneMinusAbsF,
}

impl DistanceRule {
    pub fn for_tuple(outcome: bool, relation: ConditionType) -> Self {
        use ConditionType::*;
        match (outcome, relation) {
            (false, Lt) | (true, Ge) => DistanceRule::FMinusOne,
            (false, Le) | (true, Gt) => DistanceRule::F,
            (false, Gt) | (true, Le) => DistanceRule::OneMinusF,
            (false, Ge) | (true, Lt) => DistanceRule::NegF,
            (false, Eq) | (true, Ne) => DistanceRule::AbsF,
            (false, Ne) | (true, Eq) => DistanceRule::OneMinusAbsF,
        }
    }

    pub fn apply(self, f: i128) -> i128 {
        match self {
            DistanceRule::FMinusOne => f - 1,
            DistanceRule::F => f,
            DistanceRule::OneMinusF => 1 - f,
            DistanceRule::NegF => -f,
            DistanceRule::AbsF => f.abs(),
            DistanceRule::OneMinusAbsF => 1 - f.abs(),
        }
    }

    /// d(rule)/df at `f`; zero at the kink of the absolute-value rules.
    pub fn slope(self, f: i128) -> i128 {
        match self {
            DistanceRule::FMinusOne | DistanceRule::F => 1,
            DistanceRule::OneMinusF | DistanceRule::NegF => -1,
            DistanceRule::AbsF => f.signum(),
            DistanceRule::OneMinusAbsF => -f.signum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum BranchDistance {
    Scalar(i128),
    /// One entry per compared byte.
    Vector(Vec<i128>),
}

impl BranchDistance {
    /// Scalar summary: the value itself, or the L1 norm of a vector.
    pub fn magnitude(&self) -> i128 {
        match self {
            BranchDistance::Scalar(v) => *v,
            BranchDistance::Vector(v) => l1(v),
        }
    }

    pub fn is_vector(&self) -> bool {
        matches!(self, BranchDistance::Vector(_))
    }

    /// Record order: numeric for scalars; L1 then lexicographic for vectors.
    pub fn try_cmp(&self, other: &BranchDistance) -> Result<Ordering, DistanceError> {
        match (self, other) {
            (BranchDistance::Scalar(a), BranchDistance::Scalar(b)) => Ok(a.cmp(b)),
            (BranchDistance::Vector(a), BranchDistance::Vector(b)) => {
                Ok(l1(a).cmp(&l1(b)).then_with(|| a.cmp(b)))
            }
            _ => Err(DistanceError::FormMismatch),
        }
    }
}

fn l1(v: &[i128]) -> i128 {
    v.iter().map(|x| x.abs()).sum()
}

/// Scalar distance for a consistent `(outcome, relation, f)` tuple.
pub fn distance(
    outcome: bool,
    relation: ConditionType,
    f: i128,
) -> Result<BranchDistance, DistanceError> {
    if relation.holds(f) != outcome {
        return Err(DistanceError::Inconsistent {
            outcome,
            relation,
            f,
        });
    }
    Ok(BranchDistance::Scalar(
        DistanceRule::for_tuple(outcome, relation).apply(f),
    ))
}

/// Per-byte distance: the site's rule applied to every byte difference.
pub fn string_distance(
    outcome: bool,
    relation: ConditionType,
    byte_diffs: &[i128],
) -> Result<BranchDistance, DistanceError> {
    if byte_diffs.is_empty() {
        return Err(DistanceError::EmptyVector);
    }
    let rule = DistanceRule::for_tuple(outcome, relation);
    Ok(BranchDistance::Vector(
        byte_diffs.iter().map(|d| rule.apply(*d)).collect(),
    ))
}

/// Distance of a harness observation (always consistent by construction).
pub fn observation_distance(obs: &BranchObservation) -> BranchDistance {
    match &obs.value {
        ObservedValue::Int { f, .. } | ObservedValue::Xor { f } => {
            BranchDistance::Scalar(DistanceRule::for_tuple(obs.outcome, obs.relation).apply(*f))
        }
        ObservedValue::Str { byte_diffs, .. } => {
            let rule = DistanceRule::for_tuple(obs.outcome, obs.relation);
            BranchDistance::Vector(byte_diffs.iter().map(|d| rule.apply(*d)).collect())
        }
    }
}

/// Lowest distance seen at a site and the input that achieved it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistanceRecord {
    pub site: NodeId,
    pub best: Option<BranchDistance>,
    pub best_input: Vec<u8>,
}

impl DistanceRecord {
    pub fn new(site: NodeId) -> Self {
        DistanceRecord {
            site,
            best: None,
            best_input: Vec::new(),
        }
    }

    /// Replaces the minimum iff `d` is strictly lower. The first observation
    /// always counts as lowering.
    pub fn update(&mut self, input: &[u8], d: &BranchDistance) -> Result<bool, DistanceError> {
        let lowered = match &self.best {
            None => true,
            Some(best) => d.try_cmp(best)? == Ordering::Less,
        };
        if lowered {
            self.best = Some(d.clone());
            self.best_input = input.to_vec();
        }
        Ok(lowered)
    }
}

pub fn update_record(
    rec: &mut DistanceRecord,
    input: &[u8],
    d: &BranchDistance,
) -> Result<bool, DistanceError> {
    rec.update(input, d)
}
