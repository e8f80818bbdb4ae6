#![allow(dead_code)]

use std::sync::Arc;

use frontier_fuzz::builtins::builtin;
use frontier_fuzz::mutator::Executor;
use frontier_fuzz::target::{Clock, ExecutionTrace, Harness};
use frontier_fuzz::ConditionType;

/// Executor that only runs inputs and counts them.
pub struct Plain {
    pub harness: Harness,
    pub runs: usize,
}

impl Executor for Plain {
    fn run(&mut self, input: &[u8]) -> Option<ExecutionTrace> {
        self.runs += 1;
        Some(self.harness.execute(input))
    }

    fn edges_covered(&self) -> usize {
        0
    }

    fn flips(&self) -> u64 {
        0
    }
}

/// Builtin target with every guard instrumented for distance feedback.
pub fn plain(name: &str) -> Plain {
    let program = Arc::new(builtin(name).unwrap());
    let mut harness = Harness::new(program.clone(), Clock::Synthetic);
    harness.set_active_sites(program.guard_ids().collect::<Vec<_>>()).unwrap();
    Plain { harness, runs: 0 }
}

pub fn relation_symbol(r: ConditionType) -> &'static str {
    match r {
        ConditionType::Lt => "<",
        ConditionType::Le => "<=",
        ConditionType::Gt => ">",
        ConditionType::Ge => ">=",
        ConditionType::Eq => "==",
        ConditionType::Ne => "!=",
    }
}

/// Branch distance table written out row by row, keyed on the printed
/// relation so it shares no code with the library.
pub fn literal_table(outcome: bool, relation: &str, f: i128) -> i128 {
    match (outcome, relation) {
        (false, "<") | (true, ">=") => f - 1,
        (false, "<=") | (true, ">") => f,
        (false, ">") | (true, "<=") => 1 - f,
        (false, ">=") | (true, "<") => -f,
        (false, "==") | (true, "!=") => f.abs(),
        (false, "!=") | (true, "==") => 1 - f.abs(),
        _ => unreachable!("unknown relation {relation}"),
    }
}

pub fn literal_holds(relation: &str, f: i128) -> bool {
    match relation {
        "<" => f < 0,
        "<=" => f <= 0,
        ">" => f > 0,
        ">=" => f >= 0,
        "==" => f == 0,
        "!=" => f != 0,
        _ => unreachable!("unknown relation {relation}"),
    }
}
