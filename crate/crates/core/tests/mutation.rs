mod common;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use frontier_fuzz::builtins::{builtin, default_seed};
use frontier_fuzz::mutator::{infer_hot_bytes, mutate_stage, MutatorState};
use frontier_fuzz::{campaign, Budget, CampaignConfig, FrontierSet, Mode, MutatorConfig};

use common::plain;

#[test]
fn magic_integers_flip_within_one_stage() {
    for name in ["magic32", "magic32_be"] {
        let program = Arc::new(builtin(name).unwrap());
        let k = MutatorConfig::default().sample_size as u64;
        let quick = (0..10)
            .filter(|seed| {
                let cfg = CampaignConfig::new(Mode::Fox, Budget::execs(4 * k), *seed);
                let outcome = campaign::run(program.clone(), &[default_seed(&program)], &cfg).unwrap();
                outcome
                    .flip_events
                    .iter()
                    .any(|e| e.site == 0 && e.stage == 1 && e.exec_index <= k + 4)
            })
            .count();
        assert!(quick >= 9, "{name}: flipped in stage one for {quick}/10 seeds");
    }
}

#[test]
fn stage_reaches_magic_value_directly() {
    let mut exec = plain("magic32");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut state = MutatorState::default();
    let report = mutate_stage(
        &[0, 0, 0, 0],
        &FrontierSet::from([0]),
        &MutatorConfig::default(),
        4,
        &mut exec,
        &mut state,
        &mut rng,
    );
    assert_eq!(report.samples, 1024);
    assert_eq!(report.attempts.len(), 1);
    assert_eq!(report.attempts[0].output, 0x4A4F4B45u32.to_le_bytes().to_vec());
    assert_eq!(exec.runs, 1 + 1024 + 1);
}

#[test]
fn hot_bytes_cover_the_compared_window() {
    let mut exec = plain("magic_str");
    let seed = vec![0u8; 16];
    let mut mutant = seed.clone();
    mutant[0] = 1;
    mutant[9] = 0x33;
    mutant[14] = 2;
    let hot = infer_hot_bytes(&seed, &mutant, 0, &mut exec);
    assert_eq!(hot.offsets, (4..12).collect::<Vec<_>>());
    assert_eq!(hot.compared_length, 8);
}

#[test]
fn string_target_is_solved_in_one_stage() {
    let program = Arc::new(builtin("magic_str").unwrap());
    let cfg = CampaignConfig::new(Mode::Fox, Budget::execs(3000), 4);
    let outcome = campaign::run(program.clone(), &[default_seed(&program)], &cfg).unwrap();
    assert_eq!(outcome.edges_covered(), 2);
    let solved = outcome.corpus.entries.iter().any(|e| &e.input[4..12] == b"MAGICKEY");
    assert!(solved);
}

#[test]
fn bug_target_reports_a_finding() {
    let program = Arc::new(builtin("bug").unwrap());
    let cfg = CampaignConfig::new(Mode::Fox, Budget::execs(20_000), 0);
    let outcome = campaign::run(program.clone(), &[default_seed(&program)], &cfg).unwrap();
    let finding = outcome.findings.first().expect("bug node reached");
    assert_eq!(finding.node, 2);
    assert_eq!(&finding.input[..5], &[0x13, 0x37, b'B', b'U', b'G']);
}

#[test]
fn time_budget_stops_the_campaign() {
    let program = Arc::new(builtin("chain6").unwrap());
    let cfg = CampaignConfig::new(Mode::Base, Budget::time(std::time::Duration::from_nanos(5000)), 0);
    let outcome = campaign::run(program, &[vec![0; 8]], &cfg).unwrap();
    let last = outcome.log.last().unwrap();
    assert_eq!(last.execs, 5000);
    assert_eq!(last.t_ns, 5000);
}
