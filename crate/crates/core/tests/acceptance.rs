//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frontier_fuzz::builtins::{self, builtin, default_seed};
use frontier_fuzz::campaign::{self, convexity_probe, midpoint, ProbeOutcome};
use frontier_fuzz::distance::observation_distance;
use frontier_fuzz::havoc::HavocConfig;
use frontier_fuzz::mutator::{compute_subgradient, local_search, newton_operand, newton_step, GradientSpace};
use frontier_fuzz::report::median;
use frontier_fuzz::target::{execute, Clock, Comparison, Harness, NodeBody};
use frontier_fuzz::{distance, Budget, CampaignConfig, CampaignLog, ConditionType, FrontierSet, GuardProgram, Mode};

use common::{literal_holds, literal_table, plain, relation_symbol};

const BIN: &str = env!("CARGO_BIN_EXE_frontier-fuzz");
const SUITE_BUDGET: u64 = 200_000;
const SUITE_SEEDS: u64 = 10;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:.2?}, limit {limit:?}"))
}

fn distance_table() -> Outcome {
    let start = Instant::now();
    let mut checked = 0;
    let mut pairs = std::collections::BTreeSet::new();
    for relation in ConditionType::ALL {
        let sym = relation_symbol(relation);
        for outcome in [false, true] {
            for f in -3i128..=3 {
                let got = distance(outcome, relation, f);
                if literal_holds(sym, f) != outcome {
                    check(got.is_err(), || format!("({outcome}, {sym}, {f}) accepted"))?;
                    continue;
                }
                let want = literal_table(outcome, sym, f);
                let got = got.map_err(|e| e.to_string())?.magnitude();
                check(got == want, || format!("({outcome}, {sym}, {f}): got {got}, want {want}"))?;
                pairs.insert((outcome, relation));
                checked += 1;
            }
        }
    }
    check(pairs.len() == 12, || format!("{} consistent pairs", pairs.len()))?;
    within(start, Duration::from_secs(1))?;
    Ok(format!("{checked} consistent tuples over 12 pairs match"))
}

fn worked_example() -> Outcome {
    let start = Instant::now();
    let mut exec = plain("le15");
    let seed = vec![5u8];
    let seed_trace = exec.harness.execute(&seed);
    let d0 = observation_distance(&seed_trace.observations[0]).magnitude();
    check(d0 == 11, || format!("distance at 5 is {d0}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let havoc = HavocConfig::local(4, 4, 1);
    let records = local_search(&seed, &seed_trace, &FrontierSet::from([0]), 1024, &havoc, &mut exec, &mut rng);
    let rec = records.get(&0).ok_or("local search kept no record")?;
    let GradientSpace::Operand(operand) = rec.g.space else {
        return Err("int site without operand gradient".into());
    };
    let slope = rec.g.components.values().next().ok_or("zero gradient")?;
    let d = rec.witness_distance();
    let by_operand = newton_operand(&rec.witness, &d, &operand, slope).map_err(|e| e.to_string())?;
    let g = compute_subgradient(&seed, &rec.witness, &observation_distance(&seed_trace.observations[0]), &d);
    let by_bytes = newton_step(&rec.witness, &d, &g).map_err(|e| e.to_string())?;
    check(by_operand == vec![16], || format!("operand Newton gave {by_operand:?}"))?;
    check(by_bytes == vec![16], || format!("byte Newton gave {by_bytes:?}"))?;
    let flipped = exec.harness.execute(&by_operand);
    check(
        flipped.observations[0].outcome != seed_trace.observations[0].outcome,
        || "input 16 did not flip the guard".into(),
    )?;
    within(start, Duration::from_secs(1))?;
    Ok("delta(5)=11, Newton lands on 16 and flips".into())
}

fn greedy_oracle() -> Outcome {
    let start = Instant::now();
    let out = Command::new(BIN)
        .args(["verify-theorem", "--branches", "4", "--stages", "6", "--trials", "200", "--rng-seed", "0"])
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary = stdout.lines().last().unwrap_or("").to_string();
    check(out.status.success(), || format!("exit {:?}: {summary}", out.status))?;
    check(summary == "optimal 200/200", || format!("summary line `{summary}`"))?;
    within(start, Duration::from_secs(10))?;
    Ok(summary)
}

/// Median final edge count per (target, mode) over the suite.
type SuiteMedians = BTreeMap<(&'static str, Mode), f64>;

fn run_suite() -> Result<SuiteMedians, String> {
    let jobs: Vec<(&'static str, Mode, u64)> = builtins::SUITE
        .iter()
        .flat_map(|t| Mode::ALL.into_iter().map(move |m| (*t, m)))
        .flat_map(|(t, m)| (0..SUITE_SEEDS).map(move |s| (t, m, s)))
        .collect();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let chunk = jobs.len().div_ceil(workers);
    let results: Vec<Result<(&'static str, Mode, usize), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|batch| {
                scope.spawn(move || {
                    batch
                        .iter()
                        .map(|&(name, mode, seed)| {
                            let program = Arc::new(builtin(name).map_err(|e| e.to_string())?);
                            let seeds = vec![default_seed(&program)];
                            let cfg = CampaignConfig::new(mode, Budget::execs(SUITE_BUDGET), seed);
                            let outcome = campaign::run(program, &seeds, &cfg).map_err(|e| e.to_string())?;
                            Ok((name, mode, outcome.edges_covered()))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("suite worker")).collect()
    });
    let mut edges: BTreeMap<(&'static str, Mode), Vec<f64>> = BTreeMap::new();
    for r in results {
        let (name, mode, e) = r?;
        edges.entry((name, mode)).or_default().push(e as f64);
    }
    Ok(edges.into_iter().map(|(k, v)| (k, median(&v))).collect())
}

fn is_linear_or_string(program: &GuardProgram) -> bool {
    program.nodes().iter().all(|n| !matches!(n.body, NodeBody::Guard { comparison: Comparison::Xor { .. }, .. }))
}

fn coverage_ordering(medians: &SuiteMedians, took: Duration) -> Outcome {
    let mut not_full = Vec::new();
    let mut at_least = 0;
    for name in builtins::SUITE {
        let program = builtin(name).map_err(|e| e.to_string())?;
        let fox = medians[&(name, Mode::Fox)];
        let base = medians[&(name, Mode::Base)];
        if is_linear_or_string(&program) && fox < program.edge_count() as f64 {
            not_full.push(format!("{name} {fox}/{}", program.edge_count()));
        }
        if fox >= base {
            at_least += 1;
        }
    }
    check(not_full.is_empty(), || format!("FOX short of full coverage: {}", not_full.join(", ")))?;
    check(at_least >= 6, || format!("FOX >= BASE on {at_least}/8 targets"))?;
    for name in ["magic32", "magic32_be", "magic_str"] {
        let (fox, base) = (medians[&(name, Mode::Fox)], medians[&(name, Mode::Base)]);
        check(fox > base, || format!("{name}: FOX {fox} not above BASE {base}"))?;
    }
    check(took < Duration::from_secs(15 * 60), || format!("suite took {took:.2?}"))?;
    let table: Vec<String> = builtins::SUITE
        .iter()
        .map(|n| format!("{n} {}/{}", medians[&(*n, Mode::Fox)], medians[&(*n, Mode::Base)]))
        .collect();
    Ok(format!("FOX >= BASE on {at_least}/8 in {took:.1?} (fox/base: {})", table.join(", ")))
}

fn ablation_ordering(medians: &SuiteMedians) -> Outcome {
    let ordered: Vec<&str> = builtins::SUITE
        .iter()
        .copied()
        .filter(|n| {
            let (f, s, b) = (medians[&(*n, Mode::Fox)], medians[&(*n, Mode::FoxSched)], medians[&(*n, Mode::Base)]);
            f >= s && s >= b
        })
        .collect();
    check(ordered.len() >= 6, || format!("ordering holds on {}/8: {ordered:?}", ordered.len()))?;
    Ok(format!("FOX >= SCHED >= BASE on {}/8 targets", ordered.len()))
}

fn control_space() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let program = Arc::new(builtin("chain6").map_err(|e| e.to_string())?);
    let full = program.edge_count();
    let mut fox_max = 0;
    let mut base_min = usize::MAX;
    for seed in 0..SUITE_SEEDS {
        for mode in [Mode::Fox, Mode::Base] {
            let out = dir.path().join(format!("{mode}-{seed}"));
            let cfg = CampaignConfig::new(mode, Budget::execs(SUITE_BUDGET), seed);
            let outcome = campaign::run(program.clone(), &[default_seed(&program)], &cfg).map_err(|e| e.to_string())?;
            campaign::write_outputs(&out, &outcome).map_err(|e| e.to_string())?;
            let text = std::fs::read_to_string(out.join("stats.jsonl")).map_err(|e| e.to_string())?;
            let log = CampaignLog::from_jsonl(&text).map_err(|e| e.to_string())?;
            match mode {
                Mode::Fox => {
                    let max = log.records.iter().map(|r| r.frontier_size).max().unwrap_or(0);
                    check(max <= 6, || format!("FOX seed {seed}: max frontier_size {max}"))?;
                    fox_max = fox_max.max(max);
                }
                _ => {
                    let at_full = log
                        .records
                        .iter()
                        .find(|r| r.edges_covered == full)
                        .ok_or_else(|| format!("BASE seed {seed} never reached full coverage"))?;
                    check(at_full.corpus_size >= 7, || {
                        format!("BASE seed {seed}: corpus_size {} at full coverage", at_full.corpus_size)
                    })?;
                    base_min = base_min.min(at_full.corpus_size);
                }
            }
        }
    }
    Ok(format!("FOX max frontier_size {fox_max}, BASE corpus_size >= {base_min} at full coverage"))
}

/// Operand-only pairs for one linear guard: same outcome, same sign, and
/// every byte sum even so the byte-wise midpoint is the operand midpoint.
fn linear_pairs(program: &GuardProgram, site: usize, base: &[u8], rng: &mut ChaCha8Rng, n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let NodeBody::Guard { comparison: Comparison::Int { operand, .. }, .. } = program.node(site).unwrap().body else {
        unreachable!()
    };
    let active = vec![true; program.node_count()];
    let outcome_of = |x: &[u8]| execute(program, x, &active).observation(site).map(|o| o.outcome);
    let sign_of = |x: &[u8]| operand.signed && operand.read(x) < 0;
    let mut pairs = Vec::new();
    while pairs.len() < n {
        let mut x1 = base.to_vec();
        let mut x2 = base.to_vec();
        for j in operand.bytes() {
            x1[j] = rng.gen();
            x2[j] = (rng.gen::<u8>() & !1) | (x1[j] & 1);
        }
        let (o1, o2) = (outcome_of(&x1), outcome_of(&x2));
        if o1.is_some() && o1 == o2 && sign_of(&x1) == sign_of(&x2) {
            pairs.push((x1, x2));
        }
    }
    pairs
}

fn convexity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut guards = 0;
    for name in builtins::SUITE {
        let program = Arc::new(builtin(name).map_err(|e| e.to_string())?);
        let linear: Vec<usize> = program
            .nodes()
            .iter()
            .filter(|n| {
                matches!(
                    n.body,
                    NodeBody::Guard {
                        comparison: Comparison::Int { .. },
                        relation: ConditionType::Lt | ConditionType::Le | ConditionType::Gt | ConditionType::Ge,
                        ..
                    }
                )
            })
            .map(|n| n.id)
            .collect();
        if linear.is_empty() {
            continue;
        }
        let cfg = CampaignConfig::new(Mode::Fox, Budget::execs(SUITE_BUDGET), 0);
        let outcome = campaign::run(program.clone(), &[default_seed(&program)], &cfg).map_err(|e| e.to_string())?;
        let mut harness = Harness::new(program.clone(), Clock::Synthetic);
        harness.set_active_sites(program.guard_ids().collect::<Vec<_>>()).map_err(|e| e.to_string())?;
        for site in linear {
            let base = outcome
                .corpus
                .entries
                .iter()
                .map(|e| e.input.clone())
                .find(|x| harness.execute(x).observation(site).is_some())
                .ok_or_else(|| format!("{name}: no corpus input reaches n{site}"))?;
            for (x1, x2) in linear_pairs(&program, site, &base, &mut rng, 100) {
                let probe = convexity_probe(site, &x1, &x2, &harness).map_err(|e| e.to_string())?;
                let d = |x: &[u8]| harness.execute(x).observation(site).map(|o| observation_distance(o).magnitude());
                let (d1, d2, dm) = (d(&x1), d(&x2), d(&midpoint(&x1, &x2)));
                check(probe == ProbeOutcome::Pass, || format!("{name} n{site}: {probe:?} on {x1:?} {x2:?}"))?;
                check(dm.map(|m| 2 * m) == d1.zip(d2).map(|(a, b)| a + b), || {
                    format!("{name} n{site}: midpoint {dm:?} vs ({d1:?}, {d2:?})")
                })?;
            }
            guards += 1;
        }
    }

    let program = Arc::new(builtin("xor").map_err(|e| e.to_string())?);
    let mut harness = Harness::new(program.clone(), Clock::Synthetic);
    harness.set_active_sites([0]).map_err(|e| e.to_string())?;
    let mut fails = 0;
    for _ in 0..100 {
        let x1: Vec<u8> = (0..program.max_input_len()).map(|_| rng.gen()).collect();
        let x2: Vec<u8> = (0..program.max_input_len()).map(|_| rng.gen()).collect();
        if convexity_probe(0, &x1, &x2, &harness).map_err(|e| e.to_string())? == ProbeOutcome::Fail {
            fails += 1;
        }
    }
    check(fails >= 1, || "xor guard never failed the midpoint probe".into())?;
    Ok(format!("100/100 exact on {guards} linear guards, xor failed {fails}/100"))
}

fn hot_bytes() -> Outcome {
    let program = Arc::new(builtin("magic_str").map_err(|e| e.to_string())?);
    let window: Vec<usize> = (4..12).collect();
    let mut hits = 0;
    for seed in 0..SUITE_SEEDS {
        let cfg = CampaignConfig::new(Mode::Fox, Budget::execs(SUITE_BUDGET), seed);
        let outcome = campaign::run(program.clone(), &[default_seed(&program)], &cfg).map_err(|e| e.to_string())?;
        if outcome.hot_bytes.get(&0).is_some_and(|h| h.offsets == window) {
            hits += 1;
        }
    }
    check(hits >= 9, || format!("window inferred in {hits}/10 seeds"))?;
    Ok(format!("window 4..12 inferred in {hits}/10 seeds"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut logs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(BIN)
            .args(["run", "--target", "builtin:mixed", "--mode", "fox", "--budget-execs", "50000"])
            .args(["--rng-seed", "11", "--synthetic-time", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?
            .status;
        check(status.success(), || format!("run {run} exited {status:?}"))?;
        logs.push(std::fs::read(out.join("stats.jsonl")).map_err(|e| e.to_string())?);
    }
    check(!logs[0].is_empty(), || "empty stats.jsonl".into())?;
    check(logs[0] == logs[1], || "stats.jsonl differs between runs".into())?;
    Ok(format!("{} identical bytes", logs[0].len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn report(results: &mut Vec<bool>, name: &str, result: Outcome) {
    match &result {
        Ok(detail) => println!("PASS criterion {name}: {detail}"),
        Err(why) => println!("FAIL criterion {name}: {why}"),
    }
    results.push(result.is_ok());
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    report(&mut results, "1 distance table conformance", guarded(distance_table));
    report(&mut results, "2 worked example x<=15", guarded(worked_example));
    report(&mut results, "3 greedy schedule oracle", guarded(greedy_oracle));

    let start = Instant::now();
    let mut medians = None;
    let suite = guarded(|| {
        medians = Some(run_suite()?);
        Ok(String::new())
    });
    let took = start.elapsed();
    match (suite, medians) {
        (Ok(_), Some(m)) => {
            report(&mut results, "4 suite coverage ordering", guarded(|| coverage_ordering(&m, took)));
            report(&mut results, "5 ablation ordering", guarded(|| ablation_ordering(&m)));
        }
        (suite, _) => {
            let why = suite.err().unwrap_or_else(|| "suite produced no medians".into());
            report(&mut results, "4 suite coverage ordering", Err(why.clone()));
            report(&mut results, "5 ablation ordering", Err(why));
        }
    }
    report(&mut results, "6 control space on chain6", guarded(control_space));
    report(&mut results, "7 midpoint convexity", guarded(convexity));
    report(&mut results, "8 hot-byte inference", guarded(hot_bytes));
    report(&mut results, "9 synthetic-time determinism", guarded(determinism));

    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
