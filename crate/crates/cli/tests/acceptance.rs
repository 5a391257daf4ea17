//! Acceptance suite: nine oracle- and property-based criteria at desk scale,
//! one test (and one printed PASS/FAIL line) per criterion. Run with
//! `cargo test -p pips-cli --test acceptance -- --nocapture` to see the
//! lines.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use pips_core::chain::rolling_horizon_error;
use pips_core::fixtures::{absorbing_witness, toggle2};
use pips_core::horizon::{
    backward_induction, evaluate_policy, improvable_set, strictly_improves, FiniteHorizonPolicy,
    ValueTable, STRICT_SLACK, VALUE_EQ_TOL,
};
use pips_core::model::{generate_random_mdp, ActionId, GenConfig, MdpModel, StateId};
use pips_core::online::{
    builtin_supervisor, run_online, BuiltinKind, InitialPolicy, LocalOptVerdict, OnlineConfig,
    StartState, Supervisor, VisitSource,
};
use pips_core::rng::RngStream;
use pips_core::switching::{
    generate_beta, generate_beta_at_state, policy_switch, run_pips_async_offline, run_pips_sync,
    Candidate, CandidateOrigin, Schedule,
};

fn check(number: usize, name: &str, run: impl FnOnce() -> Result<(), String>) {
    let outcome = run();
    match &outcome {
        Ok(()) => println!("ACCEPTANCE {number} ({name}): PASS"),
        Err(reason) => println!("ACCEPTANCE {number} ({name}): FAIL - {reason}"),
    }
    if let Err(reason) = outcome {
        panic!("criterion {number} ({name}) failed: {reason}");
    }
}

fn dense_model(seed: u64, states: usize, actions: usize, gamma: f64) -> MdpModel {
    generate_random_mdp(&GenConfig {
        num_states: states,
        num_actions: actions,
        transition_density: 1.0,
        reward_range: (0.0, 1.0),
        ensure_positive: false,
        gamma,
        seed,
    })
    .expect("valid config")
}

fn positive_model(seed: u64, states: usize, actions: usize, gamma: f64) -> MdpModel {
    generate_random_mdp(&GenConfig {
        num_states: states,
        num_actions: actions,
        transition_density: 0.5,
        reward_range: (0.0, 1.0),
        ensure_positive: true,
        gamma,
        seed,
    })
    .expect("valid config")
}

fn tables_match(a: &ValueTable, b: &ValueTable, tol: f64) -> bool {
    (0..=a.horizon()).all(|h| {
        a.row(h)
            .iter()
            .zip(b.row(h))
            .all(|(x, y)| (x - y).abs() <= tol)
    })
}

#[test]
fn criterion_1_oracle_equivalence() {
    check(1, "oracle equivalence", || {
        let started = Instant::now();
        for i in 0..100u64 {
            let states = 2 + (i as usize % 7);
            let actions = 2 + (i as usize % 2);
            let gamma = if (i / 2) % 2 == 0 { 0.5 } else { 0.9 };
            let horizon = 1 + (i as usize % 6);
            let model = dense_model(1000 + i, states, actions, gamma);
            let (oracle, _) = backward_induction(&model, horizon, None).map_err(|e| e.to_string())?;
            for j in 0..3u64 {
                let mut rng = RngStream::from_seed(7000 + 31 * i + j);
                let initial = FiniteHorizonPolicy::random(&model, horizon, &mut rng);
                let run = run_pips_sync(&model, &initial, 64).map_err(|e| e.to_string())?;
                let values = evaluate_policy(&model, &run.policy, None).map_err(|e| e.to_string())?;
                if !tables_match(&values, &oracle, VALUE_EQ_TOL) {
                    return Err(format!("model {i} init {j}: values differ from the oracle"));
                }
                if !improvable_set(&model, &run.policy, None)
                    .map_err(|e| e.to_string())?
                    .is_empty()
                {
                    return Err(format!("model {i} init {j}: improvable set not empty"));
                }
            }
        }
        let elapsed = started.elapsed();
        if elapsed.as_secs() >= 60 {
            return Err(format!("runtime target missed: {elapsed:?}"));
        }
        Ok(())
    });
}

#[test]
fn criterion_2_switching_dominance() {
    check(2, "switching dominance", || {
        for i in 0..200u64 {
            let states = 2 + (i as usize % 5);
            let actions = 2 + (i as usize % 2);
            let gamma = if (i / 2) % 2 == 0 { 0.5 } else { 0.9 };
            let horizon = 1 + (i as usize % 5);
            let density = if i % 3 == 0 { 0.6 } else { 1.0 };
            let model = generate_random_mdp(&GenConfig {
                num_states: states,
                num_actions: actions,
                transition_density: density,
                reward_range: (-1.0, 1.0),
                ensure_positive: false,
                gamma,
                seed: 3000 + i,
            })
            .expect("valid config");
            let mut rng = RngStream::from_seed(3500 + i);
            let pool: Vec<Candidate> = (0..1 + (i as usize % 4))
                .map(|_| {
                    let policy = FiniteHorizonPolicy::random(&model, horizon, &mut rng);
                    let values = evaluate_policy(&model, &policy, None).expect("evaluates");
                    Candidate {
                        policy,
                        values,
                        origin: CandidateOrigin::ExhaustiveMember,
                    }
                })
                .collect();
            let switched = policy_switch(&pool).map_err(|e| e.to_string())?;
            let row = evaluate_policy(&model, &switched, None)
                .map_err(|e| e.to_string())?
                .final_row()
                .to_vec();
            for (m, member) in pool.iter().enumerate() {
                for (x, (switched_v, member_v)) in
                    row.iter().zip(member.values.final_row()).enumerate()
                {
                    if *switched_v < member_v - VALUE_EQ_TOL {
                        return Err(format!("draw {i}: member {m} beats the switch at state {x}"));
                    }
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_3_candidates_strictly_improve() {
    check(3, "candidate strict improvement", || {
        let mut corpus: Vec<MdpModel> = vec![toggle2()];
        for i in 0..40u64 {
            corpus.push(dense_model(
                4000 + i,
                2 + (i as usize % 6),
                2 + (i as usize % 2),
                if i % 2 == 0 { 0.5 } else { 0.9 },
            ));
        }
        let mut total_members = 0usize;
        for (m, model) in corpus.iter().enumerate() {
            let horizon = 1 + (m % 4);
            let mut rng = RngStream::from_seed(4100 + m as u64);
            let bases = vec![
                FiniteHorizonPolicy::lowest_action(model, horizon),
                FiniteHorizonPolicy::random(model, horizon, &mut rng),
                FiniteHorizonPolicy::random(model, horizon, &mut rng),
            ];
            for base in &bases {
                let beta = generate_beta(model, base, 48).map_err(|e| e.to_string())?;
                for member in &beta.members {
                    total_members += 1;
                    if !strictly_improves(model, &member.policy, base).map_err(|e| e.to_string())? {
                        return Err(format!("model {m}: a whole-set member fails the strict test"));
                    }
                }
                for x in 0..model.num_states() {
                    let local = generate_beta_at_state(model, base, StateId(x), 48)
                        .map_err(|e| e.to_string())?;
                    for member in &local.members {
                        total_members += 1;
                        if !strictly_improves(model, &member.policy, base)
                            .map_err(|e| e.to_string())?
                        {
                            return Err(format!(
                                "model {m}: a state-{x} member fails the strict test"
                            ));
                        }
                    }
                }
            }
        }
        if total_members < 500 {
            return Err(format!("corpus too thin: only {total_members} members generated"));
        }
        Ok(())
    });
}

#[test]
fn criterion_4_online_global_convergence() {
    check(4, "online global convergence", || {
        let kinds = [
            BuiltinKind::Null,
            BuiltinKind::Oracle,
            BuiltinKind::Random,
            BuiltinKind::Adversarial,
        ];
        for i in 0..50u64 {
            let states = 2 + (i as usize % 5);
            let actions = 2 + (i as usize % 2);
            let horizon = 2 + (i as usize % 3);
            let gamma = if (i / 2) % 2 == 0 { 0.5 } else { 0.9 };
            let model = positive_model(5000 + i, states, actions, gamma);
            let max_steps = 20 * states * horizon * actions;
            let cfg = OnlineConfig {
                horizon,
                max_steps,
                start: StartState::Fixed(StateId(0)),
                initial_policy: InitialPolicy::Seeded,
                visits: VisitSource::ClosedLoop,
                budget: 32,
                window: max_steps,
                seed: 6000 + i,
            };
            let kind = kinds[i as usize % kinds.len()];
            let mut supervisors: Vec<Box<dyn Supervisor>> = match kind {
                BuiltinKind::Null => Vec::new(),
                other => vec![
                    builtin_supervisor(other, &model, horizon, 6500 + i).map_err(|e| e.to_string())?
                ],
            };
            let trace = run_online(&model, &cfg, &mut supervisors).map_err(|e| e.to_string())?;
            if !improvable_set(&model, &trace.final_policy, None)
                .map_err(|e| e.to_string())?
                .is_empty()
            {
                return Err(format!("run {i} ({kind:?}): improvable set still nonempty"));
            }
            let values =
                evaluate_policy(&model, &trace.final_policy, None).map_err(|e| e.to_string())?;
            let (oracle, _) = backward_induction(&model, horizon, None).map_err(|e| e.to_string())?;
            if !tables_match(&values, &oracle, VALUE_EQ_TOL) {
                return Err(format!("run {i} ({kind:?}): final values differ from the oracle"));
            }
        }
        Ok(())
    });
}

/// States `n-2` and `n-1` form an absorbing block (their rows stay inside the
/// block); every other state can reach anywhere. Entries inside a support are
/// strictly positive, so the block is one communicating class.
fn absorbing_model(seed: u64, states: usize) -> MdpModel {
    let block_start = states - 2;
    let mut rng = RngStream::from_seed(seed);
    let mut rewards = Vec::with_capacity(states);
    let mut transitions = Vec::with_capacity(states);
    for x in 0..states {
        let mut state_rewards = Vec::new();
        let mut state_rows = Vec::new();
        for _ in 0..2 {
            state_rewards.push(rng.uniform(0.0, 1.0));
            let support: Vec<usize> = if x >= block_start {
                (block_start..states).collect()
            } else {
                (0..states).collect()
            };
            let mut row = vec![0.0; states];
            for &y in &support {
                row[y] = 0.1 + rng.unit();
            }
            let total: f64 = row.iter().sum();
            for entry in row.iter_mut() {
                *entry /= total;
            }
            state_rows.push(row);
        }
        rewards.push(state_rewards);
        transitions.push(state_rows);
    }
    let model = MdpModel {
        name: format!("absorbing-{seed}"),
        gamma: 0.9,
        actions_per_state: vec![2; states],
        rewards,
        transitions,
    };
    assert!(model.validate().is_empty());
    model
}

#[test]
fn criterion_5_online_local_convergence() {
    check(5, "online local convergence", || {
        struct Case {
            label: String,
            model: MdpModel,
            cfg: OnlineConfig,
        }
        let mut cases = Vec::new();
        cases.push(Case {
            label: "toggle2".into(),
            model: toggle2(),
            cfg: OnlineConfig {
                horizon: 2,
                max_steps: 40,
                start: StartState::Fixed(StateId(0)),
                initial_policy: InitialPolicy::Given(FiniteHorizonPolicy::stationary(
                    vec![ActionId(0), ActionId(0)],
                    2,
                )),
                visits: VisitSource::ClosedLoop,
                budget: 16,
                window: 8,
                seed: 1,
            },
        });
        cases.push(Case {
            label: "absorbing-witness".into(),
            model: absorbing_witness(),
            cfg: OnlineConfig {
                horizon: 3,
                max_steps: 60,
                start: StartState::Fixed(StateId(0)),
                initial_policy: InitialPolicy::Given(FiniteHorizonPolicy::stationary(
                    vec![ActionId(0); 3],
                    3,
                )),
                visits: VisitSource::ClosedLoop,
                budget: 16,
                window: 12,
                seed: 2,
            },
        });
        for i in 0..19u64 {
            let states = 4 + (i as usize % 3);
            let horizon = 2 + (i as usize % 2);
            let model = absorbing_model(8000 + i, states);
            cases.push(Case {
                label: format!("absorbing-{i}"),
                model,
                cfg: OnlineConfig {
                    horizon,
                    max_steps: 400,
                    start: StartState::Fixed(StateId(states - 2)),
                    initial_policy: InitialPolicy::Seeded,
                    visits: VisitSource::ClosedLoop,
                    budget: 16,
                    window: 4 * states,
                    seed: 8100 + i,
                },
            });
        }

        let mut saw_local_not_global = false;
        for case in &cases {
            let trace = run_online(&case.model, &case.cfg, &mut []).map_err(|e| e.to_string())?;
            if trace.stabilization_step.is_none() {
                return Err(format!("{}: trace never stabilized", case.label));
            }
            let report = &trace.local_optimality;
            if report.verdict != LocalOptVerdict::LocallyOptimal {
                return Err(format!("{}: verdict {:?}", case.label, report.verdict));
            }
            if report.globally_optimal == Some(false) {
                saw_local_not_global = true;
            }
        }
        if !saw_local_not_global {
            return Err("no run exhibited local-but-not-global optimality".into());
        }
        Ok(())
    });
}

#[test]
fn criterion_6_adversarial_monotonicity() {
    check(6, "adversarial monotonicity", || {
        for i in 0..50u64 {
            let states = 2 + (i as usize % 5);
            let horizon = 2 + (i as usize % 3);
            let model = if i % 2 == 0 {
                dense_model(9000 + i, states, 3, 0.9)
            } else {
                positive_model(9000 + i, states, 2, 0.5)
            };
            let max_steps = 10 * states * horizon;
            let cfg = OnlineConfig {
                horizon,
                max_steps,
                start: StartState::Fixed(StateId(0)),
                initial_policy: InitialPolicy::Seeded,
                visits: VisitSource::ClosedLoop,
                budget: 32,
                window: 2 * states,
                seed: 9500 + i,
            };
            let mut supervisors: Vec<Box<dyn Supervisor>> = vec![builtin_supervisor(
                BuiltinKind::Adversarial,
                &model,
                horizon,
                0,
            )
            .map_err(|e| e.to_string())?];
            let trace = run_online(&model, &cfg, &mut supervisors).map_err(|e| e.to_string())?;
            for pair in trace.records.windows(2) {
                for (next, prev) in pair[1].values_after.iter().zip(&pair[0].values_after) {
                    if *next < prev - STRICT_SLACK {
                        return Err(format!("run {i}: value decreased between steps"));
                    }
                }
            }
            for record in &trace.records {
                for rejected in &record.report.suggestions_rejected {
                    let inserted = record.report.changed_pairs.iter().any(|c| {
                        c.level == rejected.level && c.new_action == rejected.action
                    });
                    if inserted {
                        return Err(format!(
                            "run {i} step {}: rejected action {} entered the policy at level {}",
                            record.k, rejected.action, rejected.level
                        ));
                    }
                }
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_7_rolling_horizon_error_bound() {
    check(7, "rolling-horizon error bound", || {
        let h_list: Vec<usize> = (1..=12).collect();
        for i in 0..20u64 {
            let states = 3 + (i as usize % 5);
            let actions = 2 + (i as usize % 2);
            let model = dense_model(7100 + i, states, actions, 0.8);
            let curve = rolling_horizon_error(&model, &h_list, None).map_err(|e| e.to_string())?;
            let max_r = model
                .rewards
                .iter()
                .flatten()
                .fold(0.0_f64, |m, r| m.max(r.abs()));
            let envelope = 2.0 * max_r / ((1.0 - model.gamma) * (1.0 - model.gamma));
            for &(h, err) in &curve {
                if err > envelope * model.gamma.powi(h as i32) + 1e-12 {
                    return Err(format!("model {i}: error({h}) = {err} escapes the envelope"));
                }
            }
            let first = curve.first().expect("nonempty").1;
            let last = curve.last().expect("nonempty").1;
            if last > first {
                return Err(format!("model {i}: error(12) = {last} > error(1) = {first}"));
            }
            if first > 0.0 && last > 0.05 * first {
                return Err(format!(
                    "model {i}: error(12) = {last} not below 5% of error(1) = {first}"
                ));
            }
        }
        Ok(())
    });
}

#[test]
fn criterion_8_schedule_convergence() {
    check(8, "schedule convergence and the non-convergence caveat", || {
        // Level-embedded schedules converge globally from arbitrary starts.
        for i in 0..20u64 {
            let states = 2 + (i as usize % 6);
            let horizon = 2 + (i as usize % 4);
            let density = if i % 2 == 0 { 1.0 } else { 0.7 };
            let model = generate_random_mdp(&GenConfig {
                num_states: states,
                num_actions: 2 + (i as usize % 2),
                transition_density: density,
                reward_range: (-1.0, 1.0),
                ensure_positive: false,
                gamma: if i % 2 == 0 { 0.9 } else { 0.5 },
                seed: 8200 + i,
            })
            .expect("valid config");
            let mut rng = RngStream::from_seed(8300 + i);
            let initial = FiniteHorizonPolicy::random(&model, horizon, &mut rng);
            let run = run_pips_async_offline(
                &model,
                &initial,
                &Schedule::LevelEmbedded { seed: 8400 + i },
                32,
                horizon * states,
            )
            .map_err(|e| e.to_string())?;
            if !run.terminated {
                return Err(format!("model {i}: embedded schedule did not terminate"));
            }
            let values = evaluate_policy(&model, &run.policy, None).map_err(|e| e.to_string())?;
            let (oracle, _) = backward_induction(&model, horizon, None).map_err(|e| e.to_string())?;
            if !tables_match(&values, &oracle, VALUE_EQ_TOL) {
                return Err(format!("model {i}: embedded schedule missed the optimum"));
            }
        }

        // A schedule that never visits an improvable state loops to the cap.
        let model = toggle2();
        let stay = FiniteHorizonPolicy::stationary(vec![ActionId(0), ActionId(0)], 2);
        let stuck = run_pips_async_offline(
            &model,
            &stay,
            &Schedule::Explicit(vec![StateId(1)]),
            32,
            30,
        )
        .map_err(|e| e.to_string())?;
        if stuck.terminated {
            return Err("adversarial schedule unexpectedly reached the optimum".into());
        }
        if stuck.policy != stay {
            return Err("adversarial schedule changed the policy".into());
        }
        if stuck.reports.len() != 30 {
            return Err(format!("expected 30 no-op steps, got {}", stuck.reports.len()));
        }
        Ok(())
    });
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pips"))
}

fn run_capture(args: &[&str]) -> Result<(Vec<u8>, i32), String> {
    let out = bin()
        .args(args)
        .output()
        .map_err(|e| format!("spawn failed: {e}"))?;
    Ok((out.stdout, out.status.code().unwrap_or(-1)))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

#[test]
fn criterion_9_determinism() {
    check(9, "byte-identical reruns", || {
        let dir: PathBuf =
            std::env::temp_dir().join(format!("pips-acceptance-9-{}", std::process::id()));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let toggle_path = dir.join("toggle2.json");
        fs::write(&toggle_path, toggle2().to_json()).map_err(|e| e.to_string())?;
        let toggle = toggle_path.to_str().expect("utf8 path");

        // gen: identical files from the same seed.
        let a = dir.join("gen-a.json");
        let b = dir.join("gen-b.json");
        for target in [&a, &b] {
            let (_, code) = run_capture(&[
                "gen", "--states", "5", "--actions", "3", "--seed", "11", "--gamma", "0.9",
                "--ensure-positive", "-o",
                target.to_str().expect("utf8 path"),
            ])?;
            if code != 0 {
                return Err(format!("gen exited {code}"));
            }
        }
        if read_bytes(&a)? != read_bytes(&b)? {
            return Err("gen produced different files for the same seed".into());
        }
        let gen_model = a.to_str().expect("utf8 path");

        // Stdout-producing commands, run twice each.
        let trace_1 = dir.join("trace-1.jsonl");
        let trace_2 = dir.join("trace-2.jsonl");
        let csv_1 = dir.join("curve-1.csv");
        let csv_2 = dir.join("curve-2.csv");
        let command_sets: Vec<(Vec<String>, Vec<String>)> = vec![
            (
                vec!["solve", toggle, "-H", "3"].into_iter().map(String::from).collect(),
                vec!["solve", toggle, "-H", "3"].into_iter().map(String::from).collect(),
            ),
            (
                vec!["pips-sync", toggle, "-H", "3"].into_iter().map(String::from).collect(),
                vec!["pips-sync", toggle, "-H", "3"].into_iter().map(String::from).collect(),
            ),
            (
                vec!["pips-async", toggle, "-H", "2", "--schedule", "embedded", "--seed", "5"]
                    .into_iter()
                    .map(String::from)
                    .collect(),
                vec!["pips-async", toggle, "-H", "2", "--schedule", "embedded", "--seed", "5"]
                    .into_iter()
                    .map(String::from)
                    .collect(),
            ),
            (
                [
                    "online", gen_model, "-H", "2", "--steps", "25", "--seed", "9",
                    "--supervisor", "random", "--trace",
                    trace_1.to_str().expect("utf8 path"),
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                [
                    "online", gen_model, "-H", "2", "--steps", "25", "--seed", "9",
                    "--supervisor", "random", "--trace",
                    trace_2.to_str().expect("utf8 path"),
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ),
            (
                [
                    "errorbound", gen_model, "--hmin", "1", "--hmax", "4", "-o",
                    csv_1.to_str().expect("utf8 path"),
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                [
                    "errorbound", gen_model, "--hmin", "1", "--hmax", "4", "-o",
                    csv_2.to_str().expect("utf8 path"),
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ),
            (
                vec!["analyze", toggle, "--exhaustive"].into_iter().map(String::from).collect(),
                vec!["analyze", toggle, "--exhaustive"].into_iter().map(String::from).collect(),
            ),
        ];
        for (first, second) in &command_sets {
            let first_args: Vec<&str> = first.iter().map(String::as_str).collect();
            let second_args: Vec<&str> = second.iter().map(String::as_str).collect();
            let (out_1, code_1) = run_capture(&first_args)?;
            let (out_2, code_2) = run_capture(&second_args)?;
            if code_1 != 0 || code_2 != 0 {
                return Err(format!("{:?} exited {code_1}/{code_2}", first_args[0]));
            }
            if out_1 != out_2 {
                return Err(format!("{:?} stdout differs across reruns", first_args[0]));
            }
        }
        if read_bytes(&trace_1)? != read_bytes(&trace_2)? {
            return Err("online traces differ across reruns".into());
        }
        if read_bytes(&csv_1)? != read_bytes(&csv_2)? {
            return Err("error-curve files differ across reruns".into());
        }
        Ok(())
    });
}
