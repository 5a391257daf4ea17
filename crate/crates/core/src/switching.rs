//! Multi-policy switching and the offline improvement drivers.
//!
//! Policy switching assembles, per (level, state), the entry of whichever
//! candidate has the best remaining-horizon value there; the result is no
//! worse than every candidate, level by level. Candidate sets are built from
//! a base policy's switchable actions and then kept only if their evaluated
//! horizon row verifiably beats the base: a switch at a deep level always
//! lifts the value at that level, but the lift reaches the horizon row only
//! where transition probability flows to it, so membership is confirmed by
//! evaluation rather than assumed. The improvement drivers work on the
//! unfiltered switch-form pool (which intersects the verified set whenever
//! that set is nonempty), so per-level progress never stalls while something
//! is improvable. On top of these sit the synchronous driver (switch over the
//! whole pool until nothing is improvable) and the asynchronous driver
//! (improve one scheduled state per step).

use serde::{Deserialize, Serialize};

use crate::error::{PipsError, Result};
use crate::horizon::{
    evaluate_policy, improvable_set, q_raw, switchable_actions, FiniteHorizonPolicy, ValueTable,
    STRICT_SLACK,
};
use crate::model::{ActionId, MdpModel, StateId};
use crate::par;
use crate::rng::RngStream;

/// Safety cap on improvement iterations; the monotone chains are finite, so
/// hitting this means a bug, not a hard instance.
const MAX_IMPROVEMENT_ROUNDS: usize = 1_000_000;

/// How a candidate entered a candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateOrigin {
    /// One switched (level, state) coordinate.
    SingletonSwitch {
        level: usize,
        state: StateId,
        action: ActionId,
    },
    /// Every improvable level switched to its lookahead argmax. `state` is
    /// the restriction state, or `None` for the whole-policy greedy switch.
    AllGreedySwitch { state: Option<StateId> },
    /// Produced by exhaustive enumeration of the improvement set.
    ExhaustiveMember,
    /// A guarded supervisor suggestion.
    Supervisor,
    /// The unmodified base policy (included so "no improvement" needs no
    /// special case).
    Base,
}

/// A policy together with its exact value table.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub policy: FiniteHorizonPolicy,
    pub values: ValueTable,
    pub origin: CandidateOrigin,
}

/// Strict improvers of a base policy (all of them when the budget allows
/// exhaustive enumeration, a seed set otherwise).
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub base: FiniteHorizonPolicy,
    pub members: Vec<Candidate>,
    /// True when enumeration was truncated to the seed set.
    pub budget_hit: bool,
}

/// One changed policy coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangedEntry {
    pub level: usize,
    pub state: usize,
    pub old_action: usize,
    pub new_action: usize,
}

/// A supervisor suggestion that did not enter the candidate pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedSuggestion {
    pub level: usize,
    pub action: usize,
    pub reason: String,
}

/// What a single-state improvement step did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImprovementReport {
    pub changed_pairs: Vec<ChangedEntry>,
    /// Per-state gain of the full-horizon value row over the base.
    pub value_gain: Vec<f64>,
    pub candidates_examined: usize,
    pub suggestions_offered: usize,
    pub suggestions_accepted: usize,
    pub suggestions_rejected: Vec<RejectedSuggestion>,
}

impl ImprovementReport {
    /// One-object-per-line serialization.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn changed_levels(&self) -> Vec<usize> {
        self.changed_pairs.iter().map(|c| c.level).collect()
    }
}

/// Per-level suggestions for one state; `None` means no suggestion at that
/// level. Index 0 is level 1 (remaining-horizon order).
pub type LevelSuggestions = Vec<Option<ActionId>>;

/// Assembles the switched policy: per (level, state), copy the entry of the
/// candidate with the highest value at that level and state. Ties keep the
/// lowest candidate index. The result's value row dominates every candidate.
pub fn policy_switch(candidates: &[Candidate]) -> Result<FiniteHorizonPolicy> {
    let first = candidates.first().ok_or(PipsError::EmptyCandidateSet)?;
    let horizon = first.policy.horizon();
    let n = first.policy.num_states();
    for c in candidates {
        if c.policy.horizon() != horizon || c.values.horizon() != horizon {
            return Err(PipsError::HorizonMismatch {
                expected: horizon,
                got: c.policy.horizon(),
            });
        }
        if c.policy.num_states() != n {
            return Err(PipsError::InvalidConfig(
                "candidates cover different state sets".into(),
            ));
        }
    }

    let mut levels = Vec::with_capacity(horizon);
    for j in 1..=horizon {
        let mut row = Vec::with_capacity(n);
        for x in 0..n {
            let mut best = 0usize;
            let mut best_value = candidates[0].values.value(j, StateId(x));
            for (i, c) in candidates.iter().enumerate().skip(1) {
                let v = c.values.value(j, StateId(x));
                if v > best_value {
                    best_value = v;
                    best = i;
                }
            }
            row.push(candidates[best].policy.action(j, StateId(x)));
        }
        levels.push(row);
    }
    Ok(FiniteHorizonPolicy::from_levels(levels))
}

fn evaluate_candidates(
    model: &MdpModel,
    drafts: Vec<(FiniteHorizonPolicy, CandidateOrigin)>,
) -> Result<Vec<Candidate>> {
    let evaluated = par::map_collect(&drafts, |(policy, _)| evaluate_policy(model, policy, None));
    drafts
        .into_iter()
        .zip(evaluated)
        .map(|((policy, origin), values)| {
            Ok(Candidate {
                policy,
                values: values?,
                origin,
            })
        })
        .collect()
}

/// Switchable actions per improvement slot. Each slot is one (level, state)
/// pair together with every action that strictly beats the base there.
struct Slots {
    entries: Vec<(usize, StateId, Vec<ActionId>)>,
}

impl Slots {
    fn collect(
        model: &MdpModel,
        values: &ValueTable,
        horizon: usize,
        restrict: Option<StateId>,
    ) -> Self {
        let mut entries = Vec::new();
        for h in 1..=horizon {
            for x in 0..model.num_states() {
                if let Some(only) = restrict {
                    if only.0 != x {
                        continue;
                    }
                }
                let actions = switchable_actions(model, values, StateId(x), h);
                if !actions.is_empty() {
                    entries.push((h, StateId(x), actions));
                }
            }
        }
        Self { entries }
    }

    /// `prod(|S| + 1) - 1`: every nonempty choice of switched slots.
    fn full_count(&self) -> u128 {
        self.entries
            .iter()
            .map(|(_, _, s)| (s.len() + 1) as u128)
            .fold(1u128, |acc, v| acc.saturating_mul(v))
            .saturating_sub(1)
    }
}

fn enumerate_exhaustive(
    base: &FiniteHorizonPolicy,
    slots: &Slots,
    count: u128,
) -> Vec<(FiniteHorizonPolicy, CandidateOrigin)> {
    let mut drafts = Vec::with_capacity(count as usize);
    for idx in 1..=count {
        let mut policy = base.clone();
        let mut rest = idx;
        for (level, state, actions) in &slots.entries {
            let radix = (actions.len() + 1) as u128;
            let digit = (rest % radix) as usize;
            rest /= radix;
            if digit > 0 {
                policy.set_action(*level, *state, actions[digit - 1]);
            }
        }
        drafts.push((policy, CandidateOrigin::ExhaustiveMember));
    }
    drafts
}

fn seed_drafts(
    model: &MdpModel,
    base: &FiniteHorizonPolicy,
    values: &ValueTable,
    slots: &Slots,
    greedy_state: Option<StateId>,
) -> Vec<(FiniteHorizonPolicy, CandidateOrigin)> {
    let mut drafts = Vec::new();
    for (level, state, actions) in &slots.entries {
        for &a in actions {
            let mut policy = base.clone();
            policy.set_action(*level, *state, a);
            drafts.push((
                policy,
                CandidateOrigin::SingletonSwitch {
                    level: *level,
                    state: *state,
                    action: a,
                },
            ));
        }
    }

    // Greedy switch: every improvable slot set to its lookahead argmax. The
    // argmax lands inside the switchable set whenever that set is nonempty.
    let mut greedy = base.clone();
    for (level, state, _) in &slots.entries {
        let prev = values.row(level - 1);
        let mut best = ActionId(0);
        let mut best_q = q_raw(model, *state, ActionId(0), prev);
        for a in 1..model.actions_per_state[state.0] {
            let q = q_raw(model, *state, ActionId(a), prev);
            if q > best_q {
                best_q = q;
                best = ActionId(a);
            }
        }
        greedy.set_action(*level, *state, best);
    }
    if !drafts.iter().any(|(p, _)| *p == greedy) {
        drafts.push((greedy, CandidateOrigin::AllGreedySwitch { state: greedy_state }));
    }
    drafts
}

/// Unverified switch-form candidates: the raw material both for the public
/// candidate sets (after the strict-improvement filter) and for the drivers
/// (which want the whole pool).
struct RawPool {
    members: Vec<Candidate>,
    base_values: ValueTable,
    budget_hit: bool,
}

fn raw_pool(
    model: &MdpModel,
    base: &FiniteHorizonPolicy,
    restrict: Option<StateId>,
    budget: usize,
) -> Result<RawPool> {
    base.validate_for(model)?;
    let values = evaluate_policy(model, base, None)?;
    let slots = Slots::collect(model, &values, base.horizon(), restrict);
    if slots.entries.is_empty() {
        return Ok(RawPool {
            members: Vec::new(),
            base_values: values,
            budget_hit: false,
        });
    }

    let full = slots.full_count();
    let (drafts, budget_hit) = if full <= budget as u128 {
        (enumerate_exhaustive(base, &slots, full), false)
    } else {
        (seed_drafts(model, base, &values, &slots, restrict), true)
    };
    let members = evaluate_candidates(model, drafts)?;
    Ok(RawPool {
        members,
        base_values: values,
        budget_hit,
    })
}

fn beats_at_horizon(member: &Candidate, base_values: &ValueTable) -> bool {
    let member_row = member.values.final_row();
    let base_row = base_values.final_row();
    let dominates = member_row.iter().zip(base_row).all(|(m, b)| m >= b);
    let strict = member_row
        .iter()
        .zip(base_row)
        .any(|(m, b)| *m > *b + STRICT_SLACK);
    dominates && strict
}

fn generate_candidates(
    model: &MdpModel,
    base: &FiniteHorizonPolicy,
    restrict: Option<StateId>,
    budget: usize,
) -> Result<CandidateSet> {
    let pool = raw_pool(model, base, restrict, budget)?;
    let members = pool
        .members
        .into_iter()
        .filter(|m| beats_at_horizon(m, &pool.base_values))
        .collect();
    Ok(CandidateSet {
        base: base.clone(),
        members,
        budget_hit: pool.budget_hit,
    })
}

/// All verified strict improvers of `base` reachable by switching actions at
/// the single state `x`. Exhaustive when the full switch-form set fits in
/// `budget`; otherwise built from the seed set (every singleton switch plus
/// the greedy switch at `x`) with `budget_hit` raised. Empty when nothing at
/// `x` is improvable.
pub fn generate_beta_at_state(
    model: &MdpModel,
    base: &FiniteHorizonPolicy,
    x: StateId,
    budget: usize,
) -> Result<CandidateSet> {
    if x.0 >= model.num_states() {
        return Err(PipsError::StateOutOfRange(x.0));
    }
    generate_candidates(model, base, Some(x), budget)
}

/// All verified strict improvers of `base` over its whole improvable set,
/// with the same budget / seed-set rule as [`generate_beta_at_state`].
pub fn generate_beta(
    model: &MdpModel,
    base: &FiniteHorizonPolicy,
    budget: usize,
) -> Result<CandidateSet> {
    generate_candidates(model, base, None, budget)
}

/// Improves `base` only in the column of state `x`, fusing guarded supervisor
/// suggestions into the candidate pool. A suggested action enters only if its
/// lookahead against the base's own continuation values strictly beats the
/// base (the switchable test); everything else is rejected and recorded. The
/// final column comes from policy switching over the improvers, the guarded
/// hybrids, and the base itself; monotonicity is re-checked by evaluation
/// with fallback to the suggestion-free result.
pub fn improve_at_state(
    model: &MdpModel,
    base: &FiniteHorizonPolicy,
    x: StateId,
    suggestions: &[LevelSuggestions],
    budget: usize,
) -> Result<(FiniteHorizonPolicy, ImprovementReport)> {
    if x.0 >= model.num_states() {
        return Err(PipsError::StateOutOfRange(x.0));
    }
    let pool_source = raw_pool(model, base, Some(x), budget)?;
    let base_values = pool_source.base_values.clone();
    let horizon = base.horizon();

    let mut offered = 0usize;
    let mut accepted = 0usize;
    let mut rejected = Vec::new();
    let mut hybrid_drafts = Vec::new();
    for column in suggestions {
        let mut switched_levels = Vec::new();
        for level in 1..=horizon {
            let Some(a) = column.get(level - 1).copied().flatten() else {
                continue;
            };
            offered += 1;
            if !model.is_admissible(x, a) {
                rejected.push(RejectedSuggestion {
                    level,
                    action: a.0,
                    reason: "inadmissible".into(),
                });
                continue;
            }
            let q = q_raw(model, x, a, base_values.row(level - 1));
            if q > base_values.value(level, x) + STRICT_SLACK {
                switched_levels.push((level, a));
                accepted += 1;
            } else {
                rejected.push(RejectedSuggestion {
                    level,
                    action: a.0,
                    reason: "not switchable".into(),
                });
            }
        }
        if !switched_levels.is_empty() {
            let mut policy = base.clone();
            for (level, a) in switched_levels {
                policy.set_action(level, x, a);
            }
            hybrid_drafts.push((policy, CandidateOrigin::Supervisor));
        }
    }
    let hybrids = evaluate_candidates(model, hybrid_drafts)?;

    let base_candidate = Candidate {
        policy: base.clone(),
        values: base_values.clone(),
        origin: CandidateOrigin::Base,
    };

    let mut pool = pool_source.members.clone();
    pool.extend(hybrids);
    pool.push(base_candidate.clone());
    let examined = pool.len();

    let mut result = policy_switch(&pool)?;
    let mut result_values = evaluate_policy(model, &result, None)?;
    if violates_monotonicity(result_values.final_row(), base_values.final_row()) {
        // Fall back to the suggestion-free pool.
        let mut fallback_pool = pool_source.members.clone();
        fallback_pool.push(base_candidate);
        result = policy_switch(&fallback_pool)?;
        result_values = evaluate_policy(model, &result, None)?;
        if violates_monotonicity(result_values.final_row(), base_values.final_row()) {
            result = base.clone();
            result_values = base_values.clone();
        }
    }

    let mut changed_pairs = Vec::new();
    for level in 1..=horizon {
        let old = base.action(level, x);
        let new = result.action(level, x);
        if old != new {
            changed_pairs.push(ChangedEntry {
                level,
                state: x.0,
                old_action: old.0,
                new_action: new.0,
            });
        }
    }
    let value_gain = result_values
        .final_row()
        .iter()
        .zip(base_values.final_row())
        .map(|(new, old)| new - old)
        .collect();

    Ok((
        result,
        ImprovementReport {
            changed_pairs,
            value_gain,
            candidates_examined: examined,
            suggestions_offered: offered,
            suggestions_accepted: accepted,
            suggestions_rejected: rejected,
        },
    ))
}

fn violates_monotonicity(new_row: &[f64], base_row: &[f64]) -> bool {
    new_row
        .iter()
        .zip(base_row)
        .any(|(new, old)| *new < *old - STRICT_SLACK)
}

/// Result of the synchronous driver.
#[derive(Debug, Clone)]
pub struct SyncRun {
    pub policy: FiniteHorizonPolicy,
    /// Number of improvement iterations applied.
    pub iterations: usize,
    /// Full-horizon value row before any iteration and after each one.
    pub snapshots: Vec<Vec<f64>>,
}

/// Synchronous improvement: switch over the whole candidate pool of the
/// current policy until its improvable set is empty. Terminates because every
/// iteration strictly lifts some level's value and the policy space is
/// finite.
pub fn run_pips_sync(
    model: &MdpModel,
    initial: &FiniteHorizonPolicy,
    budget: usize,
) -> Result<SyncRun> {
    initial.validate_for(model)?;
    let mut policy = initial.clone();
    let mut snapshots = vec![evaluate_policy(model, &policy, None)?.final_row().to_vec()];
    let mut iterations = 0usize;
    loop {
        let pool = raw_pool(model, &policy, None, budget)?;
        if pool.members.is_empty() {
            return Ok(SyncRun {
                policy,
                iterations,
                snapshots,
            });
        }
        let mut candidates = pool.members;
        candidates.push(Candidate {
            policy: policy.clone(),
            values: pool.base_values,
            origin: CandidateOrigin::Base,
        });
        policy = policy_switch(&candidates)?;
        snapshots.push(evaluate_policy(model, &policy, None)?.final_row().to_vec());
        iterations += 1;
        if iterations > MAX_IMPROVEMENT_ROUNDS {
            return Err(PipsError::NoFixedPoint {
                what: "synchronous improvement",
                limit: MAX_IMPROVEMENT_ROUNDS,
            });
        }
    }
}

/// Where the asynchronous driver takes its update states from.
#[derive(Debug, Clone)]
pub enum Schedule {
    /// Always pick the lowest-index state with a nonempty improvable set.
    /// Terminates at the optimum.
    ImprovableFirst,
    /// Follow the given sequence, cycling it until `max_steps`. May loop
    /// forever past non-improvable states, so termination at the optimum is
    /// not guaranteed.
    Explicit(Vec<StateId>),
    /// `H` seeded permutation blocks of the whole state set; solves the
    /// 1-step problem before the 2-step problem and so on, which forces
    /// global convergence in one pass.
    LevelEmbedded { seed: u64 },
}

/// Result of the asynchronous driver.
#[derive(Debug, Clone)]
pub struct AsyncRun {
    pub policy: FiniteHorizonPolicy,
    pub reports: Vec<ImprovementReport>,
    /// True iff the final policy's improvable set is empty.
    pub terminated: bool,
}

/// `H` concatenated seeded permutations of all states. Driving the
/// asynchronous driver over this sequence reaches the optimum from any
/// initial policy: each block fixes one more level of lookahead.
pub fn level_embedded_schedule(model: &MdpModel, horizon: usize, seed: u64) -> Vec<StateId> {
    let n = model.num_states();
    let mut rng = RngStream::from_seed(seed);
    let mut sequence = Vec::with_capacity(horizon * n);
    for _ in 0..horizon {
        sequence.extend(rng.permutation(n).into_iter().map(StateId));
    }
    sequence
}

/// Asynchronous improvement: one scheduled state per step, stopping when the
/// improvable set empties, the schedule is exhausted, or `max_steps` passes.
pub fn run_pips_async_offline(
    model: &MdpModel,
    initial: &FiniteHorizonPolicy,
    schedule: &Schedule,
    budget: usize,
    max_steps: usize,
) -> Result<AsyncRun> {
    initial.validate_for(model)?;
    let embedded;
    let explicit: Option<&[StateId]> = match schedule {
        Schedule::ImprovableFirst => None,
        Schedule::Explicit(seq) => {
            if seq.is_empty() {
                return Err(PipsError::InvalidConfig("empty explicit schedule".into()));
            }
            if let Some(bad) = seq.iter().find(|s| s.0 >= model.num_states()) {
                return Err(PipsError::InvalidSchedule(bad.0));
            }
            Some(seq)
        }
        Schedule::LevelEmbedded { seed } => {
            embedded = level_embedded_schedule(model, initial.horizon(), *seed);
            Some(&embedded)
        }
    };

    let mut policy = initial.clone();
    let mut reports = Vec::new();
    for step in 0..max_steps {
        let pairs = improvable_set(model, &policy, None)?;
        if pairs.is_empty() {
            break;
        }
        let x = match schedule {
            Schedule::ImprovableFirst => pairs.iter().map(|p| p.state).min().expect("nonempty"),
            Schedule::Explicit(_) => {
                let seq = explicit.expect("explicit sequence");
                seq[step % seq.len()]
            }
            Schedule::LevelEmbedded { .. } => {
                let seq = explicit.expect("embedded sequence");
                if step >= seq.len() {
                    break;
                }
                seq[step]
            }
        };
        let (next, report) = improve_at_state(model, &policy, x, &[], budget)?;
        policy = next;
        reports.push(report);
    }

    let terminated = improvable_set(model, &policy, None)?.is_empty();
    Ok(AsyncRun {
        policy,
        reports,
        terminated,
    })
}
