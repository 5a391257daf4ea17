//! The online rolling-horizon controller.
//!
//! Each step the controller improves its horizon policy only at the state the
//! system currently occupies (fusing any guarded supervisor feedback), acts
//! with the first entry of the updated policy, and lets the model draw the
//! next state. Values never decrease along a run; whether the policy locks in
//! globally or only over the visited communication class depends on the
//! transition structure, and [`verify_local_optimality`] checks the achieved
//! claim after the fact.

use serde::Serialize;

use crate::chain::{communicating_classes, StationaryPolicy};
use crate::error::{PipsError, Result};
use crate::horizon::{
    backward_induction, evaluate_policy, has_switchable_action, improvable_set, q_raw,
    FiniteHorizonPolicy,
};
use crate::model::{sample_next_state, ActionId, MdpModel, StateId};
use crate::rng::RngStream;
use crate::switching::{improve_at_state, ImprovementReport, LevelSuggestions};

/// A supervisor offers per-level action suggestions for the visited state.
/// Faults are reported, never propagated: a failing supervisor is treated as
/// silent for that step.
pub trait Supervisor {
    fn name(&self) -> &str;

    /// Called once per step with the step index, the visited state, and a
    /// snapshot of the current policy. Index 0 of the result is level 1
    /// (remaining-horizon order); `None` entries mean no suggestion.
    fn suggest(
        &mut self,
        step: usize,
        state: StateId,
        policy: &FiniteHorizonPolicy,
    ) -> std::result::Result<LevelSuggestions, SupervisorFault>;
}

/// Why a supervisor produced nothing this step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisorFault(pub String);

/// Where a run starts.
#[derive(Debug, Clone)]
pub enum StartState {
    Fixed(StateId),
    /// Drawn once from these (nonnegative, not all zero) weights.
    Drawn(Vec<f64>),
}

/// How the first policy is chosen.
#[derive(Debug, Clone)]
pub enum InitialPolicy {
    Given(FiniteHorizonPolicy),
    /// Uniformly random admissible policy from the run's seed.
    Seeded,
}

/// Where the visited states come from.
#[derive(Debug, Clone)]
pub enum VisitSource {
    /// Closed loop: the model itself draws each next state.
    ClosedLoop,
    /// A precomputed visitation sequence; the model still supplies rewards
    /// and the improvement machinery, but no transitions are sampled. The
    /// run covers `min(max_steps, sequence length)` steps and the start
    /// state is the first element.
    Scripted(Vec<StateId>),
}

#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub horizon: usize,
    pub max_steps: usize,
    /// Start state for closed-loop runs (ignored when scripted).
    pub start: StartState,
    pub initial_policy: InitialPolicy,
    pub visits: VisitSource,
    /// Candidate budget handed to the per-state improvement step.
    pub budget: usize,
    /// Stability window: the run may stop early once this many consecutive
    /// steps changed nothing and every state visited inside the window has an
    /// empty improvable set. Must be at least the number of states.
    pub window: usize,
    pub seed: u64,
}

/// Everything one step did.
#[derive(Debug, Clone)]
pub struct StepRecord {
    /// 1-based step index.
    pub k: usize,
    pub state: StateId,
    /// Action executed: the first entry of the *updated* policy at `state`.
    pub action: ActionId,
    pub reward: f64,
    pub next_state: StateId,
    /// Levels changed at the visited state this step.
    pub changed_levels: Vec<usize>,
    pub report: ImprovementReport,
    pub supervisor_faults: usize,
    /// Full-horizon value of the updated policy at the visited state.
    pub value_at_state: f64,
    /// Full-horizon value row of the updated policy (kept for monotonicity
    /// checks; not part of the serialized trace lines).
    pub values_after: Vec<f64>,
}

/// Verdict of the post-hoc check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalOptVerdict {
    LocallyOptimal,
    NotLocallyOptimal,
    /// The trace never stabilized, so no claim is made.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateCheck {
    pub state: usize,
    pub improvable_empty: bool,
}

/// Result of checking the converged policy over the visited classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalOptReport {
    pub verdict: LocalOptVerdict,
    /// Communication classes (of the first-entry chain) that contain a state
    /// visited after stabilization.
    pub checked_classes: Vec<Vec<usize>>,
    pub per_state: Vec<StateCheck>,
    /// Whether the whole improvable set is empty (a strictly stronger claim).
    pub globally_optimal: Option<bool>,
}

/// A full run: per-step records, the policy the run settled on, the detected
/// stabilization step, and the local-optimality report.
#[derive(Debug, Clone)]
pub struct OnlineTrace {
    pub records: Vec<StepRecord>,
    pub final_policy: FiniteHorizonPolicy,
    /// Last step that changed a coordinate (0 when nothing ever changed),
    /// reported only when at least one later step confirms stability.
    pub stabilization_step: Option<usize>,
    pub local_optimality: LocalOptReport,
}

/// The serialized shape of one trace line.
#[derive(Serialize)]
struct TraceLine {
    k: usize,
    state: usize,
    action: usize,
    reward: f64,
    changed_levels: Vec<usize>,
    suggestions_accepted: usize,
    suggestions_rejected: usize,
    value_at_state: f64,
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    lambda: LambdaOut,
    stabilization_step: Option<usize>,
    local_optimality: &'a LocalOptReport,
}

#[derive(Serialize)]
struct LambdaOut {
    indexing: &'static str,
    horizon: usize,
    entries: Vec<Vec<usize>>,
}

impl OnlineTrace {
    /// One JSON object per step plus a trailing summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.records {
            let line = TraceLine {
                k: rec.k,
                state: rec.state.0,
                action: rec.action.0,
                reward: rec.reward,
                changed_levels: rec.changed_levels.clone(),
                suggestions_accepted: rec.report.suggestions_accepted,
                suggestions_rejected: rec.report.suggestions_rejected.len(),
                value_at_state: rec.value_at_state,
            };
            out.push_str(&serde_json::to_string(&line).expect("trace line serializes"));
            out.push('\n');
        }
        let horizon = self.final_policy.horizon();
        let summary = TraceSummary {
            lambda: LambdaOut {
                indexing: crate::horizon::INDEXING_TAG,
                horizon,
                entries: (1..=horizon)
                    .map(|j| self.final_policy.level(j).iter().map(|a| a.0).collect())
                    .collect(),
            },
            stabilization_step: self.stabilization_step,
            local_optimality: &self.local_optimality,
        };
        out.push_str(&serde_json::to_string(&summary).expect("summary serializes"));
        out.push('\n');
        out
    }
}

/// The supervisor-fusion and policy-update half of one step, shared by
/// closed-loop and scripted runs. The returned record's `next_state` is
/// provisionally the visited state; callers fill in the real successor.
fn update_at_visited_state(
    model: &MdpModel,
    policy: &FiniteHorizonPolicy,
    k: usize,
    x: StateId,
    supervisors: &mut [Box<dyn Supervisor>],
    budget: usize,
) -> Result<(FiniteHorizonPolicy, StepRecord)> {
    let mut columns: Vec<LevelSuggestions> = Vec::with_capacity(supervisors.len());
    let mut faults = 0usize;
    for sup in supervisors.iter_mut() {
        match sup.suggest(k, x, policy) {
            Ok(column) if !column.is_empty() => columns.push(column),
            Ok(_) => {}
            Err(_) => faults += 1,
        }
    }

    let (next_policy, report) = improve_at_state(model, policy, x, &columns, budget)?;
    let action = next_policy.first_entry()[x.0];
    let reward = model.reward(x, action);
    let values = evaluate_policy(model, &next_policy, None)?;
    let record = StepRecord {
        k,
        state: x,
        action,
        reward,
        next_state: x,
        changed_levels: report.changed_levels(),
        report,
        supervisor_faults: faults,
        value_at_state: values.value(values.horizon(), x),
        values_after: values.final_row().to_vec(),
    };
    Ok((next_policy, record))
}

/// One closed-loop controller step: improve at the visited state (guarded
/// fusion of any supervisor feedback), act with the updated first entry,
/// sample the next state.
pub fn online_step(
    model: &MdpModel,
    policy: &FiniteHorizonPolicy,
    k: usize,
    x: StateId,
    supervisors: &mut [Box<dyn Supervisor>],
    rng: &mut RngStream,
    budget: usize,
) -> Result<(FiniteHorizonPolicy, StepRecord, StateId)> {
    let (next_policy, mut record) = update_at_visited_state(model, policy, k, x, supervisors, budget)?;
    let next_state = sample_next_state(model, x, record.action, rng)?;
    record.next_state = next_state;
    Ok((next_policy, record, next_state))
}

/// Runs the controller for up to `max_steps` steps (early exit once the
/// stability window passes quietly and everything visited inside it is
/// unimprovable), then verifies the local-optimality claim on the trace.
pub fn run_online(
    model: &MdpModel,
    cfg: &OnlineConfig,
    supervisors: &mut [Box<dyn Supervisor>],
) -> Result<OnlineTrace> {
    if cfg.max_steps == 0 {
        return Err(PipsError::InvalidConfig("max_steps must be at least 1".into()));
    }
    if cfg.window < model.num_states() {
        return Err(PipsError::InvalidConfig(format!(
            "stability window {} is below the state count {}",
            cfg.window,
            model.num_states()
        )));
    }
    let mut rng = RngStream::from_seed(cfg.seed);
    let mut policy = match &cfg.initial_policy {
        InitialPolicy::Given(p) => {
            p.validate_for(model)?;
            if p.horizon() != cfg.horizon {
                return Err(PipsError::HorizonMismatch {
                    expected: cfg.horizon,
                    got: p.horizon(),
                });
            }
            p.clone()
        }
        InitialPolicy::Seeded => FiniteHorizonPolicy::random(model, cfg.horizon, &mut rng),
    };
    let script: Option<&[StateId]> = match &cfg.visits {
        VisitSource::ClosedLoop => None,
        VisitSource::Scripted(sequence) => {
            if sequence.is_empty() {
                return Err(PipsError::InvalidConfig("empty visitation script".into()));
            }
            if let Some(bad) = sequence.iter().find(|s| s.0 >= model.num_states()) {
                return Err(PipsError::InvalidSchedule(bad.0));
            }
            Some(sequence)
        }
    };
    let mut x = match script {
        Some(sequence) => sequence[0],
        None => match &cfg.start {
            StartState::Fixed(s) => {
                if s.0 >= model.num_states() {
                    return Err(PipsError::StateOutOfRange(s.0));
                }
                *s
            }
            StartState::Drawn(weights) => draw_start(model, weights, &mut rng)?,
        },
    };

    let total_steps = match script {
        Some(sequence) => cfg.max_steps.min(sequence.len()),
        None => cfg.max_steps,
    };
    let mut records: Vec<StepRecord> = Vec::new();
    let mut last_change = 0usize;
    for k in 1..=total_steps {
        let (next_policy, record, next_state) = match script {
            None => online_step(model, &policy, k, x, supervisors, &mut rng, cfg.budget)?,
            Some(sequence) => {
                let (next_policy, mut record) =
                    update_at_visited_state(model, &policy, k, x, supervisors, cfg.budget)?;
                // The script, not the model, decides where the run goes; the
                // final step has no successor to report.
                let next = sequence.get(k).copied().unwrap_or(x);
                record.next_state = next;
                (next_policy, record, next)
            }
        };
        if !record.changed_levels.is_empty() {
            last_change = k;
        }
        policy = next_policy;
        records.push(record);
        x = next_state;

        if k >= cfg.window && k - last_change >= cfg.window {
            let values = evaluate_policy(model, &policy, None)?;
            let window_states: std::collections::BTreeSet<usize> = records
                [k - cfg.window..k]
                .iter()
                .map(|r| r.state.0)
                .collect();
            let quiet = window_states.iter().all(|&s| {
                (1..=cfg.horizon).all(|h| !has_switchable_action(model, &values, StateId(s), h))
            });
            if quiet {
                break;
            }
        }
    }

    let total = records.len();
    let stabilization_step = if last_change < total {
        Some(last_change)
    } else {
        None
    };

    let mut trace = OnlineTrace {
        records,
        final_policy: policy,
        stabilization_step,
        local_optimality: LocalOptReport {
            verdict: LocalOptVerdict::Inconclusive,
            checked_classes: Vec::new(),
            per_state: Vec::new(),
            globally_optimal: None,
        },
    };
    trace.local_optimality = verify_local_optimality(model, &trace)?;
    Ok(trace)
}

fn draw_start(model: &MdpModel, weights: &[f64], rng: &mut RngStream) -> Result<StateId> {
    if weights.len() != model.num_states() {
        return Err(PipsError::InvalidConfig(format!(
            "start distribution has {} entries, model has {} states",
            weights.len(),
            model.num_states()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(PipsError::InvalidConfig(
            "start distribution has a negative or non-finite weight".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(PipsError::InvalidConfig(
            "start distribution has zero total mass".into(),
        ));
    }
    let u = rng.unit() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last = i;
        }
        cum += w;
        if u < cum {
            return Ok(StateId(i));
        }
    }
    Ok(StateId(last))
}

/// Checks the converged policy of a stabilized trace: over every
/// communication class (of the first-entry chain) containing a state visited
/// after stabilization, no state may have a nonempty improvable set. Traces
/// without a stabilization step come back `Inconclusive`, not guessed.
pub fn verify_local_optimality(model: &MdpModel, trace: &OnlineTrace) -> Result<LocalOptReport> {
    let Some(stable_after) = trace.stabilization_step else {
        return Ok(LocalOptReport {
            verdict: LocalOptVerdict::Inconclusive,
            checked_classes: Vec::new(),
            per_state: Vec::new(),
            globally_optimal: None,
        });
    };
    let policy = &trace.final_policy;
    let stationary = StationaryPolicy::from_first_entry(policy);
    let partition = communicating_classes(model, &stationary)?;

    let visited_after: std::collections::BTreeSet<usize> = trace
        .records
        .iter()
        .filter(|r| r.k > stable_after)
        .map(|r| r.state.0)
        .collect();

    let mut checked_classes: Vec<Vec<usize>> = Vec::new();
    let mut states_to_check: Vec<usize> = Vec::new();
    for class in &partition.classes {
        if class.states.iter().any(|s| visited_after.contains(&s.0)) {
            checked_classes.push(class.states.iter().map(|s| s.0).collect());
            states_to_check.extend(class.states.iter().map(|s| s.0));
        }
    }
    states_to_check.sort_unstable();

    let mut per_state = Vec::with_capacity(states_to_check.len());
    let mut all_empty = true;
    for s in states_to_check {
        let empty = improvable_set(model, policy, Some(StateId(s)))?.is_empty();
        all_empty &= empty;
        per_state.push(StateCheck {
            state: s,
            improvable_empty: empty,
        });
    }
    let globally_optimal = improvable_set(model, policy, None)?.is_empty();

    Ok(LocalOptReport {
        verdict: if all_empty {
            LocalOptVerdict::LocallyOptimal
        } else {
            LocalOptVerdict::NotLocallyOptimal
        },
        checked_classes,
        per_state,
        globally_optimal: Some(globally_optimal),
    })
}

/// The built-in supervisor kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinKind {
    /// Never suggests anything.
    Null,
    /// Suggests the visited column of an optimal policy (computed by backward
    /// induction at construction).
    Oracle,
    /// Uniformly random admissible suggestion at every level, from its own
    /// seeded stream.
    Random,
    /// Per-level lookahead argmin against the snapshot's own values: the
    /// worst admissible pitch at every level.
    Adversarial,
}

/// Builds a built-in supervisor for `model` at the given horizon. The random
/// kind draws from its own stream seeded with `seed`; the others ignore it.
pub fn builtin_supervisor(
    kind: BuiltinKind,
    model: &MdpModel,
    horizon: usize,
    seed: u64,
) -> Result<Box<dyn Supervisor>> {
    Ok(match kind {
        BuiltinKind::Null => Box::new(NullSupervisor),
        BuiltinKind::Oracle => {
            let (_, optimal) = backward_induction(model, horizon, None)?;
            Box::new(OracleSupervisor { optimal })
        }
        BuiltinKind::Random => Box::new(RandomSupervisor {
            model: model.clone(),
            rng: RngStream::from_seed(seed),
        }),
        BuiltinKind::Adversarial => Box::new(AdversarialSupervisor {
            model: model.clone(),
        }),
    })
}

struct NullSupervisor;

impl Supervisor for NullSupervisor {
    fn name(&self) -> &str {
        "null"
    }

    fn suggest(
        &mut self,
        _step: usize,
        _state: StateId,
        _policy: &FiniteHorizonPolicy,
    ) -> std::result::Result<LevelSuggestions, SupervisorFault> {
        Ok(Vec::new())
    }
}

struct OracleSupervisor {
    optimal: FiniteHorizonPolicy,
}

impl Supervisor for OracleSupervisor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn suggest(
        &mut self,
        _step: usize,
        state: StateId,
        _policy: &FiniteHorizonPolicy,
    ) -> std::result::Result<LevelSuggestions, SupervisorFault> {
        Ok(self
            .optimal
            .column(state)
            .into_iter()
            .map(Some)
            .collect())
    }
}

struct RandomSupervisor {
    model: MdpModel,
    rng: RngStream,
}

impl Supervisor for RandomSupervisor {
    fn name(&self) -> &str {
        "random"
    }

    fn suggest(
        &mut self,
        _step: usize,
        state: StateId,
        policy: &FiniteHorizonPolicy,
    ) -> std::result::Result<LevelSuggestions, SupervisorFault> {
        let m = self.model.actions_per_state[state.0];
        Ok((0..policy.horizon())
            .map(|_| Some(ActionId(self.rng.below(m))))
            .collect())
    }
}

struct AdversarialSupervisor {
    model: MdpModel,
}

impl Supervisor for AdversarialSupervisor {
    fn name(&self) -> &str {
        "adversarial"
    }

    fn suggest(
        &mut self,
        _step: usize,
        state: StateId,
        policy: &FiniteHorizonPolicy,
    ) -> std::result::Result<LevelSuggestions, SupervisorFault> {
        let values = evaluate_policy(&self.model, policy, None)
            .map_err(|e| SupervisorFault(e.to_string()))?;
        let mut column = Vec::with_capacity(policy.horizon());
        for level in 1..=policy.horizon() {
            let prev = values.row(level - 1);
            let mut worst = ActionId(0);
            let mut worst_q = q_raw(&self.model, state, ActionId(0), prev);
            for a in 1..self.model.actions_per_state[state.0] {
                let q = q_raw(&self.model, state, ActionId(a), prev);
                if q < worst_q {
                    worst_q = q;
                    worst = ActionId(a);
                }
            }
            column.push(Some(worst));
        }
        Ok(column)
    }
}
