//! Finite discounted MDP models: validation, a JSON file schema, seeded
//! random generation, and next-state sampling.
//!
//! A model is a finite state set `0..num_states`, a ragged admissible-action
//! set per state, a dense reward table `R(x, a)`, one transition row
//! `P[x][a]` per state-action pair, and a discount in `(0, 1)`. Models are
//! immutable after construction and safe to share across threads; validation
//! never mutates or renormalizes — it only reports.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{PipsError, Result};
use crate::rng::RngStream;

/// Absolute tolerance on transition-row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Mass added to every transition entry (then renormalized) when a generator
/// config sets `ensure_positive`.
pub const POSITIVE_FLOOR: f64 = 0.05;

/// Index of a state, in `0..num_states` of the owning model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub usize);

/// Index of an action within the admissible set of one state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A finite discounted MDP with dense per-(state, action) storage.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpModel {
    pub name: String,
    /// Discount factor, strictly inside `(0, 1)`.
    pub gamma: f64,
    /// `actions_per_state[x]` is `|A(x)|`; every state needs at least one.
    pub actions_per_state: Vec<usize>,
    /// `rewards[x][a]` is `R(x, a)`.
    pub rewards: Vec<Vec<f64>>,
    /// `transitions[x][a][y]` is `P(y | x, a)`; each row sums to one.
    pub transitions: Vec<Vec<Vec<f64>>>,
}

impl MdpModel {
    pub fn num_states(&self) -> usize {
        self.actions_per_state.len()
    }

    pub fn num_actions(&self, x: StateId) -> usize {
        self.actions_per_state[x.0]
    }

    pub fn is_admissible(&self, x: StateId, a: ActionId) -> bool {
        x.0 < self.num_states() && a.0 < self.actions_per_state[x.0]
    }

    pub fn reward(&self, x: StateId, a: ActionId) -> f64 {
        self.rewards[x.0][a.0]
    }

    pub fn transition_row(&self, x: StateId, a: ActionId) -> &[f64] {
        &self.transitions[x.0][a.0]
    }

    /// Checks every model invariant and reports all violations found.
    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    /// Encodes the model in the documented JSON schema.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            gamma: self.gamma,
            num_states: self.num_states(),
            actions_per_state: self.actions_per_state.clone(),
            rewards: self.rewards.clone(),
            transitions: self.transitions.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("model serializes");
        text.push('\n');
        text
    }

    /// Decodes a model from the documented JSON schema. This parses and
    /// checks the declared shape only; run [`MdpModel::validate`] afterwards
    /// to check the numeric invariants.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| PipsError::Malformed(e.to_string()))?;
        if file.actions_per_state.len() != file.num_states {
            return Err(PipsError::Malformed(format!(
                "num_states is {} but actions_per_state has {} entries",
                file.num_states,
                file.actions_per_state.len()
            )));
        }
        Ok(MdpModel {
            name: file.name,
            gamma: file.gamma,
            actions_per_state: file.actions_per_state,
            rewards: file.rewards,
            transitions: file.transitions,
        })
    }
}

/// On-disk JSON schema for a model.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    name: String,
    gamma: f64,
    num_states: usize,
    actions_per_state: Vec<usize>,
    rewards: Vec<Vec<f64>>,
    transitions: Vec<Vec<Vec<f64>>>,
}

/// One violated model invariant, with coordinates.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelViolation {
    ShapeMismatch { detail: String },
    NoAdmissibleAction { state: usize },
    DiscountOutOfRange { gamma: f64 },
    NonFiniteReward { state: usize, action: usize, value: f64 },
    TransitionOutOfRange { state: usize, action: usize, next: usize, value: f64 },
    RowSumOff { state: usize, action: usize, sum: f64 },
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelViolation::ShapeMismatch { detail } => write!(f, "shape mismatch: {detail}"),
            ModelViolation::NoAdmissibleAction { state } => {
                write!(f, "state {state} has no admissible action")
            }
            ModelViolation::DiscountOutOfRange { gamma } => {
                write!(f, "discount out of range: gamma = {gamma} is not strictly inside (0, 1)")
            }
            ModelViolation::NonFiniteReward { state, action, value } => {
                write!(f, "reward at (x={state}, a={action}) is not finite: {value}")
            }
            ModelViolation::TransitionOutOfRange { state, action, next, value } => write!(
                f,
                "transition entry (x={state}, a={action}, y={next}) = {value} is outside [0, 1]"
            ),
            ModelViolation::RowSumOff { state, action, sum } => {
                write!(f, "transition row (x={state}, a={action}) sums to {sum}, not 1")
            }
        }
    }
}

/// Every invariant violation found in a model. Empty iff the model is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<ModelViolation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks all model invariants. Validation never aborts early and never
/// repairs anything; it lists every violation with its coordinates.
pub fn validate_model(model: &MdpModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = model.num_states();

    if n == 0 {
        report.violations.push(ModelViolation::ShapeMismatch {
            detail: "model has no states".into(),
        });
        return report;
    }
    if model.rewards.len() != n || model.transitions.len() != n {
        report.violations.push(ModelViolation::ShapeMismatch {
            detail: format!(
                "{n} states but {} reward rows and {} transition rows",
                model.rewards.len(),
                model.transitions.len()
            ),
        });
        return report;
    }

    if !(model.gamma > 0.0 && model.gamma < 1.0) {
        report
            .violations
            .push(ModelViolation::DiscountOutOfRange { gamma: model.gamma });
    }

    for x in 0..n {
        let m = model.actions_per_state[x];
        if m == 0 {
            report
                .violations
                .push(ModelViolation::NoAdmissibleAction { state: x });
            continue;
        }
        if model.rewards[x].len() != m || model.transitions[x].len() != m {
            report.violations.push(ModelViolation::ShapeMismatch {
                detail: format!(
                    "state {x} declares {m} actions but has {} rewards and {} transition rows",
                    model.rewards[x].len(),
                    model.transitions[x].len()
                ),
            });
            continue;
        }
        for a in 0..m {
            let r = model.rewards[x][a];
            if !r.is_finite() {
                report.violations.push(ModelViolation::NonFiniteReward {
                    state: x,
                    action: a,
                    value: r,
                });
            }
            let row = &model.transitions[x][a];
            if row.len() != n {
                report.violations.push(ModelViolation::ShapeMismatch {
                    detail: format!(
                        "transition row (x={x}, a={a}) has length {}, expected {n}",
                        row.len()
                    ),
                });
                continue;
            }
            let mut sum = 0.0;
            for (y, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                    report.violations.push(ModelViolation::TransitionOutOfRange {
                        state: x,
                        action: a,
                        next: y,
                        value: p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                report.violations.push(ModelViolation::RowSumOff {
                    state: x,
                    action: a,
                    sum,
                });
            }
        }
    }
    report
}

/// Draws the next state from `P[x][a]`, advancing the stream.
pub fn sample_next_state(
    model: &MdpModel,
    x: StateId,
    a: ActionId,
    rng: &mut RngStream,
) -> Result<StateId> {
    if x.0 >= model.num_states() {
        return Err(PipsError::StateOutOfRange(x.0));
    }
    if !model.is_admissible(x, a) {
        return Err(PipsError::Inadmissible {
            state: x.0,
            action: a.0,
        });
    }
    let row = model.transition_row(x, a);
    let u = rng.unit();
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (y, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = y;
        }
        cum += p;
        if u < cum {
            return Ok(StateId(y));
        }
    }
    // Row sums to 1 only within tolerance; u can land in the residual sliver.
    Ok(StateId(last_positive))
}

/// Parameters for seeded random model generation.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub num_states: usize,
    pub num_actions: usize,
    /// Probability that each next-state enters a row's support, in `(0, 1]`.
    pub transition_density: f64,
    /// Rewards drawn uniformly from `[lo, hi]`.
    pub reward_range: (f64, f64),
    /// Force every transition entry strictly positive (floor then renormalize).
    pub ensure_positive: bool,
    pub gamma: f64,
    pub seed: u64,
}

impl GenConfig {
    fn check(&self) -> Result<()> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(PipsError::InvalidConfig(
                "generator needs at least one state and one action".into(),
            ));
        }
        if !(self.transition_density > 0.0 && self.transition_density <= 1.0) {
            return Err(PipsError::InvalidConfig(format!(
                "transition_density {} is outside (0, 1]",
                self.transition_density
            )));
        }
        if self.reward_range.0 > self.reward_range.1 {
            return Err(PipsError::InvalidConfig(format!(
                "reward range [{}, {}] is empty",
                self.reward_range.0, self.reward_range.1
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(PipsError::InvalidConfig(format!(
                "gamma {} is not strictly inside (0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Generates a random valid model as a pure function of the config (the seed
/// lives in the config, so equal configs give byte-identical models).
pub fn generate_random_mdp(cfg: &GenConfig) -> Result<MdpModel> {
    cfg.check()?;
    let n = cfg.num_states;
    let mut rng = RngStream::from_seed(cfg.seed);
    let (lo, hi) = cfg.reward_range;

    let mut rewards = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    for _ in 0..n {
        let mut state_rewards = Vec::with_capacity(cfg.num_actions);
        let mut state_rows = Vec::with_capacity(cfg.num_actions);
        for _ in 0..cfg.num_actions {
            state_rewards.push(if hi > lo { rng.uniform(lo, hi) } else { lo });

            let mut row = vec![0.0; n];
            for entry in row.iter_mut() {
                if rng.unit() < cfg.transition_density {
                    *entry = 0.1 + rng.unit();
                }
            }
            if row.iter().all(|&w| w == 0.0) {
                row[rng.below(n)] = 1.0;
            }
            if cfg.ensure_positive {
                for entry in row.iter_mut() {
                    *entry += POSITIVE_FLOOR;
                }
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
        name: format!("gen-{}", cfg.seed),
        gamma: cfg.gamma,
        actions_per_state: vec![cfg.num_actions; n],
        rewards,
        transitions,
    };
    debug_assert!(model.validate().is_empty());
    Ok(model)
}
