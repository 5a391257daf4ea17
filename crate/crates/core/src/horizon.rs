//! Finite-horizon policies, exact evaluation, the one-step backup operator,
//! backward induction, switchable-action sets, and the strict-improvement
//! predicate.
//!
//! # Indexing convention
//!
//! Everything here is stored in *remaining-horizon* order. A policy of
//! horizon `H` has levels `j = 1..=H`, where level `j` is the decision rule
//! applied when `j` steps of forecast remain. Level `H` is therefore the
//! entry a rolling-horizon controller executes, and level 1 is the final
//! lookahead step. Value tables are indexed the same way: `V[h]` is the exact
//! value of following the last `h` levels, with `V[0]` the terminal row
//! (all zeros unless a terminal row is supplied). The recursion is
//!
//! ```text
//! V[h](x) = R(x, level_h(x)) + gamma * sum_y P(y | x, level_h(x)) * V[h-1](y)
//! ```
//!
//! Using one index direction everywhere removes the off-by-one traps that
//! come with mixing "steps taken" and "steps remaining".

use serde::{Deserialize, Serialize};

use crate::error::{PipsError, Result};
use crate::model::{ActionId, MdpModel, StateId};
use crate::rng::RngStream;

/// Comparison slack for strict ("this action does better") tests.
pub const STRICT_SLACK: f64 = 1e-12;

/// Tolerance for value-equality assertions between exact routes.
pub const VALUE_EQ_TOL: f64 = 1e-9;

/// One value per state.
pub type ValueRow = Vec<f64>;

/// Marker written into serialized policies and value tables.
pub const INDEXING_TAG: &str = "remaining-horizon";

/// An `H`-level policy in remaining-horizon order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FiniteHorizonPolicy {
    /// `levels[j - 1][x]` is the action at level `j`, state `x`.
    levels: Vec<Vec<ActionId>>,
}

impl FiniteHorizonPolicy {
    /// Builds a policy from rows in remaining-horizon order (index 0 is
    /// level 1). Panics if no levels are given or rows are ragged.
    pub fn from_levels(levels: Vec<Vec<ActionId>>) -> Self {
        assert!(!levels.is_empty(), "a policy needs at least one level");
        let width = levels[0].len();
        assert!(
            levels.iter().all(|row| row.len() == width),
            "all levels must cover the same states"
        );
        Self { levels }
    }

    /// The same decision rule at every level.
    pub fn stationary(row: Vec<ActionId>, horizon: usize) -> Self {
        assert!(horizon >= 1);
        Self::from_levels(vec![row; horizon])
    }

    /// Lowest-index admissible action everywhere.
    pub fn lowest_action(model: &MdpModel, horizon: usize) -> Self {
        Self::stationary(vec![ActionId(0); model.num_states()], horizon)
    }

    /// Uniformly random admissible policy from a seeded stream.
    pub fn random(model: &MdpModel, horizon: usize, rng: &mut RngStream) -> Self {
        assert!(horizon >= 1);
        let levels = (0..horizon)
            .map(|_| {
                (0..model.num_states())
                    .map(|x| ActionId(rng.below(model.actions_per_state[x])))
                    .collect()
            })
            .collect();
        Self::from_levels(levels)
    }

    pub fn horizon(&self) -> usize {
        self.levels.len()
    }

    pub fn num_states(&self) -> usize {
        self.levels[0].len()
    }

    /// Decision rule at level `j` (1-based, `1..=H`).
    pub fn level(&self, j: usize) -> &[ActionId] {
        &self.levels[j - 1]
    }

    pub fn action(&self, j: usize, x: StateId) -> ActionId {
        self.levels[j - 1][x.0]
    }

    pub fn set_action(&mut self, j: usize, x: StateId, a: ActionId) {
        self.levels[j - 1][x.0] = a;
    }

    /// The row a rolling-horizon controller executes (level `H`).
    pub fn first_entry(&self) -> &[ActionId] {
        self.level(self.horizon())
    }

    /// All levels at one state, level 1 first.
    pub fn column(&self, x: StateId) -> Vec<ActionId> {
        self.levels.iter().map(|row| row[x.0]).collect()
    }

    /// Checks that every entry is admissible in `model`.
    pub fn validate_for(&self, model: &MdpModel) -> Result<()> {
        if self.num_states() != model.num_states() {
            return Err(PipsError::InvalidConfig(format!(
                "policy covers {} states, model has {}",
                self.num_states(),
                model.num_states()
            )));
        }
        for row in &self.levels {
            for (x, &a) in row.iter().enumerate() {
                if a.0 >= model.actions_per_state[x] {
                    return Err(PipsError::Inadmissible {
                        state: x,
                        action: a.0,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = PolicyFile {
            indexing: INDEXING_TAG.into(),
            horizon: self.horizon(),
            entries: self
                .levels
                .iter()
                .map(|row| row.iter().map(|a| a.0).collect())
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("policy serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolicyFile =
            serde_json::from_str(text).map_err(|e| PipsError::Malformed(e.to_string()))?;
        if file.indexing != INDEXING_TAG {
            return Err(PipsError::Malformed(format!(
                "unknown policy indexing {:?}, expected {INDEXING_TAG:?}",
                file.indexing
            )));
        }
        if file.horizon == 0 || file.entries.len() != file.horizon {
            return Err(PipsError::Malformed(format!(
                "policy declares horizon {} but has {} level rows",
                file.horizon,
                file.entries.len()
            )));
        }
        let width = file.entries[0].len();
        if file.entries.iter().any(|row| row.len() != width) {
            return Err(PipsError::Malformed("ragged policy level rows".into()));
        }
        Ok(Self::from_levels(
            file.entries
                .into_iter()
                .map(|row| row.into_iter().map(ActionId).collect())
                .collect(),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    indexing: String,
    horizon: usize,
    entries: Vec<Vec<usize>>,
}

/// Exact values `V[h][x]` for `h = 0..=H`, remaining-horizon indexed.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    rows: Vec<ValueRow>,
}

impl ValueTable {
    pub fn from_rows(rows: Vec<ValueRow>) -> Self {
        assert!(rows.len() >= 2, "a value table needs rows 0..=H with H >= 1");
        Self { rows }
    }

    pub fn horizon(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn num_states(&self) -> usize {
        self.rows[0].len()
    }

    /// Row `h` (0-based; row 0 is the terminal row).
    pub fn row(&self, h: usize) -> &[f64] {
        &self.rows[h]
    }

    pub fn value(&self, h: usize, x: StateId) -> f64 {
        self.rows[h][x.0]
    }

    /// The full-horizon row `V[H]`.
    pub fn final_row(&self) -> &[f64] {
        self.row(self.horizon())
    }

    pub fn to_json(&self) -> String {
        let file = ValueTableFile {
            indexing: INDEXING_TAG.into(),
            horizon: self.horizon(),
            values: self.rows.clone(),
        };
        let mut text = serde_json::to_string_pretty(&file).expect("value table serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ValueTableFile =
            serde_json::from_str(text).map_err(|e| PipsError::Malformed(e.to_string()))?;
        if file.indexing != INDEXING_TAG {
            return Err(PipsError::Malformed(format!(
                "unknown value-table indexing {:?}, expected {INDEXING_TAG:?}",
                file.indexing
            )));
        }
        if file.values.len() != file.horizon + 1 {
            return Err(PipsError::Malformed(format!(
                "value table declares horizon {} but has {} rows",
                file.horizon,
                file.values.len()
            )));
        }
        Ok(Self::from_rows(file.values))
    }
}

#[derive(Serialize, Deserialize)]
struct ValueTableFile {
    indexing: String,
    horizon: usize,
    values: Vec<ValueRow>,
}

/// A `(level, state)` pair at which some action strictly beats the policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImprovablePair {
    pub level: usize,
    pub state: StateId,
}

pub(crate) fn q_raw(model: &MdpModel, x: StateId, a: ActionId, continuation: &[f64]) -> f64 {
    let row = model.transition_row(x, a);
    let mut acc = 0.0;
    for (p, v) in row.iter().zip(continuation) {
        acc += p * v;
    }
    model.reward(x, a) + model.gamma * acc
}

/// One-step lookahead value `R(x, a) + gamma * P(. | x, a) . continuation`.
pub fn q_value(model: &MdpModel, x: StateId, a: ActionId, continuation: &[f64]) -> Result<f64> {
    if x.0 >= model.num_states() {
        return Err(PipsError::StateOutOfRange(x.0));
    }
    if !model.is_admissible(x, a) {
        return Err(PipsError::Inadmissible {
            state: x.0,
            action: a.0,
        });
    }
    if continuation.len() != model.num_states() {
        return Err(PipsError::InvalidConfig(format!(
            "continuation row has length {}, expected {}",
            continuation.len(),
            model.num_states()
        )));
    }
    Ok(q_raw(model, x, a, continuation))
}

/// Exact evaluation of a policy: returns `V[h]` for `h = 0..=H`. The terminal
/// row defaults to all zeros.
pub fn evaluate_policy(
    model: &MdpModel,
    policy: &FiniteHorizonPolicy,
    terminal: Option<&[f64]>,
) -> Result<ValueTable> {
    policy.validate_for(model)?;
    let n = model.num_states();
    let base = match terminal {
        Some(row) => {
            if row.len() != n {
                return Err(PipsError::InvalidConfig(format!(
                    "terminal row has length {}, expected {n}",
                    row.len()
                )));
            }
            row.to_vec()
        }
        None => vec![0.0; n],
    };

    let horizon = policy.horizon();
    let mut rows = Vec::with_capacity(horizon + 1);
    rows.push(base);
    for j in 1..=horizon {
        let prev = &rows[j - 1];
        let rule = policy.level(j);
        let mut row = Vec::with_capacity(n);
        for (x, &a) in rule.iter().enumerate() {
            row.push(q_raw(model, StateId(x), a, prev));
        }
        rows.push(row);
    }
    Ok(ValueTable::from_rows(rows))
}

/// One backup of the optimality operator: returns `T(u)` and, per state, the
/// maximizing action (ties broken by smallest action index).
pub fn bellman_backup(model: &MdpModel, u: &[f64]) -> Result<(ValueRow, Vec<ActionId>)> {
    let n = model.num_states();
    if u.len() != n {
        return Err(PipsError::InvalidConfig(format!(
            "input row has length {}, expected {n}",
            u.len()
        )));
    }
    let mut values = Vec::with_capacity(n);
    let mut greedy = Vec::with_capacity(n);
    for x in 0..n {
        let mut best_a = ActionId(0);
        let mut best_q = q_raw(model, StateId(x), ActionId(0), u);
        for a in 1..model.actions_per_state[x] {
            let q = q_raw(model, StateId(x), ActionId(a), u);
            if q > best_q {
                best_q = q;
                best_a = ActionId(a);
            }
        }
        values.push(best_q);
        greedy.push(best_a);
    }
    Ok((values, greedy))
}

/// Backward induction: the exact oracle for the optimal table `V*[h]` and an
/// optimal policy (greedy rows, smallest-index ties).
pub fn backward_induction(
    model: &MdpModel,
    horizon: usize,
    terminal: Option<&[f64]>,
) -> Result<(ValueTable, FiniteHorizonPolicy)> {
    if horizon == 0 {
        return Err(PipsError::InvalidConfig("horizon must be at least 1".into()));
    }
    let n = model.num_states();
    let base = match terminal {
        Some(row) => {
            if row.len() != n {
                return Err(PipsError::InvalidConfig(format!(
                    "terminal row has length {}, expected {n}",
                    row.len()
                )));
            }
            row.to_vec()
        }
        None => vec![0.0; n],
    };

    let mut rows = Vec::with_capacity(horizon + 1);
    let mut levels = Vec::with_capacity(horizon);
    rows.push(base);
    for h in 1..=horizon {
        let (row, greedy) = bellman_backup(model, &rows[h - 1])?;
        rows.push(row);
        levels.push(greedy);
    }
    Ok((
        ValueTable::from_rows(rows),
        FiniteHorizonPolicy::from_levels(levels),
    ))
}

/// Actions whose one-step lookahead against `V[h-1]` strictly beats `V[h](x)`.
/// `values` must be the table of the policy under test; `h` is in `1..=H`.
pub fn switchable_actions(
    model: &MdpModel,
    values: &ValueTable,
    x: StateId,
    h: usize,
) -> Vec<ActionId> {
    let current = values.value(h, x);
    let prev = values.row(h - 1);
    (0..model.actions_per_state[x.0])
        .map(ActionId)
        .filter(|&a| q_raw(model, x, a, prev) > current + STRICT_SLACK)
        .collect()
}

pub(crate) fn has_switchable_action(
    model: &MdpModel,
    values: &ValueTable,
    x: StateId,
    h: usize,
) -> bool {
    let current = values.value(h, x);
    let prev = values.row(h - 1);
    (0..model.actions_per_state[x.0])
        .any(|a| q_raw(model, x, ActionId(a), prev) > current + STRICT_SLACK)
}

/// All `(level, state)` pairs with a nonempty switchable set, in ascending
/// `(level, state)` order. An empty result certifies the policy optimal for
/// its horizon. `restrict_to_state` keeps only pairs at that state.
pub fn improvable_set(
    model: &MdpModel,
    policy: &FiniteHorizonPolicy,
    restrict_to_state: Option<StateId>,
) -> Result<Vec<ImprovablePair>> {
    if let Some(x) = restrict_to_state {
        if x.0 >= model.num_states() {
            return Err(PipsError::StateOutOfRange(x.0));
        }
    }
    let values = evaluate_policy(model, policy, None)?;
    let mut pairs = Vec::new();
    for h in 1..=policy.horizon() {
        for x in 0..model.num_states() {
            if let Some(only) = restrict_to_state {
                if only.0 != x {
                    continue;
                }
            }
            if has_switchable_action(model, &values, StateId(x), h) {
                pairs.push(ImprovablePair {
                    level: h,
                    state: StateId(x),
                });
            }
        }
    }
    Ok(pairs)
}

/// `candidate > base` over the shared horizon: no state worse at `V[H]`, and
/// at least one strictly better (beyond [`STRICT_SLACK`]).
pub fn strictly_improves(
    model: &MdpModel,
    candidate: &FiniteHorizonPolicy,
    base: &FiniteHorizonPolicy,
) -> Result<bool> {
    if candidate.horizon() != base.horizon() {
        return Err(PipsError::HorizonMismatch {
            expected: base.horizon(),
            got: candidate.horizon(),
        });
    }
    let cand = evaluate_policy(model, candidate, None)?;
    let old = evaluate_policy(model, base, None)?;
    let cand_row = cand.final_row();
    let old_row = old.final_row();
    let dominates = cand_row.iter().zip(old_row).all(|(c, b)| c >= b);
    let strict = cand_row
        .iter()
        .zip(old_row)
        .any(|(c, b)| *c > *b + STRICT_SLACK);
    Ok(dominates && strict)
}
