//! Markov-chain structure of stationary policies and infinite-horizon
//! evaluation.
//!
//! A stationary policy induces a chain whose support digraph has an edge
//! `x -> y` iff `P(y | x, phi(x)) > 0`. Communication classes are the
//! strongly connected components of that digraph; a class is recurrent iff it
//! has no outgoing edge in the condensation. Whether a whole model is
//! communicating (every stationary policy induces a single class) is decided
//! either by the all-entries-positive sufficient condition or by exhaustively
//! enumerating stationary policies up to a hard cap — the general decision
//! problem does not admit a known polynomial algorithm, so beyond the cap the
//! call refuses rather than guesses.

use crate::error::{PipsError, Result};
use crate::horizon::{backward_induction, q_raw, FiniteHorizonPolicy, ValueRow};
use crate::model::{ActionId, MdpModel, StateId};
use crate::par;

/// Residual bound for the infinite-horizon linear solves.
pub const RESIDUAL_TOL: f64 = 1e-10;

/// Largest stationary-policy count the exhaustive verdict will enumerate.
pub const EXHAUSTIVE_POLICY_CAP: u128 = 1_000_000;

const MAX_POLICY_ITERATIONS: usize = 10_000;

/// One decision rule applied forever.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StationaryPolicy {
    pub actions: Vec<ActionId>,
}

impl StationaryPolicy {
    pub fn new(actions: Vec<ActionId>) -> Self {
        Self { actions }
    }

    /// The rule a rolling controller repeats: level `H` of the policy.
    pub fn from_first_entry(policy: &FiniteHorizonPolicy) -> Self {
        Self {
            actions: policy.first_entry().to_vec(),
        }
    }

    pub fn action(&self, x: StateId) -> ActionId {
        self.actions[x.0]
    }

    pub fn validate_for(&self, model: &MdpModel) -> Result<()> {
        if self.actions.len() != model.num_states() {
            return Err(PipsError::InvalidConfig(format!(
                "stationary policy covers {} states, model has {}",
                self.actions.len(),
                model.num_states()
            )));
        }
        for (x, &a) in self.actions.iter().enumerate() {
            if a.0 >= model.actions_per_state[x] {
                return Err(PipsError::Inadmissible {
                    state: x,
                    action: a.0,
                });
            }
        }
        Ok(())
    }
}

/// One communication class of an induced chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommClass {
    /// Member states in ascending order.
    pub states: Vec<StateId>,
    /// True iff the class has no outgoing edge in the condensation.
    pub recurrent: bool,
}

/// Disjoint communication classes covering the whole state set, ordered by
/// smallest member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    pub classes: Vec<CommClass>,
}

impl ClassPartition {
    /// The class containing `x`.
    pub fn class_of(&self, x: StateId) -> &CommClass {
        self.classes
            .iter()
            .find(|c| c.states.contains(&x))
            .expect("partition covers every state")
    }

    pub fn is_single_class(&self) -> bool {
        self.classes.len() == 1
    }
}

struct Tarjan<'a> {
    graph: &'a [Vec<usize>],
    index: usize,
    stack: Vec<usize>,
    on_stack: Vec<bool>,
    order: Vec<Option<usize>>,
    low: Vec<usize>,
    components: Vec<Vec<usize>>,
}

impl<'a> Tarjan<'a> {
    fn run(graph: &'a [Vec<usize>]) -> Vec<Vec<usize>> {
        let n = graph.len();
        let mut state = Tarjan {
            graph,
            index: 0,
            stack: Vec::new(),
            on_stack: vec![false; n],
            order: vec![None; n],
            low: vec![0; n],
            components: Vec::new(),
        };
        for v in 0..n {
            if state.order[v].is_none() {
                state.connect(v);
            }
        }
        state.components
    }

    fn connect(&mut self, v: usize) {
        self.order[v] = Some(self.index);
        self.low[v] = self.index;
        self.index += 1;
        self.stack.push(v);
        self.on_stack[v] = true;

        for &w in &self.graph[v] {
            if self.order[w].is_none() {
                self.connect(w);
                self.low[v] = self.low[v].min(self.low[w]);
            } else if self.on_stack[w] {
                self.low[v] = self.low[v].min(self.order[w].expect("visited"));
            }
        }

        if self.low[v] == self.order[v].expect("visited") {
            let mut component = Vec::new();
            loop {
                let w = self.stack.pop().expect("stack underflow");
                self.on_stack[w] = false;
                component.push(w);
                if w == v {
                    break;
                }
            }
            self.components.push(component);
        }
    }
}

fn support_graph(model: &MdpModel, phi: &StationaryPolicy) -> Vec<Vec<usize>> {
    (0..model.num_states())
        .map(|x| {
            let row = model.transition_row(StateId(x), phi.action(StateId(x)));
            row.iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(y, _)| y)
                .collect()
        })
        .collect()
}

fn partition_of_graph(graph: &[Vec<usize>]) -> ClassPartition {
    let components = Tarjan::run(graph);
    let n = graph.len();
    let mut component_of = vec![usize::MAX; n];
    for (cid, component) in components.iter().enumerate() {
        for &v in component {
            component_of[v] = cid;
        }
    }
    // Recurrent iff no edge leaves the component.
    let mut has_exit = vec![false; components.len()];
    for (v, targets) in graph.iter().enumerate() {
        for &w in targets {
            if component_of[v] != component_of[w] {
                has_exit[component_of[v]] = true;
            }
        }
    }
    let mut classes: Vec<CommClass> = components
        .into_iter()
        .enumerate()
        .map(|(cid, mut states)| {
            states.sort_unstable();
            CommClass {
                states: states.into_iter().map(StateId).collect(),
                recurrent: !has_exit[cid],
            }
        })
        .collect();
    classes.sort_by_key(|c| c.states[0]);
    ClassPartition { classes }
}

/// Communication classes of the chain induced by `phi`, with recurrence
/// flags from the condensation.
pub fn communicating_classes(model: &MdpModel, phi: &StationaryPolicy) -> Result<ClassPartition> {
    phi.validate_for(model)?;
    Ok(partition_of_graph(&support_graph(model, phi)))
}

/// How to decide whether the model is communicating.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommMode {
    /// Positive-everywhere test: cheap, answers `Yes` or `Unknown`.
    Sufficient,
    /// Enumerate every stationary policy (up to the cap): answers `Yes` or
    /// `No` with the first witness in enumeration order.
    Exhaustive,
}

/// Verdict of a communicating-model check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommVerdict {
    Yes,
    /// Some stationary policy induces more than one class.
    No { witness: StationaryPolicy },
    /// The sufficient condition did not apply.
    Unknown,
}

fn decode_policy(model: &MdpModel, mut index: u64) -> StationaryPolicy {
    // Odometer order: state 0 varies fastest.
    let actions = model
        .actions_per_state
        .iter()
        .map(|&m| {
            let a = (index % m as u64) as usize;
            index /= m as u64;
            ActionId(a)
        })
        .collect();
    StationaryPolicy::new(actions)
}

/// Is every induced chain a single communication class?
pub fn is_mdp_communicating(model: &MdpModel, mode: CommMode) -> Result<CommVerdict> {
    match mode {
        CommMode::Sufficient => {
            let all_positive = model
                .transitions
                .iter()
                .flatten()
                .all(|row| row.iter().all(|&p| p > 0.0));
            Ok(if all_positive {
                CommVerdict::Yes
            } else {
                CommVerdict::Unknown
            })
        }
        CommMode::Exhaustive => {
            let total: u128 = model
                .actions_per_state
                .iter()
                .map(|&m| m as u128)
                .product();
            if total > EXHAUSTIVE_POLICY_CAP {
                return Err(PipsError::ExhaustiveCapExceeded {
                    needed: total,
                    cap: EXHAUSTIVE_POLICY_CAP,
                });
            }
            let witness_index = par::find_first_index(total as u64, |index| {
                let phi = decode_policy(model, index);
                !partition_of_graph(&support_graph(model, &phi)).is_single_class()
            });
            Ok(match witness_index {
                Some(index) => CommVerdict::No {
                    witness: decode_policy(model, index),
                },
                None => CommVerdict::Yes,
            })
        }
    }
}

/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| {
            a[i][col]
                .abs()
                .partial_cmp(&a[j][col].abs())
                .expect("finite pivots")
        })?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let (pivot_rows, rest) = a.split_at_mut(row);
            let pivot_row = &pivot_rows[col];
            let target = &mut rest[0];
            let factor = target[col] / pivot_row[col];
            if factor == 0.0 {
                continue;
            }
            for (t, p) in target[col..].iter_mut().zip(&pivot_row[col..]) {
                *t -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for col in (row + 1)..n {
            acc -= a[row][col] * x[col];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

fn bellman_residual_row(model: &MdpModel, phi: &StationaryPolicy, v: &[f64]) -> Vec<f64> {
    (0..model.num_states())
        .map(|x| q_raw(model, StateId(x), phi.action(StateId(x)), v) - v[x])
        .collect()
}

/// Exact infinite-horizon value of a stationary policy: solves
/// `V = R_phi + gamma * P_phi V` to residual at most [`RESIDUAL_TOL`]. The
/// system is nonsingular because the discount is strictly below one.
pub fn evaluate_stationary_infinite(model: &MdpModel, phi: &StationaryPolicy) -> Result<ValueRow> {
    phi.validate_for(model)?;
    let n = model.num_states();
    let matrix: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let row = model.transition_row(StateId(x), phi.action(StateId(x)));
            (0..n)
                .map(|y| {
                    let identity = if x == y { 1.0 } else { 0.0 };
                    identity - model.gamma * row[y]
                })
                .collect()
        })
        .collect();
    let rhs: Vec<f64> = (0..n)
        .map(|x| model.reward(StateId(x), phi.action(StateId(x))))
        .collect();

    let mut v = solve_linear(matrix.clone(), rhs).ok_or(PipsError::NoFixedPoint {
        what: "stationary evaluation",
        limit: 1,
    })?;
    // Iterative refinement until the residual contract holds.
    for _ in 0..8 {
        let residual = bellman_residual_row(model, phi, &v);
        let worst = residual.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        if worst <= RESIDUAL_TOL {
            return Ok(v);
        }
        let correction = solve_linear(matrix.clone(), residual).ok_or(PipsError::NoFixedPoint {
            what: "stationary evaluation",
            limit: 1,
        })?;
        for (vi, ci) in v.iter_mut().zip(correction) {
            *vi += ci;
        }
    }
    Err(PipsError::NoFixedPoint {
        what: "stationary evaluation refinement",
        limit: 8,
    })
}

/// Infinite-horizon policy iteration: exact evaluation plus greedy switching
/// (smallest-index ties) to a fixed point whose optimality-operator residual
/// is at most `tol`.
pub fn solve_infinite_optimal(model: &MdpModel, tol: f64) -> Result<(ValueRow, StationaryPolicy)> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(PipsError::InvalidConfig("tolerance must be positive".into()));
    }
    let n = model.num_states();
    let mut phi = StationaryPolicy::new(vec![ActionId(0); n]);
    for _ in 0..MAX_POLICY_ITERATIONS {
        let v = evaluate_stationary_infinite(model, &phi)?;
        let mut next = Vec::with_capacity(n);
        for x in 0..n {
            let mut best = ActionId(0);
            let mut best_q = q_raw(model, StateId(x), ActionId(0), &v);
            for a in 1..model.actions_per_state[x] {
                let q = q_raw(model, StateId(x), ActionId(a), &v);
                if q > best_q {
                    best_q = q;
                    best = ActionId(a);
                }
            }
            next.push(best);
        }
        let next = StationaryPolicy::new(next);
        if next == phi {
            let residual = (0..n)
                .map(|x| {
                    let best = (0..model.actions_per_state[x])
                        .map(|a| q_raw(model, StateId(x), ActionId(a), &v))
                        .fold(f64::NEG_INFINITY, f64::max);
                    (best - v[x]).abs()
                })
                .fold(0.0_f64, f64::max);
            if residual <= tol {
                return Ok((v, phi));
            }
        }
        phi = next;
    }
    Err(PipsError::NoFixedPoint {
        what: "policy iteration",
        limit: MAX_POLICY_ITERATIONS,
    })
}

/// For each forecast horizon in `h_list` (nonempty, strictly increasing):
/// solve the horizon problem with the given terminal row, fix the first-entry
/// rule as a stationary policy, and report the sup-norm gap between its
/// infinite-horizon value and the optimum.
pub fn rolling_horizon_error(
    model: &MdpModel,
    h_list: &[usize],
    terminal: Option<&[f64]>,
) -> Result<Vec<(usize, f64)>> {
    if h_list.is_empty() {
        return Err(PipsError::InvalidConfig("empty horizon list".into()));
    }
    if h_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(PipsError::InvalidConfig(
            "horizon list must be strictly increasing".into(),
        ));
    }
    if h_list[0] == 0 {
        return Err(PipsError::InvalidConfig("horizon must be at least 1".into()));
    }
    let (v_star, _) = solve_infinite_optimal(model, RESIDUAL_TOL)?;
    let mut curve = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let (_, policy) = backward_induction(model, h, terminal)?;
        let rolled = StationaryPolicy::from_first_entry(&policy);
        let v = evaluate_stationary_infinite(model, &rolled)?;
        let gap = v
            .iter()
            .zip(&v_star)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        curve.push((h, gap));
    }
    Ok(curve)
}

/// Renders an error curve in the `H,error` CSV layout.
pub fn error_curve_csv(curve: &[(usize, f64)]) -> String {
    let mut out = String::from("H,error\n");
    for (h, err) in curve {
        out.push_str(&format!("{h},{}\n", crate::fmt_significant(*err)));
    }
    out
}
