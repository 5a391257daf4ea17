//! Small hand-checkable models used across tests, benches, and docs.

use crate::model::MdpModel;

/// Two states, two actions each (`stay = 0`, `toggle = 1`), discount 0.5.
///
/// `stay` keeps the state, `toggle` swaps it. Rewards: `R(0, stay) = 0`,
/// `R(0, toggle) = 1`, `R(1, stay) = 2`, `R(1, toggle) = 0`. Small enough to
/// solve by hand yet it exhibits both empty and nonempty switchable sets, and
/// it is not communicating (the all-`stay` policy induces two isolated
/// states).
pub fn toggle2() -> MdpModel {
    MdpModel {
        name: "toggle2".into(),
        gamma: 0.5,
        actions_per_state: vec![2, 2],
        rewards: vec![vec![0.0, 1.0], vec![2.0, 0.0]],
        transitions: vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
        ],
    }
}

/// Three states with an absorbing sink, discount 0.9.
///
/// State 2 is absorbing under both actions. From state 0, action 0 jumps to
/// the sink; from state 1, action 1 pays 5 and jumps to the sink. Under the
/// all-zeros policy the only improvable state is 1, and a trajectory started
/// at 0 never visits it — a run absorbed at the sink stabilizes to a policy
/// that is optimal on the visited class but not globally.
pub fn absorbing_witness() -> MdpModel {
    MdpModel {
        name: "absorbing-witness".into(),
        gamma: 0.9,
        actions_per_state: vec![2, 2, 2],
        rewards: vec![vec![0.5, 0.0], vec![0.0, 5.0], vec![1.0, 0.0]],
        transitions: vec![
            vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
            vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
        ],
    }
}
