//! Seeded fixtures shared by the criterion benches.

use npg_core::instances::{random_cost_matrix, random_markov, SeededRng};
use npg_core::{MarkovGameSpec, OptimisticState, ParamVector, QTensor, RegularizedGame};

pub const TAU: f64 = 0.1;

/// Random `n × n` game with entries in `[-1, 1]`, regularized at [`TAU`].
pub fn matrix_game(n: usize, seed: u64) -> RegularizedGame {
    let mut rng = SeededRng::new(seed);
    RegularizedGame::new(random_cost_matrix(n, n, &mut rng), TAU).expect("valid game")
}

/// A non-trivial optimistic state: a few ONPG steps away from zero.
pub fn warm_state(game: &RegularizedGame, eta: f64) -> OptimisticState {
    let mut state = OptimisticState::zeros(game.n_row(), game.n_col());
    for _ in 0..5 {
        state = npg_core::matrix_game::onpg_step(game, &state, eta).expect("stable step");
    }
    state
}

pub fn zero_params(game: &RegularizedGame) -> (ParamVector, ParamVector) {
    (ParamVector::zeros(game.n_row()), ParamVector::zeros(game.n_col()))
}

pub fn markov_game(n_states: usize, n_actions: usize, seed: u64) -> (MarkovGameSpec, QTensor) {
    let mut rng = SeededRng::new(seed);
    let spec = random_markov(n_states, n_actions, 0.8, TAU, &mut rng).expect("valid spec");
    let q = QTensor::zeros(n_states, n_actions);
    (spec, q)
}
