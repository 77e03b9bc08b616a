//! Seeded random instances.
//!
//! All randomness flows through [`SeededRng`], a ChaCha20 stream keyed by the
//! seed. The key is the seed's little-endian bytes followed by 24 zero bytes.
//! A uniform draw takes the top 53 bits of the next 64-bit output and scales
//! by 2⁻⁵³, so ports to other languages reproduce instances exactly.

use nalgebra::DMatrix;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::fa::FeatureMap;
use crate::markov::{MarkovFeatureMap, MarkovGameSpec};
use crate::matrix_game::CostMatrix;
use crate::monotone::MonotoneGameSpec;
use crate::{NpgError, Result};

pub struct SeededRng(ChaCha20Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self(ChaCha20Rng::from_seed(key))
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform on `[-1, 1)`.
    pub fn symmetric(&mut self) -> f64 {
        2.0 * self.uniform() - 1.0
    }

    /// Standard exponential draw.
    pub fn exponential(&mut self) -> f64 {
        -(1.0 - self.uniform()).ln()
    }

    /// Flat Dirichlet sample of length `n`.
    pub fn dirichlet(&mut self, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|_| self.exponential()).collect();
        let s: f64 = v.iter().sum();
        for x in &mut v {
            *x /= s;
        }
        v
    }

    /// Row-major `rows × cols` matrix with entries uniform on `[-1, 1)`.
    pub fn symmetric_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.symmetric()).collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }
}

pub fn random_cost_matrix(n: usize, m: usize, rng: &mut SeededRng) -> CostMatrix {
    CostMatrix::new(rng.symmetric_matrix(n, m)).expect("finite entries")
}

/// Random `d × d` matrix with condition number at most 100, by rejection.
pub fn random_invertible(d: usize, rng: &mut SeededRng) -> DMatrix<f64> {
    loop {
        let m = rng.symmetric_matrix(d, d);
        let sv = m.singular_values();
        if sv.min() > 0.0 && sv.max() / sv.min() < 100.0 {
            return m;
        }
    }
}

pub fn random_feature_map(d: usize, n: usize, rng: &mut SeededRng) -> Result<FeatureMap> {
    FeatureMap::build(random_invertible(d, rng), n)
}

/// Markov game with flat-Dirichlet transition rows and rewards uniform on `[0, 1)`.
pub fn random_markov(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    tau: f64,
    rng: &mut SeededRng,
) -> Result<MarkovGameSpec> {
    let mut transitions = Vec::with_capacity(n_states * n_actions * n_actions * n_states);
    for _ in 0..n_states * n_actions * n_actions {
        transitions.extend(rng.dirichlet(n_states));
    }
    let rewards = random_rewards(n_states, n_actions, rng);
    MarkovGameSpec::new(n_states, n_actions, transitions, rewards, gamma, tau)
}

/// Markov game whose transitions are uniform over next states regardless of
/// the action pair; rewards uniform on `[0, 1)`.
pub fn uniform_transition_markov(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    tau: f64,
    rng: &mut SeededRng,
) -> Result<MarkovGameSpec> {
    let transitions = vec![1.0 / n_states as f64; n_states * n_actions * n_actions * n_states];
    let rewards = random_rewards(n_states, n_actions, rng);
    MarkovGameSpec::new(n_states, n_actions, transitions, rewards, gamma, tau)
}

fn random_rewards(n_states: usize, n_actions: usize, rng: &mut SeededRng) -> Vec<DMatrix<f64>> {
    (0..n_states)
        .map(|_| {
            let data: Vec<f64> = (0..n_actions * n_actions).map(|_| rng.uniform()).collect();
            DMatrix::from_row_slice(n_actions, n_actions, &data)
        })
        .collect()
}

/// Feature matrix in which only the first action of every state carries a
/// feature: `Φ_{(s,0)} = e_s`, all other columns zero.
pub fn first_action_features(n_states: usize, n_actions: usize) -> Result<MarkovFeatureMap> {
    let mut phi = DMatrix::zeros(n_states, n_states * n_actions);
    for s in 0..n_states {
        phi[(s, s * n_actions)] = 1.0;
    }
    MarkovFeatureMap::new(phi, n_states, n_actions)
}

/// Feature matrix with `active[s]` leading actions carrying features in state `s`.
pub fn leading_action_features(active: &[usize], n_actions: usize) -> Result<MarkovFeatureMap> {
    let d: usize = active.iter().sum();
    if active.iter().any(|&k| k > n_actions) {
        return Err(NpgError::InvalidInput(
            "more active actions than actions".into(),
        ));
    }
    let n_states = active.len();
    let mut phi = DMatrix::zeros(d, n_states * n_actions);
    let mut row = 0;
    for (s, &k) in active.iter().enumerate() {
        for a in 0..k {
            phi[(row, s * n_actions + a)] = 1.0;
            row += 1;
        }
    }
    MarkovFeatureMap::new(phi, n_states, n_actions)
}

/// Zero-sum polymatrix game on a cycle of `n_players` players.
///
/// Player `i` pays `g_iᵀ B_i g_{i+1} − g_iᵀ B_{i−1}ᵀ g_{i−1} + g_iᵀ b_i`, so the
/// pseudo-gradient is `F(z) = K z + b` with `K` antisymmetric. Adding
/// `self_weight · C_iᵀ C_i` on the diagonal blocks keeps `F` monotone and makes
/// it strictly so when `self_weight > 0`.
pub fn linear_cyclic_game(
    n_players: usize,
    n_actions: usize,
    self_weight: f64,
    tau: f64,
    rng: &mut SeededRng,
) -> Result<MonotoneGameSpec> {
    if n_players < 2 {
        return Err(NpgError::InvalidInput("a cyclic game needs two players".into()));
    }
    let dim = n_players * n_actions;
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..n_players {
        let j = (i + 1) % n_players;
        let b = rng.symmetric_matrix(n_actions, n_actions);
        let mut block = a.view_mut((i * n_actions, j * n_actions), (n_actions, n_actions));
        block += &b;
        let mut block = a.view_mut((j * n_actions, i * n_actions), (n_actions, n_actions));
        block -= b.transpose();
    }
    if self_weight > 0.0 {
        for i in 0..n_players {
            let c = rng.symmetric_matrix(n_actions, n_actions);
            let psd = c.transpose() * &c * self_weight;
            let mut block = a.view_mut((i * n_actions, i * n_actions), (n_actions, n_actions));
            block += &psd;
        }
    }
    let b = nalgebra::DVector::from_iterator(dim, (0..dim).map(|_| 0.5 * rng.symmetric()));
    MonotoneGameSpec::linear(a, b, n_players, n_actions, tau)
}

/// Two-player game whose pseudo-gradient is `(P + R) z + b` with `P` positive
/// semidefinite and `R` antisymmetric.
pub fn rotated_quadratic_game(
    n_actions: usize,
    tau: f64,
    rng: &mut SeededRng,
) -> Result<MonotoneGameSpec> {
    let dim = 2 * n_actions;
    let c = rng.symmetric_matrix(dim, dim);
    let p = c.transpose() * &c * (1.0 / dim as f64);
    let w = rng.symmetric_matrix(dim, dim);
    let r = &w - w.transpose();
    let b = nalgebra::DVector::from_iterator(dim, (0..dim).map(|_| rng.symmetric()));
    MonotoneGameSpec::linear(p + r, b, 2, n_actions, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_is_deterministic() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
        let mut c = SeededRng::new(43);
        assert_ne!(SeededRng::new(42).uniform(), c.uniform());
    }

    #[test]
    fn uniform_draws_in_range() {
        let mut rng = SeededRng::new(1);
        for _ in 0..10_000 {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            let s = rng.symmetric();
            assert!((-1.0..1.0).contains(&s));
        }
    }

    #[test]
    fn dirichlet_rows_sum_to_one() {
        let mut rng = SeededRng::new(3);
        for n in 1..8 {
            let v = rng.dirichlet(n);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(v.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn invertible_matrices_are_well_conditioned() {
        let mut rng = SeededRng::new(9);
        for d in 1..6 {
            let m = random_invertible(d, &mut rng);
            let sv = m.singular_values();
            assert!(sv.max() / sv.min() < 100.0);
        }
    }
}
