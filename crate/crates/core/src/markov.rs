//! Two-player zero-sum Markov games with entropy regularization.
//!
//! The row player minimizes the discounted cost `r(s, a, b) ∈ [0, 1]`, the
//! column player maximizes it. Every outer iteration freezes the Q tensor,
//! runs an optimistic NPG inner solve on each state's matrix game
//! `min_g max_h gᵀQ(s)h − τH(g) + τH(h)` and backs up the resulting state
//! values. In terms of [`f_tau`], whose bilinear term carries a leading minus,
//! the stored value is `V(s) = f_τ(−Q(s); g, h)`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{check_dim, NpgError, Result};
use crate::fa::{log_linear_policy, FeatureMap, PlayerFeatures};
use crate::matrix_game::{onpg_step, regularized_cost, CostMatrix, OptimisticState, RegularizedGame, Status};
use crate::oracles::qre_fixed_point;
use crate::simplex::{entropy, softmax, ParamVector, SimplexVector};

const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovGameSpec {
    n_states: usize,
    n_actions: usize,
    /// `P(s' | s, a, b)` at index `((s·n + a)·n + b)·S + s'`.
    transitions: Vec<f64>,
    rewards: Vec<DMatrix<f64>>,
    gamma: f64,
    tau: f64,
}

impl MarkovGameSpec {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transitions: Vec<f64>,
        rewards: Vec<DMatrix<f64>>,
        gamma: f64,
        tau: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(NpgError::InvalidInput("empty Markov game".into()));
        }
        check_dim(n_states * n_actions * n_actions * n_states, transitions.len())?;
        check_dim(n_states, rewards.len())?;
        for (k, row) in transitions.chunks(n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(NpgError::InvalidInput(format!(
                    "transition row {k} is not a distribution (sum {sum})"
                )));
            }
        }
        for (s, r) in rewards.iter().enumerate() {
            if r.shape() != (n_actions, n_actions) {
                return Err(NpgError::InvalidInput(format!("reward matrix {s} has the wrong shape")));
            }
            if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(NpgError::InvalidInput(format!("rewards in state {s} leave [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(NpgError::InvalidInput(format!("gamma {gamma} not in [0, 1)")));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(NpgError::InvalidInput(format!("tau {tau} not in (0, 1)")));
        }
        Ok(Self {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            tau,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rewards(&self) -> &[DMatrix<f64>] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transitions
    }

    /// Next-state distribution after `(a, b)` in `s`.
    pub fn transition(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let n = self.n_actions;
        let start = ((s * n + a) * n + b) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    /// `r(s) + γ E_{s'}[V(s')]` for every state.
    pub fn backup(&self, v: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.n_actions;
        (0..self.n_states)
            .map(|s| {
                DMatrix::from_fn(n, n, |a, b| {
                    let ev: f64 = self.transition(s, a, b).iter().zip(v).map(|(p, x)| p * x).sum();
                    self.rewards[s][(a, b)] + self.gamma * ev
                })
            })
            .collect()
    }
}

/// Per-state Q matrices together with the state values they were backed up from.
#[derive(Clone, Debug, PartialEq)]
pub struct QTensor {
    pub q: Vec<DMatrix<f64>>,
    pub v: Vec<f64>,
}

impl QTensor {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            q: vec![DMatrix::zeros(n_actions, n_actions); n_states],
            v: vec![0.0; n_states],
        }
    }

    /// `max_s max_{a,b} |Q(s,a,b) − Q'(s,a,b)|`.
    pub fn sup_dist(&self, other: &QTensor) -> f64 {
        self.q
            .iter()
            .zip(&other.q)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.q.iter().map(|m| m.amax()).fold(0.0, f64::max)
    }
}

/// Per-state parameters. States without features hold empty vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePolicyParams {
    pub theta: Vec<ParamVector>,
    pub nu: Vec<ParamVector>,
}

impl StatePolicyParams {
    /// `max(‖θ − θ'‖₂, ‖ν − ν'‖₂)` over the concatenation across states.
    pub fn distance(&self, other: &StatePolicyParams) -> f64 {
        let d = |a: &[ParamVector], b: &[ParamVector]| {
            a.iter().zip(b).map(|(x, y)| x.dist_sq(y)).sum::<f64>().sqrt()
        };
        d(&self.theta, &other.theta).max(d(&self.nu, &other.nu))
    }
}

/// Log-linear features over state-action pairs in the layout where every
/// nonzero column is a distinct unit vector, the featured actions of a state
/// are its leading actions, and features are numbered state by state.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovFeatureMap {
    phi: DMatrix<f64>,
    n_states: usize,
    n_actions: usize,
    active: Vec<usize>,
    state_maps: Vec<Option<FeatureMap>>,
}

impl MarkovFeatureMap {
    /// `phi` is `d × (S·n)` with column `s·n + a` the feature of `(s, a)`.
    pub fn new(phi: DMatrix<f64>, n_states: usize, n_actions: usize) -> Result<Self> {
        check_dim(n_states * n_actions, phi.ncols())?;
        let d = phi.nrows();
        let mut next_feature = 0;
        let mut active = vec![0; n_states];
        for (s, count) in active.iter_mut().enumerate() {
            let mut in_prefix = true;
            for a in 0..n_actions {
                let col = phi.column(s * n_actions + a);
                let nonzero: Vec<usize> = (0..d).filter(|&k| col[k] != 0.0).collect();
                match nonzero.as_slice() {
                    [] => in_prefix = false,
                    [k] if col[*k] == 1.0 && in_prefix && *k == next_feature => {
                        next_feature += 1;
                        *count += 1;
                    }
                    _ => {
                        return Err(NpgError::InvalidInput(format!(
                            "feature column for state {s}, action {a} breaks the [I | 0] layout"
                        )))
                    }
                }
            }
        }
        check_dim(d, next_feature)?;
        let state_maps = active
            .iter()
            .map(|&k| (k > 0).then(|| FeatureMap::identity(k, n_actions)).transpose())
            .collect::<Result<_>>()?;
        Ok(Self {
            phi,
            n_states,
            n_actions,
            active,
            state_maps,
        })
    }

    /// All state-action pairs featured: the tabular parameterization.
    pub fn tabular(n_states: usize, n_actions: usize) -> Result<Self> {
        let d = n_states * n_actions;
        Self::new(DMatrix::identity(d, d), n_states, n_actions)
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn d(&self) -> usize {
        self.phi.nrows()
    }

    /// Number of featured actions in each state.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn state_map(&self, s: usize) -> Option<&FeatureMap> {
        self.state_maps[s].as_ref()
    }

    fn check_spec(&self, spec: &MarkovGameSpec) -> Result<()> {
        check_dim(spec.n_states, self.n_states)?;
        check_dim(spec.n_actions, self.n_actions)
    }
}

/// `−gᵀQh − τH(g) + τH(h)`.
pub fn f_tau(q: &DMatrix<f64>, g: &SimplexVector, h: &SimplexVector, tau: f64) -> f64 {
    -g.dot(&(q * h.probs())) - tau * entropy(g) + tau * entropy(h)
}

/// Inner stepsize `(1−γ) / (2(1 + τ(ln n + 1 − γ)))`.
pub fn inner_stepsize(gamma: f64, tau: f64, n_actions: usize) -> f64 {
    (1.0 - gamma) / (2.0 * (1.0 + tau * ((n_actions as f64).ln() + 1.0 - gamma)))
}

/// How each state's matrix game is solved inside one Bellman backup.
#[derive(Clone, Debug)]
pub enum InnerSolve<'a> {
    /// `iters` optimistic NPG steps from zero, or from `warm` when given.
    Onpg {
        iters: usize,
        eta: f64,
        warm: Option<&'a StatePolicyParams>,
    },
    /// Exact saddle point from the reference oracle.
    Exact,
}

struct StateSolution {
    theta: ParamVector,
    nu: ParamVector,
    value: f64,
}

fn solve_state(
    spec: &MarkovGameSpec,
    q: &DMatrix<f64>,
    s: usize,
    features: Option<&MarkovFeatureMap>,
    inner: &InnerSolve<'_>,
) -> Result<StateSolution> {
    let n = spec.n_actions;
    let tau = spec.tau;
    let cost = CostMatrix::new(q.clone())?;
    let fmap = match features {
        Some(f) => match f.state_map(s) {
            Some(m) => Some(PlayerFeatures::shared(m.clone())),
            None => {
                let u = SimplexVector::uniform(n);
                return Ok(StateSolution {
                    theta: ParamVector::zeros(0),
                    nu: ParamVector::zeros(0),
                    value: regularized_cost(&cost, &u, &u, tau),
                });
            }
        },
        None => None,
    };
    let (theta, nu) = match inner {
        InnerSolve::Exact => {
            let sol = qre_fixed_point(&cost, tau, fmap.as_ref())?;
            (sol.theta_star, sol.nu_star)
        }
        InnerSolve::Onpg { iters, eta, warm } => {
            let game = RegularizedGame::new(cost.clone(), tau)?;
            let dim = fmap.as_ref().map_or(n, |f| f.d());
            let mut state = match warm {
                Some(w) => OptimisticState::at(w.theta[s].clone(), w.nu[s].clone()),
                None => OptimisticState::zeros(dim, dim),
            };
            for _ in 0..*iters {
                state = match &fmap {
                    Some(f) => crate::fa::onpg_fa_step(&game, f, &state, *eta)?,
                    None => onpg_step(&game, &state, *eta)?,
                };
            }
            (state.theta, state.nu)
        }
    };
    let (g, h) = match &fmap {
        Some(f) => (log_linear_policy(&f.row, &theta)?, log_linear_policy(&f.col, &nu)?),
        None => (softmax(&theta)?, softmax(&nu)?),
    };
    Ok(StateSolution {
        value: regularized_cost(&cost, &g, &h, tau),
        theta,
        nu,
    })
}

/// One soft Bellman backup: solve every state's game on the frozen tensor,
/// then return `Q'(s) = r(s) + γ E[V(s')]` with `V` the inner values, and the
/// inner parameters. States are processed in parallel when `parallel` is set;
/// the result does not depend on it.
pub fn soft_bellman_apply(
    spec: &MarkovGameSpec,
    q: &QTensor,
    features: Option<&MarkovFeatureMap>,
    inner: &InnerSolve<'_>,
    parallel: bool,
) -> Result<(QTensor, StatePolicyParams)> {
    check_dim(spec.n_states, q.q.len())?;
    if let Some(f) = features {
        f.check_spec(spec)?;
    }
    let solve = |s: usize| solve_state(spec, &q.q[s], s, features, inner);
    let sols: Vec<StateSolution> = if parallel {
        (0..spec.n_states).into_par_iter().map(solve).collect::<Result<_>>()?
    } else {
        (0..spec.n_states).map(solve).collect::<Result<_>>()?
    };
    let v: Vec<f64> = sols.iter().map(|x| x.value).collect();
    let params = StatePolicyParams {
        theta: sols.iter().map(|x| x.theta.clone()).collect(),
        nu: sols.into_iter().map(|x| x.nu).collect(),
    };
    Ok((
        QTensor {
            q: spec.backup(&v),
            v,
        },
        params,
    ))
}

/// Reference solution of the regularized Markov game.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovOracle {
    /// `Q*` and the fixed-point values `V*` it was backed up from.
    pub q: QTensor,
    pub g: Vec<SimplexVector>,
    pub h: Vec<SimplexVector>,
    /// `θ*(s) = −P_s Q*(s) h*(s)/τ`, `ν*(s) = P_s Q*(s)ᵀ g*(s)/τ` with `P_s` the
    /// state's preconditioner (identity in the tabular case).
    pub params: StatePolicyParams,
    /// `‖V_{k+1} − V_k‖∞` for each value-iteration sweep.
    pub increments: Vec<f64>,
}

/// Soft value iteration with exact per-state saddle solves, run until
/// `‖ΔV‖∞ ≤ tol (1−γ)/γ` so that `‖V − V*‖∞ ≤ tol`.
pub fn in_class_ne_oracle(
    spec: &MarkovGameSpec,
    features: Option<&MarkovFeatureMap>,
    tol: f64,
) -> Result<MarkovOracle> {
    if !(tol > 0.0) {
        return Err(NpgError::InvalidInput("oracle tolerance must be positive".into()));
    }
    if let Some(f) = features {
        f.check_spec(spec)?;
    }
    let gamma = spec.gamma;
    let mut v = vec![0.0; spec.n_states];
    let mut increments = Vec::new();
    let stop = if gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - gamma) / gamma };
    for _ in 0..1_000_000 {
        let q = spec.backup(&v);
        let next: Vec<f64> = (0..spec.n_states)
            .map(|s| solve_state(spec, &q[s], s, features, &InnerSolve::Exact).map(|x| x.value))
            .collect::<Result<_>>()?;
        let inc = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        increments.push(inc);
        v = next;
        if inc <= stop {
            break;
        }
    }
    let q = spec.backup(&v);
    let mut g = Vec::with_capacity(spec.n_states);
    let mut h = Vec::with_capacity(spec.n_states);
    let mut theta = Vec::with_capacity(spec.n_states);
    let mut nu = Vec::with_capacity(spec.n_states);
    let mut values = Vec::with_capacity(spec.n_states);
    for (s, qs) in q.iter().enumerate() {
        let cost = CostMatrix::new(qs.clone())?;
        let map = features.map(|f| f.state_map(s));
        match map {
            Some(None) => {
                let u = SimplexVector::uniform(spec.n_actions);
                values.push(regularized_cost(&cost, &u, &u, spec.tau));
                g.push(u.clone());
                h.push(u);
                theta.push(ParamVector::zeros(0));
                nu.push(ParamVector::zeros(0));
            }
            Some(Some(m)) => {
                let pf = PlayerFeatures::shared(m.clone());
                let sol = qre_fixed_point(&cost, spec.tau, Some(&pf))?;
                values.push(regularized_cost(&cost, &sol.g_star, &sol.h_star, spec.tau));
                g.push(sol.g_star);
                h.push(sol.h_star);
                theta.push(sol.theta_star);
                nu.push(sol.nu_star);
            }
            None => {
                let sol = qre_fixed_point(&cost, spec.tau, None)?;
                values.push(regularized_cost(&cost, &sol.g_star, &sol.h_star, spec.tau));
                g.push(sol.g_star);
                h.push(sol.h_star);
                theta.push(sol.theta_star);
                nu.push(sol.nu_star);
            }
        }
    }
    Ok(MarkovOracle {
        q: QTensor { q, v },
        g,
        h,
        params: StatePolicyParams { theta, nu },
        increments,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovConfig {
    /// Inner stepsize; the theorem value from [`inner_stepsize`] when `None`.
    pub eta: Option<f64>,
    /// Start each inner solve from the previous outer iteration's parameters.
    pub warm_start: bool,
    pub oracle_tol: f64,
    pub parallel: bool,
}

impl Default for MarkovConfig {
    fn default() -> Self {
        Self {
            eta: None,
            warm_start: false,
            oracle_tol: 1e-12,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovRecord {
    pub outer: usize,
    /// `‖Q_t − Q*‖∞`.
    pub q_error: f64,
    /// `max(‖θ_t − θ*‖, ‖ν_t − ν*‖)`.
    pub param_dist: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovTrace {
    pub records: Vec<MarkovRecord>,
    pub status: Status,
    pub oracle: MarkovOracle,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovRun {
    pub q: QTensor,
    pub params: StatePolicyParams,
    pub trace: MarkovTrace,
}

fn solve_markov(
    spec: &MarkovGameSpec,
    features: Option<&MarkovFeatureMap>,
    t_outer: usize,
    t_inner: usize,
    cfg: &MarkovConfig,
) -> Result<MarkovRun> {
    let oracle = in_class_ne_oracle(spec, features, cfg.oracle_tol)?;
    let eta = cfg
        .eta
        .unwrap_or_else(|| inner_stepsize(spec.gamma, spec.tau, spec.n_actions));
    let dims: Vec<usize> = match features {
        Some(f) => f.active().to_vec(),
        None => vec![spec.n_actions; spec.n_states],
    };
    let mut params = StatePolicyParams {
        theta: dims.iter().map(|&k| ParamVector::zeros(k)).collect(),
        nu: dims.iter().map(|&k| ParamVector::zeros(k)).collect(),
    };
    let mut q = QTensor::zeros(spec.n_states, spec.n_actions);
    let mut records = vec![MarkovRecord {
        outer: 0,
        q_error: q.sup_dist(&oracle.q),
        param_dist: params.distance(&oracle.params),
    }];
    let mut status = Status::MaxIters;
    for t in 1..=t_outer {
        let inner = InnerSolve::Onpg {
            iters: t_inner,
            eta,
            warm: cfg.warm_start.then_some(&params),
        };
        let (q_next, p_next) = match soft_bellman_apply(spec, &q, features, &inner, cfg.parallel) {
            Ok(x) => x,
            Err(NpgError::DivergedParameter { .. }) => {
                status = Status::Diverged;
                break;
            }
            Err(e) => return Err(e),
        };
        q = q_next;
        params = p_next;
        records.push(MarkovRecord {
            outer: t,
            q_error: q.sup_dist(&oracle.q),
            param_dist: params.distance(&oracle.params),
        });
    }
    Ok(MarkovRun {
        q,
        params,
        trace: MarkovTrace {
            records,
            status,
            oracle,
            eta,
        },
    })
}

/// Nested optimistic NPG with tabular softmax policies, starting from `Q = 0`.
pub fn solve_markov_tabular(
    spec: &MarkovGameSpec,
    t_outer: usize,
    t_inner: usize,
    cfg: &MarkovConfig,
) -> Result<MarkovRun> {
    solve_markov(spec, None, t_outer, t_inner, cfg)
}

/// Nested optimistic NPG with log-linear policies. States without features
/// keep uniform policies.
pub fn solve_markov_fa(
    spec: &MarkovGameSpec,
    features: &MarkovFeatureMap,
    t_outer: usize,
    t_inner: usize,
    cfg: &MarkovConfig,
) -> Result<MarkovRun> {
    solve_markov(spec, Some(features), t_outer, t_inner, cfg)
}

/// Policies induced by per-state parameters.
pub fn state_policies(
    features: Option<&MarkovFeatureMap>,
    params: &StatePolicyParams,
    n_actions: usize,
) -> Result<(Vec<SimplexVector>, Vec<SimplexVector>)> {
    let mut g = Vec::new();
    let mut h = Vec::new();
    for s in 0..params.theta.len() {
        match features.map(|f| f.state_map(s)) {
            None => {
                g.push(softmax(&params.theta[s])?);
                h.push(softmax(&params.nu[s])?);
            }
            Some(None) => {
                g.push(SimplexVector::uniform(n_actions));
                h.push(SimplexVector::uniform(n_actions));
            }
            Some(Some(m)) => {
                g.push(log_linear_policy(m, &params.theta[s])?);
                h.push(log_linear_policy(m, &params.nu[s])?);
            }
        }
    }
    Ok((g, h))
}

/// Largest per-state unregularized exploitability of the policies on the
/// matrix games of `q`, with best responses restricted to each state's
/// policy class.
pub fn per_state_gap(
    features: Option<&MarkovFeatureMap>,
    q: &QTensor,
    g: &[SimplexVector],
    h: &[SimplexVector],
) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..q.q.len() {
        let qs = &q.q[s];
        let gap = match features.map(|f| f.state_map(s)) {
            Some(None) => 0.0,
            Some(Some(m)) => {
                let cost = CostMatrix::new(qs.clone()).expect("finite");
                crate::fa::in_class_duality_gap(&cost, &PlayerFeatures::shared(m.clone()), &g[s], &h[s])
            }
            None => qs.tr_mul(g[s].probs()).max() - (qs * h[s].probs()).min(),
        };
        worst = worst.max(gap);
    }
    worst
}

/// Empirical sensitivity of the restricted equilibrium to the cost matrix:
/// `max(‖Δg*‖, ‖Δh*‖) / ‖ΔQ‖_F` for a perturbation `dq`.
pub fn equilibrium_sensitivity(
    q: &DMatrix<f64>,
    dq: &DMatrix<f64>,
    tau: f64,
    features: Option<&PlayerFeatures>,
) -> Result<f64> {
    let a = qre_fixed_point(&CostMatrix::new(q.clone())?, tau, features)?;
    let b = qre_fixed_point(&CostMatrix::new(q + dq)?, tau, features)?;
    let dg = (a.g_star.probs() - b.g_star.probs()).norm();
    let dh = (a.h_star.probs() - b.h_star.probs()).norm();
    Ok(dg.max(dh) / dq.norm())
}
