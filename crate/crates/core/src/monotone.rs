//! N-player monotone games over product simplexes.
//!
//! Player `i` minimizes `f_i(g_i, g_{−i}) − τH(g_i)`. The game is described by
//! its pseudo-gradient `F(z) = [∇_{g_i} f_i(z)]_i`, assumed monotone and
//! `L`-Lipschitz. Three solvers share the fixed point
//! `θ_i* = −F_i(z*)/τ`: optimistic NPG, extragradient and proximal point.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, NpgError, Result};
use crate::fa::{log_linear_policy, FeatureMap};
use crate::instances::SeededRng;
use crate::matrix_game::{finite_or_diverged, relax, CostMatrix};
use crate::oracles::{self, MonotoneOracle};
use crate::simplex::{kl, softmax, ParamVector, SimplexVector};

/// Pseudo-gradient callable: one policy per player in, one gradient per player out.
pub type PseudoGradient = dyn Fn(&[DVector<f64>]) -> Vec<DVector<f64>> + Send + Sync;

/// Number of random interior pairs used by [`verify_spec`].
pub const PROBE_PAIRS: usize = 500;
pub const PROBE_TOL: f64 = 1e-9;
pub const PP_INNER_CAP: usize = 10_000;

#[derive(Clone)]
pub struct MonotoneGameSpec {
    n_players: usize,
    n_actions: usize,
    pseudo_gradient: Arc<PseudoGradient>,
    lipschitz: f64,
    tau: f64,
    own_linear: bool,
}

impl fmt::Debug for MonotoneGameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneGameSpec")
            .field("n_players", &self.n_players)
            .field("n_actions", &self.n_actions)
            .field("lipschitz", &self.lipschitz)
            .field("tau", &self.tau)
            .field("own_linear", &self.own_linear)
            .finish_non_exhaustive()
    }
}

impl MonotoneGameSpec {
    pub fn new<F>(n_players: usize, n_actions: usize, lipschitz: f64, tau: f64, f: F) -> Result<Self>
    where
        F: Fn(&[DVector<f64>]) -> Vec<DVector<f64>> + Send + Sync + 'static,
    {
        if n_players == 0 || n_actions == 0 {
            return Err(NpgError::InvalidInput("empty game".into()));
        }
        if !(lipschitz >= 0.0 && lipschitz.is_finite()) {
            return Err(NpgError::InvalidInput(format!("bad Lipschitz constant {lipschitz}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(NpgError::InvalidInput(format!("bad tau {tau}")));
        }
        Ok(Self {
            n_players,
            n_actions,
            pseudo_gradient: Arc::new(f),
            lipschitz,
            tau,
            own_linear: false,
        })
    }

    /// `F(z) = A z + b` on the stacked strategy `z`. The Lipschitz constant is
    /// the spectral norm of `A`; the game counts as linear in each player's
    /// own strategy when the diagonal blocks of `A` vanish.
    pub fn linear(
        a: DMatrix<f64>,
        b: DVector<f64>,
        n_players: usize,
        n_actions: usize,
        tau: f64,
    ) -> Result<Self> {
        let dim = n_players * n_actions;
        check_dim(dim, a.nrows())?;
        check_dim(dim, a.ncols())?;
        check_dim(dim, b.len())?;
        let lipschitz = a.clone().singular_values().max();
        let own_linear = (0..n_players).all(|i| {
            a.view((i * n_actions, i * n_actions), (n_actions, n_actions))
                .iter()
                .all(|&x| x == 0.0)
        });
        let mut spec = Self::new(n_players, n_actions, lipschitz, tau, move |z| {
            let stacked = DVector::from_iterator(dim, z.iter().flat_map(|g| g.iter().copied()));
            let f = &a * stacked + &b;
            (0..n_players)
                .map(|i| f.rows(i * n_actions, n_actions).into_owned())
                .collect()
        })?;
        spec.own_linear = own_linear;
        Ok(spec)
    }

    /// Marks the game as linear in each player's own strategy, which makes
    /// [`exploitability`] available.
    pub fn with_own_linear(mut self, own_linear: bool) -> Self {
        self.own_linear = own_linear;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn is_own_linear(&self) -> bool {
        self.own_linear
    }

    pub fn evaluate(&self, z: &[DVector<f64>]) -> Vec<DVector<f64>> {
        (self.pseudo_gradient)(z)
    }

    fn evaluate_policies(&self, z: &[SimplexVector]) -> Result<Vec<DVector<f64>>> {
        let raw: Vec<DVector<f64>> = z.iter().map(|g| g.probs().clone()).collect();
        let f = self.evaluate(&raw);
        check_dim(self.n_players, f.len())?;
        for fi in &f {
            check_dim(self.n_actions, fi.len())?;
        }
        Ok(f)
    }
}

/// Two-player spec with `F(g, h) = [Qh; −Qᵀg]`. `Q` must be square.
pub fn zero_sum_as_monotone(q: &CostMatrix, tau: f64) -> MonotoneGameSpec {
    assert_eq!(q.nrows(), q.ncols(), "wrapped matrix games need a square cost matrix");
    let entries = q.entries().clone();
    MonotoneGameSpec::new(2, q.nrows(), q.spectral_norm(), tau, move |z| {
        vec![&entries * &z[1], -entries.tr_mul(&z[0])]
    })
    .expect("valid wrapped game")
    .with_own_linear(true)
}

/// `F̃_i(z) = Ψᵀ F_i(Ψ z)`: the tabular game seen by log-linear players.
pub fn psi_projected(spec: &MonotoneGameSpec, fmap: &FeatureMap) -> Result<MonotoneGameSpec> {
    check_dim(spec.n_actions, fmap.n())?;
    let inner = spec.clone();
    let psi = fmap.psi().clone();
    MonotoneGameSpec::new(spec.n_players, spec.n_actions, spec.lipschitz, spec.tau, move |z| {
        let projected: Vec<DVector<f64>> = z.iter().map(|g| &psi * g).collect();
        inner.evaluate(&projected).iter().map(|f| psi.tr_mul(f)).collect()
    })
    .map(|s| s.with_own_linear(spec.own_linear))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeReport {
    /// Smallest `⟨F(z) − F(z'), z − z'⟩` over the sampled pairs.
    pub min_inner_product: f64,
    /// Largest `‖F(z) − F(z')‖ / ‖z − z'‖` over the sampled pairs.
    pub max_lipschitz_ratio: f64,
}

fn random_profile(spec: &MonotoneGameSpec, rng: &mut SeededRng) -> Vec<DVector<f64>> {
    (0..spec.n_players)
        .map(|_| DVector::from_vec(rng.dirichlet(spec.n_actions)))
        .collect()
}

fn stack(v: &[DVector<f64>]) -> DVector<f64> {
    let len = v.iter().map(|x| x.len()).sum();
    DVector::from_iterator(len, v.iter().flat_map(|x| x.iter().copied()))
}

/// Samples `pairs` random interior profile pairs.
pub fn probe(spec: &MonotoneGameSpec, pairs: usize, seed: u64) -> ProbeReport {
    let mut rng = SeededRng::new(seed);
    let mut min_ip = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    for _ in 0..pairs {
        let z1 = random_profile(spec, &mut rng);
        let z2 = random_profile(spec, &mut rng);
        let df = stack(&spec.evaluate(&z1)) - stack(&spec.evaluate(&z2));
        let dz = stack(&z1) - stack(&z2);
        min_ip = min_ip.min(df.dot(&dz));
        let nz = dz.norm();
        if nz > 0.0 {
            max_ratio = max_ratio.max(df.norm() / nz);
        }
    }
    ProbeReport {
        min_inner_product: min_ip,
        max_lipschitz_ratio: max_ratio,
    }
}

/// Rejects specs that are visibly non-monotone or whose declared Lipschitz
/// constant is too small on random pairs.
pub fn verify_spec(spec: &MonotoneGameSpec, seed: u64) -> Result<ProbeReport> {
    let mut rng = SeededRng::new(seed);
    let mut report = ProbeReport {
        min_inner_product: f64::INFINITY,
        max_lipschitz_ratio: 0.0,
    };
    for _ in 0..PROBE_PAIRS {
        let z1 = random_profile(spec, &mut rng);
        let z2 = random_profile(spec, &mut rng);
        let df = stack(&spec.evaluate(&z1)) - stack(&spec.evaluate(&z2));
        let dz = stack(&z1) - stack(&z2);
        let ip = df.dot(&dz);
        report.min_inner_product = report.min_inner_product.min(ip);
        if ip < -PROBE_TOL {
            return Err(NpgError::InvalidInput(format!(
                "pseudo-gradient is not monotone: inner product {ip:e}"
            )));
        }
        let (nf, nz) = (df.norm(), dz.norm());
        if nz > 0.0 {
            report.max_lipschitz_ratio = report.max_lipschitz_ratio.max(nf / nz);
        }
        if nf > spec.lipschitz * nz + PROBE_TOL {
            return Err(NpgError::InvalidInput(format!(
                "declared Lipschitz constant {} is below the observed ratio {}",
                spec.lipschitz,
                nf / nz
            )));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MultiPlayerState {
    pub thetas: Vec<ParamVector>,
    pub theta_bars: Vec<ParamVector>,
}

impl MultiPlayerState {
    pub fn zeros(n_players: usize, dim: usize) -> Self {
        Self {
            thetas: vec![ParamVector::zeros(dim); n_players],
            theta_bars: vec![ParamVector::zeros(dim); n_players],
        }
    }

    pub fn at(thetas: Vec<ParamVector>) -> Self {
        Self {
            theta_bars: thetas.clone(),
            thetas,
        }
    }

    pub fn policies(&self) -> Result<Vec<SimplexVector>> {
        self.thetas.iter().map(softmax).collect()
    }

    pub fn bar_policies(&self) -> Result<Vec<SimplexVector>> {
        self.theta_bars.iter().map(softmax).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Onpg,
    Eg,
    Pp,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Onpg, Method::Eg, Method::Pp];

    pub fn name(self) -> &'static str {
        match self {
            Method::Onpg => "onpg",
            Method::Eg => "eg",
            Method::Pp => "pp",
        }
    }
}

/// Exclusive upper bound on the stepsize covered by each method's guarantee.
/// For proximal point the bound is on `ητ` (`< 1/2`), expressed as `η`.
pub fn stepsize_bound(spec: &MonotoneGameSpec, method: Method) -> f64 {
    let (n, l, tau) = (spec.n_players as f64, spec.lipschitz, spec.tau);
    match method {
        Method::Onpg => 1.0 / (2.0 * (n + 4.0) * l + 2.0 * tau),
        Method::Eg => 1.0 / (2.0 * n * l + tau),
        Method::Pp => 0.5 / tau,
    }
}

pub fn check_stepsize(spec: &MonotoneGameSpec, method: Method, eta: f64) -> Result<()> {
    let bound = stepsize_bound(spec, method);
    if eta > 0.0 && eta < bound {
        Ok(())
    } else {
        Err(NpgError::InvalidStepsize { eta, bound })
    }
}

type PolicyFn<'a> = dyn Fn(&ParamVector) -> Result<SimplexVector> + 'a;
type DirFn<'a> = dyn Fn(DVector<f64>) -> DVector<f64> + 'a;

fn explicit_step(
    spec: &MonotoneGameSpec,
    state: &MultiPlayerState,
    eta: f64,
    extrapolate_from_bar: bool,
    policy: &PolicyFn<'_>,
    dir: &DirFn<'_>,
) -> Result<MultiPlayerState> {
    check_dim(spec.n_players, state.thetas.len())?;
    check_dim(spec.n_players, state.theta_bars.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(NpgError::InvalidStepsize { eta, bound: f64::INFINITY });
    }
    let decay = 1.0 - eta * spec.tau;
    let source = if extrapolate_from_bar {
        &state.theta_bars
    } else {
        &state.thetas
    };
    let z: Vec<SimplexVector> = source.iter().map(policy).collect::<Result<_>>()?;
    let f = spec.evaluate_policies(&z)?;
    let theta_bars: Vec<ParamVector> = state
        .thetas
        .iter()
        .zip(f)
        .map(|(t, fi)| finite_or_diverged(relax(t, decay, -eta, &dir(fi))))
        .collect::<Result<_>>()?;
    let z_bar: Vec<SimplexVector> = theta_bars.iter().map(policy).collect::<Result<_>>()?;
    let f_bar = spec.evaluate_policies(&z_bar)?;
    let thetas: Vec<ParamVector> = state
        .thetas
        .iter()
        .zip(f_bar)
        .map(|(t, fi)| finite_or_diverged(relax(t, decay, -eta, &dir(fi))))
        .collect::<Result<_>>()?;
    Ok(MultiPlayerState { thetas, theta_bars })
}

fn tabular_policy(p: &ParamVector) -> Result<SimplexVector> {
    softmax(p)
}

/// Optimistic NPG: the bar step uses `F(z̄_t)`, the main step `F(z̄_{t+1})`.
pub fn onpg_monotone_step(
    spec: &MonotoneGameSpec,
    state: &MultiPlayerState,
    eta: f64,
) -> Result<MultiPlayerState> {
    explicit_step(spec, state, eta, true, &tabular_policy, &|f| f)
}

/// Extragradient: like [`onpg_monotone_step`] but the bar step uses `F(z_t)`.
pub fn eg_step(
    spec: &MonotoneGameSpec,
    state: &MultiPlayerState,
    eta: f64,
) -> Result<MultiPlayerState> {
    explicit_step(spec, state, eta, false, &tabular_policy, &|f| f)
}

/// Optimistic NPG for log-linear players sharing one feature map. The
/// direction is preconditioned by `[(Mᵀ)⁻¹ | 0] P̃`.
pub fn monotone_fa_step(
    spec: &MonotoneGameSpec,
    fmap: &FeatureMap,
    state: &MultiPlayerState,
    eta: f64,
) -> Result<MultiPlayerState> {
    check_dim(spec.n_actions, fmap.n())?;
    for t in state.thetas.iter().chain(&state.theta_bars) {
        check_dim(fmap.d(), t.len())?;
    }
    let policy = |p: &ParamVector| log_linear_policy(fmap, p);
    let pre = fmap.preconditioner();
    explicit_step(spec, state, eta, true, &policy, &|f| pre * f)
}

/// Implicit proximal point step `θ = (1−ητ)θ_t − ηF(softmax θ)`, solved by
/// plain fixed-point iteration from `θ_t`.
pub fn pp_step(
    spec: &MonotoneGameSpec,
    state: &MultiPlayerState,
    eta: f64,
    inner_tol: f64,
) -> Result<MultiPlayerState> {
    check_dim(spec.n_players, state.thetas.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(NpgError::InvalidStepsize { eta, bound: f64::INFINITY });
    }
    let decay = 1.0 - eta * spec.tau;
    let mut x = state.thetas.clone();
    let mut change = f64::INFINITY;
    for _ in 0..PP_INNER_CAP {
        let z: Vec<SimplexVector> = x.iter().map(softmax).collect::<Result<_>>()?;
        let f = spec.evaluate_policies(&z)?;
        let next: Vec<ParamVector> = state
            .thetas
            .iter()
            .zip(f)
            .map(|(t, fi)| finite_or_diverged(relax(t, decay, -eta, &fi)))
            .collect::<Result<_>>()?;
        change = next
            .iter()
            .zip(&x)
            .map(|(a, b)| (a.values() - b.values()).amax())
            .fold(0.0, f64::max);
        x = next;
        if change < inner_tol {
            return Ok(MultiPlayerState::at(x));
        }
    }
    Err(NpgError::ImplicitSolveFailed {
        iterations: PP_INNER_CAP,
        residual: change,
    })
}

/// `‖θ_{t+1} − ((1−ητ)θ_t − ηF(softmax θ_{t+1}))‖∞` for a proximal step.
pub fn pp_implicit_residual(
    spec: &MonotoneGameSpec,
    prev: &MultiPlayerState,
    next: &MultiPlayerState,
    eta: f64,
) -> Result<f64> {
    let decay = 1.0 - eta * spec.tau;
    let z: Vec<SimplexVector> = next.thetas.iter().map(softmax).collect::<Result<_>>()?;
    let f = spec.evaluate_policies(&z)?;
    Ok(prev
        .thetas
        .iter()
        .zip(f)
        .zip(&next.thetas)
        .map(|((t, fi), n)| (relax(t, decay, -eta, &fi) - n.values()).amax())
        .fold(0.0, f64::max))
}

/// `Σ_i (⟨g_i, F_i(z)⟩ − min_a F_i(z)_a)`, the unregularized exploitability of
/// games linear in each player's own strategy. `None` for other games.
pub fn exploitability(spec: &MonotoneGameSpec, z: &[SimplexVector]) -> Result<Option<f64>> {
    if !spec.own_linear {
        return Ok(None);
    }
    let f = spec.evaluate_policies(z)?;
    Ok(Some(
        f.iter()
            .zip(z)
            .map(|(fi, g)| g.dot(fi) - fi.min())
            .sum(),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneConfig {
    pub eta: f64,
    pub max_iters: usize,
    pub kl_tol: f64,
    pub param_tol: f64,
    pub guaranteed: bool,
    pub inner_tol: f64,
    pub record_every: usize,
}

impl MonotoneConfig {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            max_iters: 200_000,
            kl_tol: 1e-15,
            param_tol: 1e-10,
            guaranteed: false,
            inner_tol: 1e-12,
            record_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneRecord {
    pub iter: usize,
    pub policies: Vec<SimplexVector>,
    /// `KL(z*‖z_t)` summed over players.
    pub kl_to_target: f64,
    /// `KL(z*‖z̄_t)`; equals `kl_to_target` for proximal point.
    pub kl_bar_to_target: f64,
    pub param_dist_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneTrace {
    pub records: Vec<MonotoneRecord>,
    pub status: crate::matrix_game::Status,
    pub iterations: usize,
    pub targets: MonotoneOracle,
    pub final_state: MultiPlayerState,
    pub eta: f64,
    pub tau: f64,
    pub kl0: f64,
}

pub fn solve_monotone(
    spec: &MonotoneGameSpec,
    cfg: &MonotoneConfig,
    method: Method,
) -> Result<MonotoneTrace> {
    use crate::matrix_game::Status;
    if spec.tau <= 0.0 {
        return Err(NpgError::InvalidInput("regularized solvers need tau > 0".into()));
    }
    if cfg.guaranteed {
        check_stepsize(spec, method, cfg.eta)?;
    }
    let targets = oracles::pp_reference_monotone(spec, oracles::TARGET_RESIDUAL)?;
    let record = |iter: usize, s: &MultiPlayerState| -> Result<MonotoneRecord> {
        let policies = s.policies()?;
        let bars = s.bar_policies()?;
        let mut kl_main = 0.0;
        let mut kl_bar = 0.0;
        for i in 0..spec.n_players {
            kl_main += kl(&targets.policies[i], &policies[i])?;
            kl_bar += kl(&targets.policies[i], &bars[i])?;
        }
        let param_dist_sq = s
            .thetas
            .iter()
            .zip(&targets.thetas)
            .map(|(a, b)| a.dist_sq(b))
            .sum();
        Ok(MonotoneRecord {
            iter,
            policies,
            kl_to_target: kl_main,
            kl_bar_to_target: kl_bar,
            param_dist_sq,
        })
    };
    let done = |r: &MonotoneRecord| r.kl_to_target <= cfg.kl_tol && r.param_dist_sq.sqrt() <= cfg.param_tol;

    let mut state = MultiPlayerState::zeros(spec.n_players, spec.n_actions);
    let first = record(0, &state)?;
    let kl0 = first.kl_to_target;
    let mut status = if done(&first) { Status::ConvergedParam } else { Status::MaxIters };
    let mut records = vec![first];
    let mut iterations = 0;
    if status == Status::MaxIters {
        for it in 1..=cfg.max_iters {
            let next = match method {
                Method::Onpg => onpg_monotone_step(spec, &state, cfg.eta),
                Method::Eg => eg_step(spec, &state, cfg.eta),
                Method::Pp => pp_step(spec, &state, cfg.eta, cfg.inner_tol),
            };
            state = match next {
                Ok(s) => s,
                Err(NpgError::DivergedParameter { .. }) => {
                    status = Status::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            iterations = it;
            let rec = record(it, &state)?;
            let finished = done(&rec);
            if it % cfg.record_every == 0 || finished || it == cfg.max_iters {
                records.push(rec);
            }
            if finished {
                status = Status::ConvergedParam;
                break;
            }
        }
    }
    Ok(MonotoneTrace {
        records,
        status,
        iterations,
        targets,
        final_state: state,
        eta: cfg.eta,
        tau: spec.tau,
        kl0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{linear_cyclic_game, random_cost_matrix, random_feature_map, rotated_quadratic_game};
    use crate::matrix_game::{onpg_step, OptimisticState, RegularizedGame, Status};
    use crate::oracles::qre_fixed_point;

    #[test]
    fn wrapped_game_is_exactly_monotone() {
        let mut rng = SeededRng::new(1);
        let q = random_cost_matrix(5, 5, &mut rng);
        let spec = zero_sum_as_monotone(&q, 0.3);
        let rep = verify_spec(&spec, 9).unwrap();
        assert!(rep.min_inner_product.abs() < 1e-12);
        let rep = probe(&spec, 200, 10);
        assert!(rep.min_inner_product.abs() < 1e-12);
        assert!(rep.max_lipschitz_ratio <= spec.lipschitz() + 1e-12);
    }

    #[test]
    fn instance_library_is_monotone() {
        let mut rng = SeededRng::new(2);
        let cyc = linear_cyclic_game(3, 4, 0.0, 0.2, &mut rng).unwrap();
        assert!(cyc.is_own_linear());
        verify_spec(&cyc, 1).unwrap();
        let strict = linear_cyclic_game(4, 3, 0.5, 0.2, &mut rng).unwrap();
        assert!(!strict.is_own_linear());
        assert!(verify_spec(&strict, 2).unwrap().min_inner_product > 0.0);
        let quad = rotated_quadratic_game(3, 0.2, &mut rng).unwrap();
        verify_spec(&quad, 3).unwrap();
    }

    #[test]
    fn probe_rejects_non_monotone() {
        let spec = MonotoneGameSpec::linear(
            -DMatrix::identity(4, 4),
            DVector::zeros(4),
            2,
            2,
            0.1,
        )
        .unwrap();
        assert!(verify_spec(&spec, 0).is_err());
        let lying = MonotoneGameSpec::new(1, 3, 0.1, 0.1, |z| vec![z[0].clone() * 5.0]).unwrap();
        assert!(verify_spec(&lying, 0).is_err());
    }

    #[test]
    fn wrapped_onpg_reproduces_matrix_onpg() {
        let mut rng = SeededRng::new(3);
        let q = random_cost_matrix(5, 5, &mut rng);
        let tau = 0.2;
        let game = RegularizedGame::new(q.clone(), tau).unwrap();
        let spec = zero_sum_as_monotone(&q, tau);
        let eta = 0.1;
        let mut a = OptimisticState::zeros(5, 5);
        let mut b = MultiPlayerState::zeros(2, 5);
        for _ in 0..500 {
            a = onpg_step(&game, &a, eta).unwrap();
            b = onpg_monotone_step(&spec, &b, eta).unwrap();
            assert!(a.theta.dist_sq(&b.thetas[0]).sqrt() <= 1e-12);
            assert!(a.nu.dist_sq(&b.thetas[1]).sqrt() <= 1e-12);
            assert!(a.theta_bar.dist_sq(&b.theta_bars[0]).sqrt() <= 1e-12);
        }
    }

    #[test]
    fn wrapped_identity_equilibrium_matches_matrix_oracle() {
        let q = crate::matrix_game::CostMatrix::identity(5);
        let spec = zero_sum_as_monotone(&q, 0.5);
        let pp = oracles::pp_reference_monotone(&spec, 1e-13).unwrap();
        let qre = qre_fixed_point(&q, 0.5, None).unwrap();
        assert!(pp.policies[0].max_abs_diff(&qre.g_star) < 1e-12);
        assert!(pp.thetas[1].dist_sq(&qre.nu_star).sqrt() < 1e-11);
    }

    #[test]
    fn single_player_linear_game() {
        let q = DVector::from_column_slice(&[1.0, 0.0, -0.5]);
        let tau = 0.5;
        let spec = MonotoneGameSpec::linear(DMatrix::zeros(3, 3), q.clone(), 1, 3, tau).unwrap();
        let mut s = MultiPlayerState::zeros(1, 3);
        for _ in 0..400 {
            s = onpg_monotone_step(&spec, &s, 0.3).unwrap();
        }
        let want = crate::simplex::softmax_raw(&(-&q / tau));
        assert!((s.policies().unwrap()[0].probs() - want).amax() < 1e-12);
    }

    fn transcribe(
        spec: &MonotoneGameSpec,
        thetas: &[DVector<f64>],
        bars: &[DVector<f64>],
        eta: f64,
        from_bar: bool,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let sm = |v: &DVector<f64>| {
            let e = v.map(f64::exp);
            &e / e.sum()
        };
        let decay = 1.0 - eta * spec.tau();
        let src: Vec<_> = (if from_bar { bars } else { thetas }).iter().map(sm).collect();
        let f = spec.evaluate(&src);
        let nb: Vec<_> = thetas.iter().zip(&f).map(|(t, fi)| t * decay - fi * eta).collect();
        let f2 = spec.evaluate(&nb.iter().map(sm).collect::<Vec<_>>());
        let nt: Vec<_> = thetas.iter().zip(&f2).map(|(t, fi)| t * decay - fi * eta).collect();
        (nt, nb)
    }

    #[test]
    fn one_step_matches_transcription() {
        let mut rng = SeededRng::new(4);
        let spec = linear_cyclic_game(3, 4, 0.0, 0.3, &mut rng).unwrap();
        let thetas: Vec<DVector<f64>> = (0..3).map(|_| rng.symmetric_matrix(4, 1).column(0).into_owned()).collect();
        let bars: Vec<DVector<f64>> = (0..3).map(|_| rng.symmetric_matrix(4, 1).column(0).into_owned()).collect();
        let state = MultiPlayerState {
            thetas: thetas.iter().cloned().map(ParamVector::new).collect(),
            theta_bars: bars.iter().cloned().map(ParamVector::new).collect(),
        };
        for (from_bar, out) in [
            (true, onpg_monotone_step(&spec, &state, 0.05).unwrap()),
            (false, eg_step(&spec, &state, 0.05).unwrap()),
        ] {
            let (nt, nb) = transcribe(&spec, &thetas, &bars, 0.05, from_bar);
            for i in 0..3 {
                assert!((out.thetas[i].values() - &nt[i]).amax() < 1e-14);
                assert!((out.theta_bars[i].values() - &nb[i]).amax() < 1e-14);
            }
        }
    }

    #[test]
    fn fixed_point_for_all_methods() {
        let mut rng = SeededRng::new(5);
        let spec = linear_cyclic_game(3, 3, 0.3, 0.25, &mut rng).unwrap();
        let sol = oracles::pp_reference_monotone(&spec, 1e-13).unwrap();
        let st = MultiPlayerState::at(sol.thetas.clone());
        for next in [
            onpg_monotone_step(&spec, &st, 0.05).unwrap(),
            eg_step(&spec, &st, 0.05).unwrap(),
            pp_step(&spec, &st, 0.05, 1e-13).unwrap(),
        ] {
            for (a, b) in next.thetas.iter().zip(&sol.thetas) {
                assert!(a.dist_sq(b).sqrt() < 1e-11);
            }
        }
    }

    #[test]
    fn pp_step_satisfies_implicit_equation() {
        let mut rng = SeededRng::new(6);
        let q = random_cost_matrix(4, 4, &mut rng);
        let spec = zero_sum_as_monotone(&q, 0.2);
        let mut s = MultiPlayerState::zeros(2, 4);
        for _ in 0..20 {
            let next = pp_step(&spec, &s, 0.5, 1e-12).unwrap();
            assert!(pp_implicit_residual(&spec, &s, &next, 0.5).unwrap() < 1e-11);
            s = next;
        }
    }

    #[test]
    fn pp_inner_loop_fails_when_too_stiff() {
        let q = CostMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let spec = zero_sum_as_monotone(&q, 0.01);
        let start = MultiPlayerState::at(vec![
            ParamVector::from_slice(&[1.0, 0.0]),
            ParamVector::from_slice(&[0.0, 1.0]),
        ]);
        let err = pp_step(&spec, &start, 10.0, 1e-12).unwrap_err();
        assert!(matches!(err, NpgError::ImplicitSolveFailed { .. }));
    }

    #[test]
    fn stepsize_rules() {
        let mut rng = SeededRng::new(8);
        let spec = linear_cyclic_game(3, 3, 0.0, 0.2, &mut rng).unwrap();
        let b = stepsize_bound(&spec, Method::Onpg);
        assert!(check_stepsize(&spec, Method::Onpg, b * 0.99).is_ok());
        assert!(check_stepsize(&spec, Method::Onpg, b).is_err());
        assert!(check_stepsize(&spec, Method::Pp, 2.5).is_err());
        let mut cfg = MonotoneConfig::new(1.0);
        cfg.guaranteed = true;
        assert!(solve_monotone(&spec, &cfg, Method::Eg).is_err());
    }

    #[test]
    fn wrapped_zero_matrix_is_immediate() {
        let spec = zero_sum_as_monotone(&CostMatrix::zeros(3, 3), 1.0);
        let trace = solve_monotone(&spec, &MonotoneConfig::new(0.1), Method::Onpg).unwrap();
        assert_eq!(trace.status, Status::ConvergedParam);
        assert_eq!(trace.iterations, 0);
    }

    #[test]
    fn exploitability_matches_duality_gap() {
        let mut rng = SeededRng::new(9);
        let q = random_cost_matrix(4, 4, &mut rng);
        let spec = zero_sum_as_monotone(&q, 0.1);
        let g = SimplexVector::from_slice(&rng.dirichlet(4)).unwrap();
        let h = SimplexVector::from_slice(&rng.dirichlet(4)).unwrap();
        let e = exploitability(&spec, &[g.clone(), h.clone()]).unwrap().unwrap();
        let gap = crate::matrix_game::duality_gap(&q, &g, &h);
        assert!((e - gap).abs() < 1e-14);
        let quad = rotated_quadratic_game(2, 0.1, &mut rng).unwrap();
        assert_eq!(exploitability(&quad, &[g.clone(), h]).unwrap(), None);
    }

    #[test]
    fn fa_step_tracks_projected_tabular_game() {
        let mut rng = SeededRng::new(10);
        let spec = linear_cyclic_game(3, 6, 0.2, 0.3, &mut rng).unwrap();
        let fmap = FeatureMap::identity(2, 6).unwrap();
        let proj = psi_projected(&spec, &fmap).unwrap();
        let eta = 0.5 * stepsize_bound(&spec, Method::Onpg);
        let mut fa = MultiPlayerState::zeros(3, 2);
        let mut tab = MultiPlayerState::zeros(3, 6);
        for _ in 0..200 {
            fa = monotone_fa_step(&spec, &fmap, &fa, eta).unwrap();
            tab = onpg_monotone_step(&proj, &tab, eta).unwrap();
            for i in 0..3 {
                let a = log_linear_policy(&fmap, &fa.thetas[i]).unwrap();
                let b = softmax(&tab.thetas[i]).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-12);
            }
        }
    }

    #[test]
    fn fa_fixed_point_is_preconditioned_gradient() {
        let mut rng = SeededRng::new(11);
        let spec = linear_cyclic_game(3, 5, 0.2, 0.3, &mut rng).unwrap();
        let fmap = random_feature_map(2, 5, &mut rng).unwrap();
        let proj = psi_projected(&spec, &fmap).unwrap();
        let sol = oracles::pp_reference_monotone(&proj, 1e-13).unwrap();
        let f = spec.evaluate(&sol.policies.iter().map(|p| p.probs().clone()).collect::<Vec<_>>());
        let thetas: Vec<ParamVector> = f
            .iter()
            .map(|fi| ParamVector::new(fmap.preconditioner() * fi * (-1.0 / spec.tau())))
            .collect();
        let st = MultiPlayerState::at(thetas.clone());
        let next = monotone_fa_step(&spec, &fmap, &st, 0.01).unwrap();
        for (a, b) in next.thetas.iter().zip(&thetas) {
            assert!(a.dist_sq(b).sqrt() < 1e-11);
        }
        for (t, p) in thetas.iter().zip(&sol.policies) {
            assert!(log_linear_policy(&fmap, t).unwrap().max_abs_diff(p) < 1e-12);
        }
    }
}
