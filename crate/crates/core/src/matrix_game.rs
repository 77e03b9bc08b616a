//! Two-player zero-sum matrix games with entropy regularization.
//!
//! Player one picks `g` to minimize `gᵀQh − τH(g) + τH(h)`, player two picks
//! `h` to maximize it. Both policies are softmax maps of parameters `θ`, `ν`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, NpgError, Result};
use crate::oracles::{self, OracleSolution};
use crate::simplex::{
    entropy, kl, log_sum_exp, softmax, softmax_raw, ParamVector, SimplexVector,
};

/// Default blow-up threshold on `‖θ‖∞`.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Cost matrix `Q` paid by the row player. Rectangular shapes are allowed.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    entries: DMatrix<f64>,
    max_abs_entry: f64,
    inf_operator_norm: f64,
    spectral_norm: f64,
}

impl CostMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(NpgError::InvalidInput("empty cost matrix".into()));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(NpgError::InvalidInput("cost matrix has non-finite entries".into()));
        }
        let max_abs_entry = entries.amax();
        let inf_operator_norm = entries
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let spectral_norm = entries.clone().singular_values().max();
        Ok(Self {
            entries,
            max_abs_entry,
            inf_operator_norm,
            spectral_norm,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(NpgError::InvalidInput("ragged cost matrix rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, m, &flat))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("finite")
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self::new(DMatrix::zeros(n, m)).expect("finite")
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// `max |Q_ab|`, the norm used in the optimistic stepsize rule.
    pub fn max_abs_entry(&self) -> f64 {
        self.max_abs_entry
    }

    /// Largest absolute row sum.
    pub fn inf_operator_norm(&self) -> f64 {
        self.inf_operator_norm
    }

    /// Largest singular value.
    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn norm(&self, choice: NormChoice) -> f64 {
        match choice {
            NormChoice::MaxEntry => self.max_abs_entry,
            NormChoice::Operator => self.inf_operator_norm,
        }
    }
}

/// Which reading of `‖Q‖∞` the stepsize rules use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NormChoice {
    /// Largest absolute entry.
    #[default]
    MaxEntry,
    /// Induced ∞-operator norm (max absolute row sum). Never larger stepsizes
    /// than [`NormChoice::MaxEntry`].
    Operator,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizedGame {
    q: CostMatrix,
    tau: f64,
}

impl RegularizedGame {
    /// `tau = 0` is accepted so the unregularized vanilla update can be run.
    pub fn new(q: CostMatrix, tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(NpgError::InvalidInput(format!("tau must be finite and >= 0, got {tau}")));
        }
        Ok(Self { q, tau })
    }

    pub fn q(&self) -> &CostMatrix {
        &self.q
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_row(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_col(&self) -> usize {
        self.q.ncols()
    }

    /// `Q h`: the row player's cost vector.
    pub fn row_costs(&self, h: &DVector<f64>) -> DVector<f64> {
        self.q.entries() * h
    }

    /// `Qᵀ g`: the column player's payoff vector.
    pub fn col_payoffs(&self, g: &DVector<f64>) -> DVector<f64> {
        self.q.entries().tr_mul(g)
    }

    fn require_regularized(&self) -> Result<()> {
        if self.tau > 0.0 {
            Ok(())
        } else {
            Err(NpgError::InvalidInput("regularized solvers need tau > 0".into()))
        }
    }
}

/// `decay · x + step · dir`, entrywise. Every update rule in the crate goes
/// through this so that equivalent algorithms round identically.
pub(crate) fn relax(x: &DVector<f64>, decay: f64, step: f64, dir: &DVector<f64>) -> DVector<f64> {
    x.zip_map(dir, |a, b| decay * a + step * b)
}

pub(crate) fn finite_or_diverged(v: DVector<f64>) -> Result<ParamVector> {
    let p = ParamVector::new(v);
    p.check_finite()?;
    Ok(p)
}

/// One simultaneous step of the unmodified softmax NPG update, log-partition
/// term included. Both players use the sign that follows from differentiating
/// their own objective.
pub fn vanilla_npg_step(
    game: &RegularizedGame,
    theta: &ParamVector,
    nu: &ParamVector,
    eta: f64,
) -> Result<(ParamVector, ParamVector)> {
    check_dim(game.n_row(), theta.len())?;
    check_dim(game.n_col(), nu.len())?;
    let g = softmax(theta)?;
    let h = softmax(nu)?;
    let tau = game.tau;
    let decay = 1.0 - eta * tau;
    let shift_theta = eta * tau * (log_sum_exp(theta) - 1.0);
    let shift_nu = eta * tau * (log_sum_exp(nu) - 1.0);
    let theta_next = relax(theta, decay, -eta, &game.row_costs(&h)).add_scalar(shift_theta);
    let nu_next = relax(nu, decay, eta, &game.col_payoffs(&g)).add_scalar(shift_nu);
    Ok((finite_or_diverged(theta_next)?, finite_or_diverged(nu_next)?))
}

/// Runs the vanilla update from zero parameters until `‖θ‖∞` exceeds
/// `threshold` or either player's parameters stop being finite, returning the
/// first iteration at which that happened.
///
/// Allocation-free version of repeated [`vanilla_npg_step`] calls, meant for
/// the very long runs small stepsizes require.
pub fn vanilla_blowup_time(
    game: &RegularizedGame,
    eta: f64,
    max_iters: u64,
    threshold: f64,
) -> Option<u64> {
    let (n, m) = (game.n_row(), game.n_col());
    let q = game.q.entries();
    let tau = game.tau;
    let decay = 1.0 - eta * tau;
    let mut theta = vec![0.0; n];
    let mut nu = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; m];
    let mut next_theta = vec![0.0; n];
    let mut next_nu = vec![0.0; m];

    fn softmax_into(x: &[f64], out: &mut [f64]) -> f64 {
        let mx = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (o, &v) in out.iter_mut().zip(x) {
            *o = (v - mx).exp();
            s += *o;
        }
        for o in out.iter_mut() {
            *o /= s;
        }
        mx + s.ln()
    }

    for t in 1..=max_iters {
        let lse_theta = softmax_into(&theta, &mut g);
        let lse_nu = softmax_into(&nu, &mut h);
        let shift_theta = eta * tau * (lse_theta - 1.0);
        let shift_nu = eta * tau * (lse_nu - 1.0);
        for a in 0..n {
            let mut qh = 0.0;
            for b in 0..m {
                qh += q[(a, b)] * h[b];
            }
            next_theta[a] = decay * theta[a] - eta * qh + shift_theta;
        }
        for b in 0..m {
            let mut qg = 0.0;
            for a in 0..n {
                qg += q[(a, b)] * g[a];
            }
            next_nu[b] = decay * nu[b] + eta * qg + shift_nu;
        }
        std::mem::swap(&mut theta, &mut next_theta);
        std::mem::swap(&mut nu, &mut next_nu);
        let blown = theta.iter().any(|x| !x.is_finite() || x.abs() > threshold);
        if blown || nu.iter().any(|x| !x.is_finite()) {
            return Some(t);
        }
    }
    None
}

/// Modified NPG: the vanilla step without the log-partition term.
pub fn npg_step(
    game: &RegularizedGame,
    theta: &ParamVector,
    nu: &ParamVector,
    eta: f64,
) -> Result<(ParamVector, ParamVector)> {
    check_dim(game.n_row(), theta.len())?;
    check_dim(game.n_col(), nu.len())?;
    let eta_tau = eta * game.tau;
    if !(eta > 0.0 && eta_tau < 1.0) {
        return Err(NpgError::InvalidStepsize {
            eta,
            bound: 1.0 / game.tau,
        });
    }
    let g = softmax(theta)?;
    let h = softmax(nu)?;
    let decay = 1.0 - eta_tau;
    let theta_next = relax(theta, decay, -eta, &game.row_costs(&h));
    let nu_next = relax(nu, decay, eta, &game.col_payoffs(&g));
    Ok((finite_or_diverged(theta_next)?, finite_or_diverged(nu_next)?))
}

/// Regularized multiplicative weights in policy space:
/// `g' ∝ g^{1−ητ} exp(−η Qh)`, `h' ∝ h^{1−ητ} exp(η Qᵀg)`.
pub fn mwu_policy_step(
    game: &RegularizedGame,
    g: &SimplexVector,
    h: &SimplexVector,
    eta: f64,
) -> Result<(SimplexVector, SimplexVector)> {
    check_dim(game.n_row(), g.len())?;
    check_dim(game.n_col(), h.len())?;
    for p in [g, h] {
        if let Some(index) = p.iter().position(|&x| x <= 0.0) {
            return Err(NpgError::SupportMismatch { index });
        }
    }
    let decay = 1.0 - eta * game.tau;
    let qh = game.row_costs(h.probs());
    let qg = game.col_payoffs(g.probs());
    let log_g = g.probs().map(f64::ln);
    let log_h = h.probs().map(f64::ln);
    let g_next = softmax_raw(&log_g.zip_map(&qh, |lg, c| decay * lg - eta * c));
    let h_next = softmax_raw(&log_h.zip_map(&qg, |lh, c| decay * lh + eta * c));
    Ok((
        SimplexVector::from_raw(g_next),
        SimplexVector::from_raw(h_next),
    ))
}

/// Main and extrapolation ("bar") iterates of the optimistic method.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimisticState {
    pub theta: ParamVector,
    pub nu: ParamVector,
    pub theta_bar: ParamVector,
    pub nu_bar: ParamVector,
}

impl OptimisticState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            theta: ParamVector::zeros(n),
            nu: ParamVector::zeros(m),
            theta_bar: ParamVector::zeros(n),
            nu_bar: ParamVector::zeros(m),
        }
    }

    /// State with bar iterates equal to the main iterates.
    pub fn at(theta: ParamVector, nu: ParamVector) -> Self {
        Self {
            theta_bar: theta.clone(),
            nu_bar: nu.clone(),
            theta,
            nu,
        }
    }

    fn max_abs(&self) -> f64 {
        [&self.theta, &self.nu, &self.theta_bar, &self.nu_bar]
            .iter()
            .map(|p| p.norm_inf())
            .fold(0.0, f64::max)
    }
}

/// One optimistic NPG step. The bar iterates are advanced with the previous
/// bar policies, then the main iterates with the new bar policies.
pub fn onpg_step(
    game: &RegularizedGame,
    state: &OptimisticState,
    eta: f64,
) -> Result<OptimisticState> {
    check_dim(game.n_row(), state.theta.len())?;
    check_dim(game.n_col(), state.nu.len())?;
    check_dim(game.n_row(), state.theta_bar.len())?;
    check_dim(game.n_col(), state.nu_bar.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(NpgError::InvalidStepsize { eta, bound: f64::INFINITY });
    }
    let decay = 1.0 - eta * game.tau;
    let g_bar = softmax(&state.theta_bar)?;
    let h_bar = softmax(&state.nu_bar)?;
    let theta_bar = finite_or_diverged(relax(&state.theta, decay, -eta, &game.row_costs(&h_bar)))?;
    let nu_bar = finite_or_diverged(relax(&state.nu, decay, eta, &game.col_payoffs(&g_bar)))?;
    let g_bar = softmax(&theta_bar)?;
    let h_bar = softmax(&nu_bar)?;
    let theta = finite_or_diverged(relax(&state.theta, decay, -eta, &game.row_costs(&h_bar)))?;
    let nu = finite_or_diverged(relax(&state.nu, decay, eta, &game.col_payoffs(&g_bar)))?;
    Ok(OptimisticState {
        theta,
        nu,
        theta_bar,
        nu_bar,
    })
}

/// Largest stepsize covered by the optimistic last-iterate guarantee:
/// `min{1/(2τ + 2‖Q‖), 1/(4‖Q‖)}`.
pub fn onpg_stepsize_bound(game: &RegularizedGame, norm: NormChoice) -> f64 {
    let q = game.q.norm(norm);
    (1.0 / (2.0 * game.tau + 2.0 * q)).min(1.0 / (4.0 * q))
}

/// Smoothness estimate `‖Q‖₂ + τ/δ̂` for the non-optimistic stepsize rule,
/// where `δ̂` is the smallest policy entry seen over a short probe run of
/// modified NPG from zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothnessEstimate {
    pub spectral_norm: f64,
    pub policy_floor: f64,
    pub lipschitz: f64,
}

pub const SMOOTHNESS_PROBE_ITERS: usize = 200;

pub fn estimate_smoothness(game: &RegularizedGame) -> Result<SmoothnessEstimate> {
    game.require_regularized()?;
    let probe_eta = onpg_stepsize_bound(game, NormChoice::MaxEntry).min(0.5 / game.tau);
    let mut theta = ParamVector::zeros(game.n_row());
    let mut nu = ParamVector::zeros(game.n_col());
    let mut floor = f64::INFINITY;
    for _ in 0..=SMOOTHNESS_PROBE_ITERS {
        floor = floor
            .min(softmax(&theta)?.min_entry())
            .min(softmax(&nu)?.min_entry());
        let (t, v) = npg_step(game, &theta, &nu, probe_eta)?;
        theta = t;
        nu = v;
    }
    let spectral_norm = game.q.spectral_norm();
    Ok(SmoothnessEstimate {
        spectral_norm,
        policy_floor: floor,
        lipschitz: spectral_norm + game.tau / floor,
    })
}

/// `τ / L²` for a smoothness constant `L`.
pub fn npg_stepsize_bound(game: &RegularizedGame, lipschitz: f64) -> f64 {
    game.tau / (lipschitz * lipschitz)
}

/// Unregularized exploitability `max_b [Qᵀg]_b − min_a [Qh]_a`.
pub fn duality_gap(q: &CostMatrix, g: &SimplexVector, h: &SimplexVector) -> f64 {
    let qg = q.entries().tr_mul(g.probs());
    let qh = q.entries() * h.probs();
    qg.max() - qh.min()
}

/// Regularized objective `gᵀQh − τH(g) + τH(h)`.
pub fn regularized_cost(q: &CostMatrix, g: &SimplexVector, h: &SimplexVector, tau: f64) -> f64 {
    bilinear(q.entries(), g.probs(), h.probs()) - tau * entropy(g) + tau * entropy(h)
}

pub(crate) fn bilinear(q: &DMatrix<f64>, g: &DVector<f64>, h: &DVector<f64>) -> f64 {
    g.dot(&(q * h))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub eta: f64,
    pub max_iters: usize,
    pub kl_tol: f64,
    /// `f64::INFINITY` stops on the KL criterion alone.
    pub param_tol: f64,
    pub optimistic: bool,
    /// Validate `eta` against the theorem stepsize before running.
    pub guaranteed: bool,
    pub norm: NormChoice,
    /// Smoothness constant for the non-optimistic rule; estimated when `None`.
    pub lipschitz: Option<f64>,
    pub blowup: f64,
    /// Keep every `record_every`-th iterate (plus the last one).
    pub record_every: usize,
}

impl SolverConfig {
    pub fn new(eta: f64, optimistic: bool) -> Self {
        Self {
            eta,
            max_iters: 100_000,
            kl_tol: 1e-14,
            param_tol: 1e-10,
            optimistic,
            guaranteed: false,
            norm: NormChoice::MaxEntry,
            lipschitz: None,
            blowup: DIVERGENCE_THRESHOLD,
            record_every: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(NpgError::InvalidStepsize { eta: self.eta, bound: f64::INFINITY });
        }
        if self.max_iters == 0 || self.record_every == 0 {
            return Err(NpgError::InvalidInput(
                "max_iters and record_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    /// KL target reached; no parameter tolerance was requested.
    ConvergedKl,
    /// Both the KL and parameter targets reached.
    ConvergedParam,
    MaxIters,
    /// A parameter became non-finite or exceeded the blow-up threshold.
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub theta: ParamVector,
    pub nu: ParamVector,
    pub g: SimplexVector,
    pub h: SimplexVector,
    /// `KL(g*‖g_t) + KL(h*‖h_t)`.
    pub kl_to_target: f64,
    /// KL from the target to the extrapolated policies (optimistic runs only).
    pub kl_bar_to_target: Option<f64>,
    /// `‖θ_t − θ*‖² + ‖ν_t − ν*‖²`.
    pub param_dist_sq: f64,
}

impl TraceRecord {
    pub fn param_dist(&self) -> f64 {
        self.param_dist_sq.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub status: Status,
    /// Number of steps taken.
    pub iterations: usize,
    pub targets: OracleSolution,
    pub final_state: OptimisticState,
    pub eta: f64,
    pub tau: f64,
    /// `KL(z*‖z₀)`.
    pub kl0: f64,
    /// `(1 + (1−ητ)²/(ητ)) · 4η²‖Q‖² · KL(z*‖z₀)`.
    pub c_const: f64,
    /// `D₀ + k·C/(ητ)` with `k = 2` (optimistic) or `k = 4` (modified NPG),
    /// `D₀` the initial squared parameter distance.
    pub v0: f64,
}

impl SolverTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("traces always hold the initial record")
    }

    /// Parameter Lyapunov value `D_t + k·C/(ητ)·(1 − ητ/2)^t`.
    pub fn lyapunov(&self, record: &TraceRecord, optimistic: bool) -> f64 {
        let et = self.eta * self.tau;
        let k = if optimistic { 2.0 } else { 4.0 };
        record.param_dist_sq + k * self.c_const / et * (1.0 - et / 2.0).powi(record.iter as i32)
    }
}

/// `C = (1 + (1−ητ)²/(ητ)) · 4η²‖Q‖² · KL(z*‖z₀)`.
pub fn theorem_constant(eta: f64, tau: f64, q_norm: f64, kl0: f64) -> f64 {
    let et = eta * tau;
    (1.0 + (1.0 - et).powi(2) / et) * 4.0 * eta * eta * q_norm * q_norm * kl0
}

/// Generic driver shared by the tabular and feature-based solvers.
pub(crate) struct RunSpec<'a> {
    pub cfg: &'a SolverConfig,
    pub targets: OracleSolution,
    pub q_norm: f64,
    pub tau: f64,
}

pub(crate) fn drive<Step, Pol>(
    spec: RunSpec<'_>,
    init: OptimisticState,
    mut step: Step,
    policy: Pol,
) -> Result<SolverTrace>
where
    Step: FnMut(&OptimisticState) -> Result<OptimisticState>,
    Pol: Fn(&ParamVector, bool) -> Result<SimplexVector>,
{
    let cfg = spec.cfg;
    let t = &spec.targets;
    let record = |iter: usize, s: &OptimisticState| -> Result<TraceRecord> {
        let g = policy(&s.theta, true)?;
        let h = policy(&s.nu, false)?;
        let kl_to_target = kl(&t.g_star, &g)? + kl(&t.h_star, &h)?;
        let kl_bar_to_target = if cfg.optimistic {
            let gb = policy(&s.theta_bar, true)?;
            let hb = policy(&s.nu_bar, false)?;
            Some(kl(&t.g_star, &gb)? + kl(&t.h_star, &hb)?)
        } else {
            None
        };
        Ok(TraceRecord {
            iter,
            param_dist_sq: s.theta.dist_sq(&t.theta_star) + s.nu.dist_sq(&t.nu_star),
            theta: s.theta.clone(),
            nu: s.nu.clone(),
            g,
            h,
            kl_to_target,
            kl_bar_to_target,
        })
    };

    let first = record(0, &init)?;
    let kl0 = first.kl_to_target;
    let c_const = theorem_constant(cfg.eta, spec.tau, spec.q_norm, kl0);
    let k = if cfg.optimistic { 2.0 } else { 4.0 };
    let v0 = first.param_dist_sq + k * c_const / (cfg.eta * spec.tau);

    let converged = |r: &TraceRecord| -> Option<Status> {
        if r.kl_to_target > cfg.kl_tol {
            return None;
        }
        if cfg.param_tol.is_infinite() {
            Some(Status::ConvergedKl)
        } else if r.param_dist() <= cfg.param_tol {
            Some(Status::ConvergedParam)
        } else {
            None
        }
    };

    let mut status = converged(&first).unwrap_or(Status::MaxIters);
    let mut records = vec![first];
    let mut state = init;
    let mut iterations = 0;
    if status == Status::MaxIters {
        for it in 1..=cfg.max_iters {
            let next = match step(&state) {
                Ok(s) => s,
                Err(NpgError::DivergedParameter { .. }) => {
                    status = Status::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            iterations = it;
            state = next;
            if state.max_abs() > cfg.blowup {
                status = Status::Diverged;
                break;
            }
            let rec = record(it, &state)?;
            let done = converged(&rec);
            if it % cfg.record_every == 0 || done.is_some() || it == cfg.max_iters {
                records.push(rec);
            }
            if let Some(s) = done {
                status = s;
                break;
            }
        }
    }
    Ok(SolverTrace {
        records,
        status,
        iterations,
        targets: spec.targets,
        final_state: state,
        eta: cfg.eta,
        tau: spec.tau,
        kl0,
        c_const,
        v0,
    })
}

/// Runs modified NPG or optimistic NPG from zero parameters against the
/// regularized equilibrium computed by [`oracles::qre_fixed_point`].
pub fn solve_regularized(game: &RegularizedGame, cfg: &SolverConfig) -> Result<SolverTrace> {
    game.require_regularized()?;
    cfg.validate()?;
    if cfg.guaranteed {
        let bound = if cfg.optimistic {
            onpg_stepsize_bound(game, cfg.norm)
        } else {
            let l = match cfg.lipschitz {
                Some(l) => l,
                None => estimate_smoothness(game)?.lipschitz,
            };
            npg_stepsize_bound(game, l)
        };
        if cfg.eta > bound {
            return Err(NpgError::InvalidStepsize { eta: cfg.eta, bound });
        }
    }
    let targets = oracles::qre_fixed_point(game.q(), game.tau(), None)?;
    let spec = RunSpec {
        cfg,
        targets,
        q_norm: game.q().norm(cfg.norm),
        tau: game.tau(),
    };
    let init = OptimisticState::zeros(game.n_row(), game.n_col());
    let eta = cfg.eta;
    let policy = |p: &ParamVector, _row: bool| softmax(p);
    if cfg.optimistic {
        drive(spec, init, |s| onpg_step(game, s, eta), policy)
    } else {
        drive(
            spec,
            init,
            |s| {
                let (theta, nu) = npg_step(game, &s.theta, &s.nu, eta)?;
                Ok(OptimisticState::at(theta, nu))
            },
            policy,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{random_cost_matrix, SeededRng};
    use proptest::prelude::*;

    fn game(rows: &[Vec<f64>], tau: f64) -> RegularizedGame {
        RegularizedGame::new(CostMatrix::from_rows(rows).unwrap(), tau).unwrap()
    }

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from_slice(v)
    }

    #[test]
    fn cost_matrix_norms() {
        let q = CostMatrix::from_rows(&[vec![1.0, -3.0], vec![2.0, 0.5]]).unwrap();
        assert_eq!(q.max_abs_entry(), 3.0);
        assert_eq!(q.inf_operator_norm(), 4.0);
        assert!(CostMatrix::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn vanilla_zero_cost_is_pure_shift() {
        let n = 4;
        let g = RegularizedGame::new(CostMatrix::zeros(n, n), 1.0).unwrap();
        let eta = 0.1;
        let (mut th, mut nu) = (ParamVector::zeros(n), ParamVector::zeros(n));
        let (t1, _) = vanilla_npg_step(&g, &th, &nu, eta).unwrap();
        for &x in t1.iter() {
            assert!((x - eta * ((n as f64).ln() - 1.0)).abs() < 1e-15);
        }
        for _ in 0..50 {
            (th, nu) = vanilla_npg_step(&g, &th, &nu, eta).unwrap();
            let p = softmax(&th).unwrap();
            assert!(p.max_abs_diff(&SimplexVector::uniform(n)) < 1e-15);
        }
    }

    #[test]
    fn vanilla_matches_transcription() {
        let mut rng = SeededRng::new(11);
        let q = random_cost_matrix(3, 3, &mut rng);
        let g = RegularizedGame::new(q.clone(), 0.2).unwrap();
        let (eta, tau) = (0.05, 0.2);
        let (t, v) = vanilla_npg_step(&g, &ParamVector::zeros(3), &ParamVector::zeros(3), eta).unwrap();
        // From zero parameters both policies are uniform and lse = ln 3.
        for a in 0..3 {
            let qh: f64 = (0..3).map(|b| q.entries()[(a, b)] / 3.0).sum();
            let qg: f64 = (0..3).map(|b| q.entries()[(b, a)] / 3.0).sum();
            let want_t = -eta * qh + eta * tau * (3f64.ln() - 1.0);
            let want_v = eta * qg + eta * tau * (3f64.ln() - 1.0);
            assert!((t[a] - want_t).abs() < 1e-15);
            assert!((v[a] - want_v).abs() < 1e-15);
        }
    }

    #[test]
    fn vanilla_diverges_on_single_column_instance() {
        let g = game(&[vec![-2.0], vec![-2.0]], 1.0);
        let t = vanilla_blowup_time(&g, 0.1, 100_000_000, DIVERGENCE_THRESHOLD).unwrap();
        // Both entries of θ coincide, so each step adds η(2 + τ(ln 2 − 1)).
        let predicted = DIVERGENCE_THRESHOLD / (0.1 * (1.0 + 2f64.ln()));
        assert!((t as f64 - predicted).abs() / predicted < 1e-3);
    }

    #[test]
    fn blowup_runner_agrees_with_step() {
        let g = game(&[vec![-2.0], vec![-2.0]], 1.0);
        let (mut th, mut nu) = (ParamVector::zeros(2), ParamVector::zeros(1));
        let mut t = 0;
        while th.norm_inf() <= 50.0 {
            (th, nu) = vanilla_npg_step(&g, &th, &nu, 1.0).unwrap();
            t += 1;
        }
        assert_eq!(vanilla_blowup_time(&g, 1.0, 1_000, 50.0), Some(t));
    }

    #[test]
    fn npg_rejects_large_steps() {
        let g = game(&[vec![1.0]], 0.5);
        let err = npg_step(&g, &pv(&[0.0]), &pv(&[0.0]), 2.0).unwrap_err();
        assert!(matches!(err, NpgError::InvalidStepsize { .. }));
    }

    #[test]
    fn npg_identity_converges_to_uniform_target() {
        let g = RegularizedGame::new(CostMatrix::identity(5), 0.5).unwrap();
        let (mut th, mut nu) = (ParamVector::zeros(5), ParamVector::zeros(5));
        for _ in 0..2000 {
            (th, nu) = npg_step(&g, &th, &nu, 0.2).unwrap();
        }
        for &x in th.iter() {
            assert!((x + 0.4).abs() < 1e-12);
        }
        for &x in nu.iter() {
            assert!((x - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn mwu_examples() {
        let g0 = RegularizedGame::new(CostMatrix::zeros(3, 3), 0.3).unwrap();
        let u = SimplexVector::uniform(3);
        let (a, b) = mwu_policy_step(&g0, &u, &u, 0.1).unwrap();
        assert!(a.max_abs_diff(&u) < 1e-15 && b.max_abs_diff(&u) < 1e-15);

        // Q = I₂, τ = 1, η = 0.1, g = h = [0.9, 0.1]:
        // g'(a) ∝ g(a)^0.9 e^{-0.1 h(a)}, h'(b) ∝ h(b)^0.9 e^{0.1 g(b)}.
        let g1 = RegularizedGame::new(CostMatrix::identity(2), 1.0).unwrap();
        let p = SimplexVector::from_slice(&[0.9, 0.1]).unwrap();
        let (gn, hn) = mwu_policy_step(&g1, &p, &p, 0.1).unwrap();
        let w = [0.9f64.powf(0.9) * (-0.09f64).exp(), 0.1f64.powf(0.9) * (-0.01f64).exp()];
        let s = w[0] + w[1];
        assert!((gn[0] - w[0] / s).abs() < 1e-15);
        let w = [0.9f64.powf(0.9) * 0.09f64.exp(), 0.1f64.powf(0.9) * 0.01f64.exp()];
        let s = w[0] + w[1];
        assert!((hn[1] - w[1] / s).abs() < 1e-15);

        let bad = SimplexVector::from_slice(&[1.0, 0.0]).unwrap();
        assert!(matches!(
            mwu_policy_step(&g1, &bad, &p, 0.1),
            Err(NpgError::SupportMismatch { index: 1 })
        ));
    }

    #[test]
    fn commuting_identity_on_seeded_tuples() {
        let mut rng = SeededRng::new(2024);
        for _ in 0..100 {
            let n = 2 + (rng.uniform() * 6.0) as usize;
            let m = 2 + (rng.uniform() * 6.0) as usize;
            let tau = rng.uniform_in(0.01, 2.0);
            let eta = rng.uniform_in(0.0, 0.99) / tau;
            let g = RegularizedGame::new(random_cost_matrix(n, m, &mut rng), tau).unwrap();
            let th = ParamVector::new(rng.symmetric_matrix(n, 1).column(0) * 5.0);
            let nu = ParamVector::new(rng.symmetric_matrix(m, 1).column(0) * 5.0);
            let (t1, v1) = npg_step(&g, &th, &nu, eta).unwrap();
            let (gp, hp) = mwu_policy_step(&g, &softmax(&th).unwrap(), &softmax(&nu).unwrap(), eta).unwrap();
            assert!(softmax(&t1).unwrap().max_abs_diff(&gp) < 1e-12);
            assert!(softmax(&v1).unwrap().max_abs_diff(&hp) < 1e-12);
        }
    }

    #[test]
    fn onpg_one_step_from_zeros_matches_transcription() {
        let mut rng = SeededRng::new(4);
        let q = random_cost_matrix(4, 4, &mut rng);
        let (tau, eta) = (0.3, 0.1);
        let g = RegularizedGame::new(q.clone(), tau).unwrap();
        let s = onpg_step(&g, &OptimisticState::zeros(4, 4), eta).unwrap();
        let e = q.entries();
        // From zeros the bar step sees uniform policies.
        let tb: Vec<f64> = (0..4).map(|a| -eta * (0..4).map(|b| e[(a, b)]).sum::<f64>() / 4.0).collect();
        let nb: Vec<f64> = (0..4).map(|b| eta * (0..4).map(|a| e[(a, b)]).sum::<f64>() / 4.0).collect();
        let softmax_vec = |v: &[f64]| {
            let z: f64 = v.iter().map(|x| x.exp()).sum();
            v.iter().map(|x| x.exp() / z).collect::<Vec<_>>()
        };
        let (gb, hb) = (softmax_vec(&tb), softmax_vec(&nb));
        for a in 0..4 {
            assert!((s.theta_bar[a] - tb[a]).abs() < 1e-15);
            assert!((s.nu_bar[a] - nb[a]).abs() < 1e-15);
            let qh: f64 = (0..4).map(|b| e[(a, b)] * hb[b]).sum();
            let qg: f64 = (0..4).map(|b| e[(b, a)] * gb[b]).sum();
            assert!((s.theta[a] + eta * qh).abs() < 1e-15);
            assert!((s.nu[a] - eta * qg).abs() < 1e-15);
        }
    }

    #[test]
    fn equilibrium_is_fixed_point_of_both_updates() {
        let mut rng = SeededRng::new(5);
        let q = random_cost_matrix(6, 6, &mut rng);
        let g = RegularizedGame::new(q.clone(), 0.25).unwrap();
        let sol = oracles::qre_fixed_point(&q, 0.25, None).unwrap();
        let (t, v) = npg_step(&g, &sol.theta_star, &sol.nu_star, 0.3).unwrap();
        assert!(t.dist_sq(&sol.theta_star).sqrt() < 1e-12);
        assert!(v.dist_sq(&sol.nu_star).sqrt() < 1e-12);
        let st = OptimisticState::at(sol.theta_star.clone(), sol.nu_star.clone());
        let next = onpg_step(&g, &st, 0.3).unwrap();
        assert!(next.theta.dist_sq(&sol.theta_star).sqrt() < 1e-12);
        assert!(next.nu_bar.dist_sq(&sol.nu_star).sqrt() < 1e-12);
    }

    #[test]
    fn onpg_identity_respects_theorem_bound() {
        let g = RegularizedGame::new(CostMatrix::identity(5), 0.5).unwrap();
        let eta = onpg_stepsize_bound(&g, NormChoice::MaxEntry);
        assert_eq!(eta, 0.25);
        let mut cfg = SolverConfig::new(eta, true);
        cfg.guaranteed = true;
        cfg.param_tol = 1e-12;
        let trace = solve_regularized(&g, &cfg).unwrap();
        assert_eq!(trace.status, Status::ConvergedParam);
        for &x in trace.targets.theta_star.iter() {
            assert!((x + 0.4).abs() < 1e-14);
        }
        let et = eta * 0.5;
        for r in &trace.records {
            assert!(r.param_dist_sq <= (1.0 - et / 2.0).powi(r.iter as i32) * trace.v0 * (1.0 + 1e-12));
        }
    }

    #[test]
    fn guaranteed_path_rejects_large_steps() {
        let g = RegularizedGame::new(CostMatrix::identity(5), 0.5).unwrap();
        let mut cfg = SolverConfig::new(0.3, true);
        cfg.guaranteed = true;
        assert!(matches!(
            solve_regularized(&g, &cfg),
            Err(NpgError::InvalidStepsize { .. })
        ));
        cfg.guaranteed = false;
        assert!(solve_regularized(&g, &cfg).is_ok());
    }

    #[test]
    fn zero_cost_converges_to_zero_parameters() {
        let g = RegularizedGame::new(CostMatrix::zeros(3, 3), 1.0).unwrap();
        let trace = solve_regularized(&g, &SolverConfig::new(0.3, false)).unwrap();
        assert_eq!(trace.status, Status::ConvergedParam);
        assert!(trace.targets.theta_star.norm_inf() == 0.0);
        assert_eq!(trace.iterations, 0);
    }

    #[test]
    fn duality_gap_examples() {
        let q = CostMatrix::identity(2);
        let u = SimplexVector::uniform(2);
        assert_eq!(duality_gap(&q, &u, &u), 0.0);
        // Pure saddle at (row 0, column 0).
        let q = CostMatrix::from_rows(&[vec![1.0, 0.5], vec![2.0, 3.0]]).unwrap();
        let e0 = SimplexVector::from_slice(&[1.0, 0.0]).unwrap();
        assert_eq!(duality_gap(&q, &e0, &e0), 0.0);
        assert!(duality_gap(&q, &u, &u) > 0.0);
    }

    #[test]
    fn npg_policy_floor_persists() {
        let mut rng = SeededRng::new(8);
        let q = random_cost_matrix(8, 8, &mut rng);
        let g = RegularizedGame::new(q, 0.1).unwrap();
        let eta = 0.5;
        let (mut th, mut nu) = (ParamVector::zeros(8), ParamVector::zeros(8));
        let mut floor = f64::INFINITY;
        for t in 0..3000 {
            let m = softmax(&th).unwrap().min_entry().min(softmax(&nu).unwrap().min_entry());
            if t < 50 {
                floor = floor.min(m);
            } else {
                assert!(m > 0.0);
            }
            (th, nu) = npg_step(&g, &th, &nu, eta).unwrap();
        }
        assert!(floor > 0.0);
    }

    proptest! {
        #[test]
        fn gap_is_nonnegative(seed in 0u64..10_000, n in 1usize..6, m in 1usize..6) {
            let mut rng = SeededRng::new(seed);
            let q = random_cost_matrix(n, m, &mut rng);
            let g = SimplexVector::from_slice(&rng.dirichlet(n)).unwrap();
            let h = SimplexVector::from_slice(&rng.dirichlet(m)).unwrap();
            prop_assert!(duality_gap(&q, &g, &h) >= -1e-15);
        }

        #[test]
        fn commuting_identity(seed in 0u64..10_000) {
            let mut rng = SeededRng::new(seed);
            let q = random_cost_matrix(4, 3, &mut rng);
            let tau = rng.uniform_in(0.05, 1.0);
            let eta = rng.uniform_in(0.01, 0.99) / tau;
            let g = RegularizedGame::new(q, tau).unwrap();
            let th = ParamVector::new(rng.symmetric_matrix(4, 1).column(0) * 3.0);
            let nu = ParamVector::new(rng.symmetric_matrix(3, 1).column(0) * 3.0);
            let (t1, v1) = npg_step(&g, &th, &nu, eta).unwrap();
            let (gp, hp) = mwu_policy_step(&g, &softmax(&th).unwrap(), &softmax(&nu).unwrap(), eta).unwrap();
            prop_assert!(softmax(&t1).unwrap().max_abs_diff(&gp) < 1e-12);
            prop_assert!(softmax(&v1).unwrap().max_abs_diff(&hp) < 1e-12);
        }
    }
}
