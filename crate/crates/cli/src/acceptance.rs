//! The acceptance suite: eleven numbered checks, each returning a report with
//! a pass flag and a one-line summary of the measured quantities.

use std::fmt;

use nalgebra::DMatrix;
use npg_core::fa::{log_linear_policy, onpg_fa_step, solve_regularized_fa, surrogate_game};
use npg_core::instances::{
    first_action_features, linear_cyclic_game, random_cost_matrix, random_feature_map,
    random_markov, uniform_transition_markov, SeededRng,
};
use npg_core::markov::{
    soft_bellman_apply, solve_markov_fa, solve_markov_tabular, InnerSolve, MarkovConfig,
    MarkovFeatureMap, MarkovRun, QTensor,
};
use npg_core::matrix_game::{
    duality_gap, estimate_smoothness, npg_step, npg_stepsize_bound, onpg_step,
    onpg_stepsize_bound, solve_regularized, theorem_constant, vanilla_blowup_time,
    vanilla_npg_step, NormChoice,
};
use npg_core::monotone::{
    solve_monotone, stepsize_bound, zero_sum_as_monotone, Method, MonotoneConfig, MonotoneGameSpec,
};
use npg_core::oracles::{
    monotone_residual, pp_reference_monotone, qre_fixed_point, qre_residual, MAX_RESIDUAL,
    TARGET_RESIDUAL,
};
use npg_core::simplex::{kl_logits, softmax};
use npg_core::{
    CostMatrix, FeatureMap, OptimisticState, ParamVector, PlayerFeatures, RegularizedGame,
    SimplexVector, SolverConfig,
};
use rayon::prelude::*;

/// Relative slack granted to every per-step inequality for rounding.
pub const RATE_SLACK: f64 = 1e-6;
/// Per-step checks stop once the tracked KL is this small; below it the KL
/// evaluation itself is dominated by rounding.
pub const KL_FLOOR: f64 = 1e-11;

pub const C1_ETAS: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
pub const C1_THRESHOLD: f64 = 1e6;
/// Iteration budget is `C1_BUDGET_SCALE / η`.
pub const C1_BUDGET_SCALE: f64 = 1e7;

pub const C2_THETA_MAX: f64 = 80.0;
pub const C2_TOL: f64 = 1e-8;

pub const C3_GAMES: u64 = 20;
pub const C3_SIZE: usize = 10;
pub const C3_TAU: f64 = 0.2;
pub const C3_MAX_ITERS: usize = 3_000_000;

pub const C4_SLOPE_SLACK: f64 = 1e-3;
pub const C4_BURN_IN: f64 = 0.1;
/// The fit window ends once `D_t` falls below this value.
pub const C4_DIST_FLOOR: f64 = 1e-20;
pub const C4_MAX_ITERS: usize = 200_000;

pub const C5_EPS: f64 = 0.05;
pub const C5_SIZE: usize = 5;
pub const C5_GAMES: u64 = 10;

pub const C6_GAMES: u64 = 10;
pub const C6_N: usize = 8;
pub const C6_D: usize = 3;
pub const C6_TAU: f64 = 0.1;
pub const C6_STEPS: usize = 2_000;
pub const C6_TRAJECTORY_TOL: f64 = 1e-10;
pub const C6_LIMIT_TOL: f64 = 1e-8;
pub const C6_LIMIT_ITERS: usize = 20_000;

pub const C7_TAU: f64 = 0.1;
pub const C7_ITERS: usize = 20_000;
pub const C7_TOL: f64 = 1e-8;
/// Fraction of the strict stepsize bound used by every method.
pub const C7_ETA_FRACTION: f64 = 0.99;

pub const C8_SEED: u64 = 2024;
/// Smallest budgets found to reach the tolerance on the criterion instance.
pub const C8_BASELINE: (usize, usize) = (60, 2_000);
pub const C8_TOL: f64 = 1e-3;

pub const C9_SEED: u64 = 2024;
pub const C9_OUTER: usize = 60;
pub const C9_INNER: usize = 100;
pub const C9_TOL: f64 = 1e-4;
pub const C9_MONOTONE_SLACK: f64 = 1e-12;
pub const C9_MATCH_TOL: f64 = 1e-12;

pub const C10_PAIRS: u64 = 50;
pub const C10_SLACK: f64 = 1e-9;

pub const C11_GAMES: u64 = 20;
pub const C11_AGREEMENT: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{verdict}] {:02} {}: {}", self.id, self.name, self.detail)
    }
}

type Check = fn() -> npg_core::Result<(bool, String)>;

pub const CRITERIA: [(u8, &str, Check); 11] = [
    (1, "vanilla NPG divergence", vanilla_divergence),
    (2, "clipping counterexample", clipping),
    (3, "modified NPG rates", npg_rates),
    (4, "optimistic NPG rate", onpg_rate),
    (5, "small-tau schedule", small_tau_schedule),
    (6, "feature equivalence", feature_equivalence),
    (7, "monotone methods agree", monotone_agreement),
    (8, "Markov tabular", markov_tabular),
    (9, "Markov features", markov_features),
    (10, "soft Bellman contraction", bellman_contraction),
    (11, "oracle integrity", oracle_integrity),
];

pub fn run_criterion(id: u8) -> CriterionReport {
    let (id, name, check) = CRITERIA
        .iter()
        .copied()
        .find(|c| c.0 == id)
        .unwrap_or_else(|| panic!("no criterion {id}"));
    let (passed, detail) = match check() {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionReport { id, name, passed, detail }
}

pub fn run_all() -> Vec<CriterionReport> {
    CRITERIA.iter().map(|c| run_criterion(c.0)).collect()
}

fn game(q: CostMatrix, tau: f64) -> npg_core::Result<RegularizedGame> {
    RegularizedGame::new(q, tau)
}

fn seeded_game(n: usize, m: usize, tau: f64, seed: u64) -> npg_core::Result<RegularizedGame> {
    game(random_cost_matrix(n, m, &mut SeededRng::new(seed)), tau)
}

fn policies(s: &OptimisticState) -> npg_core::Result<[SimplexVector; 2]> {
    Ok([softmax(&s.theta)?, softmax(&s.nu)?])
}

fn vanilla_divergence() -> npg_core::Result<(bool, String)> {
    let g = game(CostMatrix::from_rows(&[vec![-2.0], vec![-2.0]])?, 1.0)?;
    let times: Vec<(f64, u64, Option<u64>)> = C1_ETAS
        .par_iter()
        .map(|&eta| {
            let budget = (C1_BUDGET_SCALE / eta).round() as u64;
            (eta, budget, vanilla_blowup_time(&g, eta, budget, C1_THRESHOLD))
        })
        .collect();
    let passed = times.iter().all(|(_, b, t)| matches!(t, Some(t) if t <= b));
    let detail = times
        .iter()
        .map(|(eta, b, t)| match t {
            Some(t) => format!("eta={eta:e}: {t} of {b}"),
            None => format!("eta={eta:e}: none within {b}"),
        })
        .collect::<Vec<_>>()
        .join(", ");
    Ok((passed, format!("|theta|_inf > {C1_THRESHOLD:e} at {detail}")))
}

/// Single-player maximization of `qᵀg + τH(g)` with `q = [−2, −3]`, posed as
/// a row player minimizing the cost `−q` against a one-action opponent.
fn clipping() -> npg_core::Result<(bool, String)> {
    let g = game(CostMatrix::from_rows(&[vec![2.0], vec![3.0]])?, 1.0)?;
    let target = ParamVector::from_slice(&[-2.0, -3.0]);

    let (mut theta, mut nu) = (ParamVector::zeros(2), ParamVector::zeros(1));
    for _ in 0..200 {
        (theta, nu) = npg_step(&g, &theta, &nu, 0.5)?;
    }
    let modified_err = (theta.values() - target.values()).amax();

    let clip = |p: ParamVector| {
        ParamVector::new(p.into_inner().map(|x| x.clamp(-C2_THETA_MAX, C2_THETA_MAX)))
    };
    let (mut theta, mut nu) = (ParamVector::zeros(2), ParamVector::zeros(1));
    for _ in 0..10_000 {
        let (t, v) = vanilla_npg_step(&g, &theta, &nu, 0.1)?;
        (theta, nu) = (clip(t), clip(v));
    }
    let vertex = theta.iter().all(|&x| x.abs() == C2_THETA_MAX) && theta[0] == theta[1];
    let policy = softmax(&theta)?;
    let g_star = softmax(&target)?;
    let uniform = policy.max_abs_diff(&SimplexVector::uniform(2)) < 1e-15;
    let wrong = policy.max_abs_diff(&g_star) > 0.1;
    let passed = modified_err <= C2_TOL && vertex && uniform && wrong;
    Ok((
        passed,
        format!(
            "modified error {modified_err:.2e}; clipped vanilla ends at [{}, {}] with policy [{:.3}, {:.3}] vs g* [{:.3}, {:.3}]",
            theta[0], theta[1], policy[0], policy[1], g_star[0], g_star[1]
        ),
    ))
}

struct RateCheck {
    kl_ratio: f64,
    /// KL value at which the worst KL ratio occurred.
    kl_at_worst: f64,
    lyapunov_ratio: f64,
    kl_bound: f64,
    lyapunov_bound: f64,
    iters: usize,
}

fn npg_rate_check(seed: u64) -> npg_core::Result<RateCheck> {
    let g = seeded_game(C3_SIZE, C3_SIZE, C3_TAU, seed)?;
    let lipschitz = estimate_smoothness(&g)?.lipschitz;
    let eta = npg_stepsize_bound(&g, lipschitz);
    let et = eta * C3_TAU;
    let sol = qre_fixed_point(g.q(), C3_TAU, None)?;
    let (mut theta, mut nu) = (ParamVector::zeros(C3_SIZE), ParamVector::zeros(C3_SIZE));
    let dist = |t: &ParamVector, v: &ParamVector| t.dist_sq(&sol.theta_star) + v.dist_sq(&sol.nu_star);
    let kl_of = |t: &ParamVector, v: &ParamVector| -> npg_core::Result<f64> {
        Ok(kl_logits(&sol.theta_star, t)? + kl_logits(&sol.nu_star, v)?)
    };
    let kl0 = kl_of(&theta, &nu)?;
    let c = theorem_constant(eta, C3_TAU, g.q().norm(NormChoice::MaxEntry), kl0);
    let lyapunov = |d: f64, t: usize| d + 4.0 * c / et * (1.0 - et / 2.0).powi(t as i32);
    let mut kl_t = kl0;
    let mut v_t = lyapunov(dist(&theta, &nu), 0);
    let mut worst_kl: f64 = 0.0;
    let mut kl_at_worst = kl0;
    let mut worst_v: f64 = 0.0;
    let mut iters = 0;
    for t in 1..=C3_MAX_ITERS {
        (theta, nu) = npg_step(&g, &theta, &nu, eta)?;
        let kl_next = kl_of(&theta, &nu)?;
        let v_next = lyapunov(dist(&theta, &nu), t);
        if kl_next / kl_t > worst_kl {
            worst_kl = kl_next / kl_t;
            kl_at_worst = kl_t;
        }
        worst_v = worst_v.max(v_next / v_t);
        iters = t;
        kl_t = kl_next;
        v_t = v_next;
        if kl_t < KL_FLOOR {
            break;
        }
    }
    Ok(RateCheck {
        kl_ratio: worst_kl,
        kl_at_worst,
        lyapunov_ratio: worst_v,
        kl_bound: (1.0 - et / 2.0) * (1.0 + RATE_SLACK),
        lyapunov_bound: (1.0 - et / 4.0) * (1.0 + RATE_SLACK),
        iters,
    })
}

fn npg_rates() -> npg_core::Result<(bool, String)> {
    let checks = (0..C3_GAMES).into_par_iter().map(npg_rate_check).collect::<npg_core::Result<Vec<_>>>()?;
    let kl_ok = checks.iter().all(|c| c.kl_ratio <= c.kl_bound);
    let v_ok = checks.iter().all(|c| c.lyapunov_ratio <= c.lyapunov_bound);
    let tightest = checks
        .iter()
        .max_by(|a, b| (a.kl_ratio / a.kl_bound).total_cmp(&(b.kl_ratio / b.kl_bound)))
        .expect("non-empty battery");
    let margin_kl = tightest.kl_ratio / tightest.kl_bound;
    let kl_at = tightest.kl_at_worst;
    let margin_v = checks.iter().map(|c| c.lyapunov_ratio / c.lyapunov_bound).fold(0.0, f64::max);
    let steps: usize = checks.iter().map(|c| c.iters).sum();
    Ok((
        kl_ok && v_ok,
        format!(
            "{C3_GAMES} games, {steps} steps; worst KL ratio / bound {margin_kl:.6} (at KL {kl_at:.2e}), worst Lyapunov ratio / bound {margin_v:.6}"
        ),
    ))
}

/// Least-squares slope of `y` against its index offset by `start`.
fn fitted_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in y.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (v - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn onpg_slope(seed: u64) -> npg_core::Result<(f64, f64, usize)> {
    let g = seeded_game(C3_SIZE, C3_SIZE, C3_TAU, seed)?;
    let eta = onpg_stepsize_bound(&g, NormChoice::MaxEntry);
    let sol = qre_fixed_point(g.q(), C3_TAU, None)?;
    let mut s = OptimisticState::zeros(C3_SIZE, C3_SIZE);
    let mut log_d = Vec::new();
    for _ in 0..C4_MAX_ITERS {
        s = onpg_step(&g, &s, eta)?;
        let d = s.theta.dist_sq(&sol.theta_star) + s.nu.dist_sq(&sol.nu_star);
        if d < C4_DIST_FLOOR {
            break;
        }
        log_d.push(d.ln());
    }
    let burn = (C4_BURN_IN * log_d.len() as f64).ceil() as usize;
    let slope = fitted_slope(&log_d[burn..]);
    Ok((slope, (1.0 - eta * C3_TAU / 2.0).ln() + C4_SLOPE_SLACK, log_d.len()))
}

fn onpg_rate() -> npg_core::Result<(bool, String)> {
    let fits = (0..C3_GAMES).into_par_iter().map(onpg_slope).collect::<npg_core::Result<Vec<_>>>()?;
    let passed = fits.iter().all(|(s, b, _)| s <= b);
    let (s, b, len) = fits
        .iter()
        .copied()
        .max_by(|x, y| (x.0 - x.1).total_cmp(&(y.0 - y.1)))
        .expect("non-empty battery");
    Ok((
        passed,
        format!("{C3_GAMES} games; tightest fit slope {s:.4e} vs bound {b:.4e} over {len} steps"),
    ))
}

fn small_tau_schedule() -> npg_core::Result<(bool, String)> {
    let tau = C5_EPS / (8.0 * (C5_SIZE as f64).ln());
    let gaps = (0..C5_GAMES)
        .into_par_iter()
        .map(|seed| {
            let g = seeded_game(C5_SIZE, C5_SIZE, tau, seed)?;
            let eta = onpg_stepsize_bound(&g, NormChoice::MaxEntry);
            let budget = ((1.0 / C5_EPS).ln() / (eta * tau)).ceil() as usize;
            let mut s = OptimisticState::zeros(C5_SIZE, C5_SIZE);
            for _ in 0..budget {
                s = onpg_step(&g, &s, eta)?;
            }
            let [pg, ph] = policies(&s)?;
            Ok((duality_gap(g.q(), &pg, &ph), budget))
        })
        .collect::<npg_core::Result<Vec<_>>>()?;
    let worst = gaps.iter().map(|g| g.0).fold(0.0, f64::max);
    let max_budget = gaps.iter().map(|g| g.1).max().unwrap_or(0);
    Ok((
        worst <= C5_EPS,
        format!("tau={tau:.5}, budgets up to {max_budget}; worst duality gap {worst:.4e} (eps {C5_EPS})"),
    ))
}

fn fa_identity_trajectory(seed: u64) -> npg_core::Result<f64> {
    let g = seeded_game(C6_N, C6_N, C6_TAU, seed)?;
    let fmap = FeatureMap::identity(C6_D, C6_N)?;
    let feats = PlayerFeatures::shared(fmap.clone());
    let sur = surrogate_game(&g, &feats)?;
    let eta = onpg_stepsize_bound(&sur, NormChoice::MaxEntry);
    let mut fa = OptimisticState::zeros(C6_D, C6_D);
    let mut tab = OptimisticState::zeros(C6_N, C6_N);
    let mut worst: f64 = 0.0;
    for _ in 0..C6_STEPS {
        fa = onpg_fa_step(&g, &feats, &fa, eta)?;
        tab = onpg_step(&sur, &tab, eta)?;
        let [tg, th] = policies(&tab)?;
        worst = worst
            .max(log_linear_policy(&fmap, &fa.theta)?.max_abs_diff(&tg))
            .max(log_linear_policy(&fmap, &fa.nu)?.max_abs_diff(&th));
    }
    Ok(worst)
}

fn fa_random_limits(seed: u64) -> npg_core::Result<f64> {
    let mut rng = SeededRng::new(seed);
    let g = game(random_cost_matrix(C6_N, C6_N, &mut rng), C6_TAU)?;
    let feats = PlayerFeatures::shared(random_feature_map(C6_D, C6_N, &mut rng)?);
    let sur = surrogate_game(&g, &feats)?;
    let cfg = |eta| SolverConfig {
        max_iters: C6_LIMIT_ITERS,
        kl_tol: -1.0,
        param_tol: f64::INFINITY,
        record_every: C6_LIMIT_ITERS,
        ..SolverConfig::new(eta, true)
    };
    let fa = solve_regularized_fa(&g, &feats, &cfg(onpg_stepsize_bound(&sur, NormChoice::MaxEntry)))?;
    let tab = solve_regularized(&sur, &cfg(onpg_stepsize_bound(&sur, NormChoice::MaxEntry)))?;
    let (a, b) = (fa.last(), tab.last());
    Ok(a.g.max_abs_diff(&b.g).max(a.h.max_abs_diff(&b.h)))
}

fn feature_equivalence() -> npg_core::Result<(bool, String)> {
    let traj = (0..C6_GAMES)
        .into_par_iter()
        .map(fa_identity_trajectory)
        .collect::<npg_core::Result<Vec<_>>>()?;
    let limits = (0..C6_GAMES)
        .into_par_iter()
        .map(|s| fa_random_limits(100 + s))
        .collect::<npg_core::Result<Vec<_>>>()?;
    let worst_traj = traj.iter().copied().fold(0.0, f64::max);
    let worst_limit = limits.iter().copied().fold(0.0, f64::max);
    Ok((
        worst_traj <= C6_TRAJECTORY_TOL && worst_limit <= C6_LIMIT_TOL,
        format!(
            "M = I: worst per-step policy gap {worst_traj:.2e} over {C6_STEPS} steps; random M: worst limit gap {worst_limit:.2e}"
        ),
    ))
}

struct MonotoneCheck {
    name: String,
    disagreement: f64,
    bound_ratio: f64,
}

fn monotone_case(name: String, spec: &MonotoneGameSpec) -> npg_core::Result<MonotoneCheck> {
    let eta = C7_ETA_FRACTION
        * Method::ALL.iter().map(|&m| stepsize_bound(spec, m)).fold(f64::INFINITY, f64::min);
    let cfg = MonotoneConfig { max_iters: C7_ITERS, kl_tol: -1.0, ..MonotoneConfig::new(eta) };
    let traces = Method::ALL
        .iter()
        .map(|&m| solve_monotone(spec, &cfg, m))
        .collect::<npg_core::Result<Vec<_>>>()?;
    let finals: Vec<&[SimplexVector]> = traces.iter().map(|t| t.records.last().unwrap().policies.as_slice()).collect();
    let mut disagreement: f64 = 0.0;
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            for (a, b) in finals[i].iter().zip(finals[j]) {
                disagreement = disagreement.max(a.max_abs_diff(b));
            }
        }
    }
    let onpg = &traces[0];
    let et = eta * spec.tau();
    let mut bound_ratio: f64 = 0.0;
    for w in onpg.records.windows(2) {
        let bound = (1.0 - et).powi(w[0].iter as i32) * 2.0 * onpg.kl0;
        if bound < KL_FLOOR {
            break;
        }
        let lhs = w[0].kl_to_target.max(w[1].kl_bar_to_target);
        bound_ratio = bound_ratio.max(lhs / (bound * (1.0 + RATE_SLACK)));
    }
    Ok(MonotoneCheck { name, disagreement, bound_ratio })
}

fn monotone_agreement() -> npg_core::Result<(bool, String)> {
    let mut specs: Vec<(String, MonotoneGameSpec)> = (0..3)
        .map(|s| (format!("wrapped#{s}"), zero_sum_as_monotone(&random_cost_matrix(4, 4, &mut SeededRng::new(s)), C7_TAU)))
        .collect();
    specs.push(("cyclic-3".into(), linear_cyclic_game(3, 3, 0.5, C7_TAU, &mut SeededRng::new(7))?));
    let checks = specs
        .par_iter()
        .map(|(n, s)| monotone_case(n.clone(), s))
        .collect::<npg_core::Result<Vec<_>>>()?;
    let passed = checks.iter().all(|c| c.disagreement <= C7_TOL && c.bound_ratio <= 1.0);
    let detail = checks
        .iter()
        .map(|c| format!("{}: spread {:.1e}, bound use {:.3}", c.name, c.disagreement, c.bound_ratio))
        .collect::<Vec<_>>()
        .join("; ");
    Ok((passed, detail))
}

fn final_errors(run: &MarkovRun) -> (f64, f64) {
    let r = run.trace.records.last().expect("initial record");
    (r.q_error, r.param_dist)
}

fn markov_tabular() -> npg_core::Result<(bool, String)> {
    let spec = random_markov(5, 4, 0.8, 0.1, &mut SeededRng::new(C8_SEED))?;
    let cfg = MarkovConfig::default();
    let (outer, inner) = C8_BASELINE;
    let base = final_errors(&solve_markov_tabular(&spec, outer, inner, &cfg)?);
    let full = final_errors(&solve_markov_tabular(&spec, 2 * outer, 2 * inner, &cfg)?);
    let ok = |e: (f64, f64)| e.0 <= C8_TOL && e.1 <= C8_TOL;
    Ok((
        ok(base) && ok(full),
        format!(
            "baseline ({outer}, {inner}): Q error {:.2e}, param error {:.2e}; doubled: Q error {:.2e}, param error {:.2e}",
            base.0, base.1, full.0, full.1
        ),
    ))
}

fn decreasing_after_burn_in(xs: &[f64]) -> bool {
    let burn = (xs.len() as f64 * 0.1).ceil() as usize;
    xs[burn..].windows(2).all(|w| w[1] <= w[0] + C9_MONOTONE_SLACK)
}

fn markov_features() -> npg_core::Result<(bool, String)> {
    let (s, n) = (10, 10);
    let spec = uniform_transition_markov(s, n, 0.8, 0.1, &mut SeededRng::new(C9_SEED))?;
    let cfg = MarkovConfig { warm_start: true, ..MarkovConfig::default() };
    let fa = solve_markov_fa(&spec, &first_action_features(s, n)?, C9_OUTER, C9_INNER, &cfg)?;
    let q: Vec<f64> = fa.trace.records.iter().map(|r| r.q_error).collect();
    let d: Vec<f64> = fa.trace.records.iter().map(|r| r.param_dist).collect();
    let (qe, de) = final_errors(&fa);
    let monotone = decreasing_after_burn_in(&q) && decreasing_after_burn_in(&d);

    let ident = solve_markov_fa(&spec, &MarkovFeatureMap::tabular(s, n)?, C9_OUTER, C9_INNER, &cfg)?;
    let tab = solve_markov_tabular(&spec, C9_OUTER, C9_INNER, &cfg)?;
    let mismatch = ident.q.sup_dist(&tab.q).max(ident.params.distance(&tab.params));
    Ok((
        monotone && qe < C9_TOL && de < C9_TOL && mismatch <= C9_MATCH_TOL,
        format!(
            "Q error {qe:.2e}, param error {de:.2e}, monotone after burn-in: {monotone}; identity features vs tabular {mismatch:.1e}"
        ),
    ))
}

fn bellman_contraction() -> npg_core::Result<(bool, String)> {
    let gamma = 0.8;
    let results = (0..C10_PAIRS)
        .into_par_iter()
        .map(|k| {
            let mut rng = SeededRng::new(5_000 + k);
            let spec = random_markov(3, 3, gamma, 0.1, &mut rng)?;
            let scale = 1.0 / (1.0 - gamma);
            let mut tensor = || QTensor {
                q: (0..3).map(|_| DMatrix::from_fn(3, 3, |_, _| scale * rng.uniform())).collect(),
                v: vec![0.0; 3],
            };
            let (q1, q2) = (tensor(), tensor());
            let (t1, _) = soft_bellman_apply(&spec, &q1, None, &InnerSolve::Exact, false)?;
            let (t2, _) = soft_bellman_apply(&spec, &q2, None, &InnerSolve::Exact, false)?;
            Ok((t1.sup_dist(&t2), gamma * q1.sup_dist(&q2)))
        })
        .collect::<npg_core::Result<Vec<_>>>()?;
    let passed = results.iter().all(|(l, r)| *l <= r + C10_SLACK);
    let worst = results.iter().map(|(l, r)| l / r).fold(0.0, f64::max);
    Ok((passed, format!("{C10_PAIRS} pairs; largest ‖TQ1 − TQ2‖ / γ‖Q1 − Q2‖ = {worst:.4}")))
}

fn oracle_integrity() -> npg_core::Result<(bool, String)> {
    let tau = 0.2;
    let rows = (0..C11_GAMES)
        .into_par_iter()
        .map(|seed| {
            let mut rng = SeededRng::new(9_000 + seed);
            let q = random_cost_matrix(5, 5, &mut rng);
            let sol = qre_fixed_point(&q, tau, None)?;
            let r_qre = qre_residual(q.entries(), tau, &sol.g_star, &sol.h_star);

            let feats = PlayerFeatures::shared(random_feature_map(3, 5, &mut rng)?);
            let restricted = qre_fixed_point(&q, tau, Some(&feats))?;
            let qe = feats.row.psi().tr_mul(q.entries()) * feats.col.psi();
            let r_restricted = qre_residual(&qe, tau, &restricted.g_star, &restricted.h_star);

            let spec = zero_sum_as_monotone(&q, tau);
            let pp = pp_reference_monotone(&spec, TARGET_RESIDUAL)?;
            let z: Vec<_> = pp.policies.iter().map(|p| p.probs().clone()).collect();
            let r_pp = monotone_residual(&spec, &z);
            let agree = pp.policies[0].max_abs_diff(&sol.g_star).max(pp.policies[1].max_abs_diff(&sol.h_star));
            Ok((r_qre.max(r_restricted).max(r_pp), agree))
        })
        .collect::<npg_core::Result<Vec<(f64, f64)>>>()?;

    let spec = random_markov(4, 3, 0.8, 0.1, &mut SeededRng::new(9_999))?;
    let oracle = npg_core::markov::in_class_ne_oracle(&spec, None, 1e-12)?;
    let mut r_markov: f64 = 0.0;
    for s in 0..spec.n_states() {
        r_markov = r_markov.max(qre_residual(&oracle.q.q[s], spec.tau(), &oracle.g[s], &oracle.h[s]));
    }
    let r_worst = rows.iter().map(|r| r.0).fold(r_markov, f64::max);
    let agree = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((
        r_worst <= MAX_RESIDUAL && agree <= C11_AGREEMENT,
        format!("worst residual {r_worst:.2e} (QRE, restricted QRE, PP, soft VI); QRE vs PP {agree:.2e}"),
    ))
}
