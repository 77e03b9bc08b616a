//! High-accuracy reference equilibria.
//!
//! Nothing here calls the update rules under test. Regularized matrix-game
//! equilibria come from damped best-response iteration polished by Newton's
//! method on the logit fixed-point equations; monotone-game equilibria come
//! from a policy-space proximal point loop.

use nalgebra::{DMatrix, DVector};

use crate::error::{NpgError, Result};
use crate::fa::PlayerFeatures;
use crate::matrix_game::CostMatrix;
use crate::monotone::MonotoneGameSpec;
use crate::simplex::{softmax_raw, ParamVector, SimplexVector};

pub use crate::markov::in_class_ne_oracle as soft_value_iteration_oracle;

/// Residual the oracles aim for.
pub const TARGET_RESIDUAL: f64 = 1e-13;
/// Residual above which an oracle reports failure.
pub const MAX_RESIDUAL: f64 = 1e-12;

const DAMPED_ITERS: usize = 5_000;
const NEWTON_ITERS: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleMethod {
    DampedIteration,
    NewtonPolish,
    Continuation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    pub g_star: SimplexVector,
    pub h_star: SimplexVector,
    pub theta_star: ParamVector,
    pub nu_star: ParamVector,
    /// `max(‖g − softmax(−Q̃h/τ)‖∞, ‖h − softmax(Q̃ᵀg/τ)‖∞)` with `Q̃` the
    /// (possibly projected) cost matrix.
    pub residual: f64,
    pub method: OracleMethod,
}

/// Policy-space fixed-point defect of a candidate equilibrium.
pub fn qre_residual(q: &DMatrix<f64>, tau: f64, g: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let g_br = softmax_raw(&(-(q * h) / tau));
    let h_br = softmax_raw(&(q.tr_mul(g) / tau));
    (g - g_br).amax().max((h - h_br).amax())
}

/// Equilibrium of `min_g max_h gᵀQh − τH(g) + τH(h)`, optionally restricted
/// to log-linear policies (solved as the tabular game `Ψ_rowᵀ Q Ψ_col`).
pub fn qre_fixed_point(
    q: &CostMatrix,
    tau: f64,
    restriction: Option<&PlayerFeatures>,
) -> Result<OracleSolution> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(NpgError::InvalidInput(format!("oracle needs tau > 0, got {tau}")));
    }
    let qe = match restriction {
        Some(f) => {
            crate::error::check_dim(q.nrows(), f.row.n())?;
            crate::error::check_dim(q.ncols(), f.col.n())?;
            f.row.psi().tr_mul(q.entries()) * f.col.psi()
        }
        None => q.entries().clone(),
    };
    let (g, h, residual, method) = solve_qre(&qe, tau)?;
    let row_costs = q.entries() * &h * (-1.0 / tau);
    let col_payoffs = q.entries().tr_mul(&g) * (1.0 / tau);
    let (theta_star, nu_star) = match restriction {
        Some(f) => (
            f.row.preconditioner() * row_costs,
            f.col.preconditioner() * col_payoffs,
        ),
        None => (row_costs, col_payoffs),
    };
    Ok(OracleSolution {
        g_star: SimplexVector::from_raw(g),
        h_star: SimplexVector::from_raw(h),
        theta_star: ParamVector::new(theta_star),
        nu_star: ParamVector::new(nu_star),
        residual,
        method,
    })
}

type QreParts = (DVector<f64>, DVector<f64>, f64, OracleMethod);

fn solve_qre(q: &DMatrix<f64>, tau: f64) -> Result<QreParts> {
    let (n, m) = q.shape();
    let (g, h, r) = damped(
        q,
        tau,
        DVector::from_element(n, 1.0 / n as f64),
        DVector::from_element(m, 1.0 / m as f64),
    );
    if r <= TARGET_RESIDUAL {
        return Ok((g, h, r, OracleMethod::DampedIteration));
    }
    if let Some((g2, h2, r2)) = newton(q, tau, &g, &h) {
        if r2 <= TARGET_RESIDUAL {
            return Ok((g2, h2, r2, OracleMethod::NewtonPolish));
        }
    }
    continuation(q, tau)
}

/// Alternating damped softmax responses. Halves the damping whenever the
/// residual stops improving over a window.
fn damped(
    q: &DMatrix<f64>,
    tau: f64,
    mut g: DVector<f64>,
    mut h: DVector<f64>,
) -> (DVector<f64>, DVector<f64>, f64) {
    let mut alpha = 0.5;
    let mut best = (g.clone(), h.clone(), qre_residual(q, tau, &g, &h));
    let mut window_best = best.2;
    for it in 1..=DAMPED_ITERS {
        let g_br = softmax_raw(&(-(q * &h) / tau));
        g = &g * (1.0 - alpha) + g_br * alpha;
        let h_br = softmax_raw(&(q.tr_mul(&g) / tau));
        h = &h * (1.0 - alpha) + h_br * alpha;
        let r = qre_residual(q, tau, &g, &h);
        if r < best.2 {
            best = (g.clone(), h.clone(), r);
        }
        if r <= TARGET_RESIDUAL {
            break;
        }
        if it % 200 == 0 {
            if best.2 > 0.5 * window_best && alpha > 1.0 / 64.0 {
                alpha *= 0.5;
                g = best.0.clone();
                h = best.1.clone();
            }
            window_best = best.2;
        }
    }
    best
}

/// Newton's method on `R(u, v) = [u + Q s(v)/τ ; v − Qᵀ s(u)/τ]` where `u`,
/// `v` are logits and `s` the softmax, with backtracking on `‖R‖₂`.
fn newton(
    q: &DMatrix<f64>,
    tau: f64,
    g0: &DVector<f64>,
    h0: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, f64)> {
    let (n, m) = q.shape();
    let a = q / tau;
    let mut u = -(&a * h0);
    let mut v = a.tr_mul(g0);
    let resid = |u: &DVector<f64>, v: &DVector<f64>| -> DVector<f64> {
        let su = softmax_raw(u);
        let sv = softmax_raw(v);
        let mut r = DVector::zeros(n + m);
        r.rows_mut(0, n).copy_from(&(u + &a * sv));
        r.rows_mut(n, m).copy_from(&(v - a.tr_mul(&su)));
        r
    };
    let jac_softmax = |s: &DVector<f64>| DMatrix::from_diagonal(s) - s * s.transpose();
    let mut r = resid(&u, &v);
    let mut best: Option<(DVector<f64>, DVector<f64>, f64)> = None;
    for _ in 0..NEWTON_ITERS {
        let su = softmax_raw(&u);
        let sv = softmax_raw(&v);
        let policy_res = qre_residual(q, tau, &su, &sv);
        if best.as_ref().is_none_or(|b| policy_res < b.2) {
            best = Some((su.clone(), sv.clone(), policy_res));
        }
        if policy_res <= TARGET_RESIDUAL * 0.1 {
            break;
        }
        let mut j = DMatrix::identity(n + m, n + m);
        j.view_mut((0, n), (n, m)).copy_from(&(&a * jac_softmax(&sv)));
        j.view_mut((n, 0), (m, n)).copy_from(&(-(a.transpose()) * jac_softmax(&su)));
        let step = j.lu().solve(&(-&r))?;
        let du = step.rows(0, n).into_owned();
        let dv = step.rows(n, m).into_owned();
        let norm0 = r.norm();
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let un = &u + &du * lambda;
            let vn = &v + &dv * lambda;
            let rn = resid(&un, &vn);
            if rn.norm() < norm0 || rn.norm() == 0.0 {
                u = un;
                v = vn;
                r = rn;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    best
}

/// Follows the equilibrium from a large regularization weight down to `tau`,
/// warm-starting Newton at each rung.
fn continuation(q: &DMatrix<f64>, tau: f64) -> Result<QreParts> {
    let (n, m) = q.shape();
    let scale = q.amax().max(1e-300);
    let mut t = (4.0 * scale * (n.max(m) as f64)).max(tau);
    let mut g = DVector::from_element(n, 1.0 / n as f64);
    let mut h = DVector::from_element(m, 1.0 / m as f64);
    loop {
        let (gd, hd, _) = damped(q, t, g.clone(), h.clone());
        let (gn, hn, r) = newton(q, t, &gd, &hd).unwrap_or((gd, hd, f64::INFINITY));
        g = gn;
        h = hn;
        if t <= tau {
            if r <= MAX_RESIDUAL {
                return Ok((g, h, r, OracleMethod::Continuation));
            }
            return Err(NpgError::OracleNotConverged {
                iterations: DAMPED_ITERS + NEWTON_ITERS,
                residual: r,
            });
        }
        t = (t * 0.7).max(tau);
    }
}

/// Reference equilibrium of an entropy-regularized monotone game.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneOracle {
    pub policies: Vec<SimplexVector>,
    /// `θ_i* = −F_i(z*)/τ`.
    pub thetas: Vec<ParamVector>,
    /// `max_i ‖g_i − softmax(−F_i(z)/τ)‖∞`.
    pub residual: f64,
    pub iterations: usize,
}

pub fn monotone_residual(spec: &MonotoneGameSpec, z: &[DVector<f64>]) -> f64 {
    let tau = spec.tau();
    spec.evaluate(z)
        .iter()
        .zip(z)
        .map(|(f, g)| (g - softmax_raw(&(-f / tau))).amax())
        .fold(0.0, f64::max)
}

/// Proximal point in policy space:
/// `z_{t+1,i} ∝ z_{t,i}^{1−ητ} exp(−η F_i(z_{t+1}))`, the implicit equation
/// solved by plain fixed-point iteration, with `η = min(0.45/τ, 1/L)`.
pub fn pp_reference_monotone(spec: &MonotoneGameSpec, tol: f64) -> Result<MonotoneOracle> {
    let tau = spec.tau();
    if tau <= 0.0 {
        return Err(NpgError::InvalidInput("oracle needs tau > 0".into()));
    }
    let l = spec.lipschitz();
    let eta = if l > 0.0 { (0.45 / tau).min(1.0 / l) } else { 0.45 / tau };
    let decay = 1.0 - eta * tau;
    let n = spec.n_actions();
    let mut z: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0 / n as f64); spec.n_players()];
    let max_outer = 200_000;
    for outer in 1..=max_outer {
        let log_prev: Vec<DVector<f64>> = z.iter().map(|g| g.map(|x| decay * x.ln())).collect();
        let mut x = z.clone();
        for _ in 0..2_000 {
            let f = spec.evaluate(&x);
            let next: Vec<DVector<f64>> = log_prev
                .iter()
                .zip(&f)
                .map(|(lp, fi)| softmax_raw(&(lp - fi * eta)))
                .collect();
            let change = next
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - b).amax())
                .fold(0.0, f64::max);
            x = next;
            if change <= 1e-16 {
                break;
            }
        }
        z = x;
        let residual = monotone_residual(spec, &z);
        if residual <= tol {
            let f = spec.evaluate(&z);
            return Ok(MonotoneOracle {
                thetas: f.iter().map(|fi| ParamVector::new(-fi / tau)).collect(),
                policies: z.into_iter().map(SimplexVector::from_raw).collect(),
                residual,
                iterations: outer,
            });
        }
    }
    Err(NpgError::OracleNotConverged {
        iterations: max_outer,
        residual: monotone_residual(spec, &z),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fa::FeatureMap;
    use crate::instances::{random_cost_matrix, random_feature_map, SeededRng};
    use crate::monotone::zero_sum_as_monotone;

    #[test]
    fn zero_matrix_gives_uniform_and_zero_parameters() {
        let sol = qre_fixed_point(&CostMatrix::zeros(4, 3), 0.7, None).unwrap();
        assert!(sol.g_star.max_abs_diff(&SimplexVector::uniform(4)) < 1e-16);
        assert!(sol.h_star.max_abs_diff(&SimplexVector::uniform(3)) < 1e-16);
        assert_eq!(sol.theta_star.norm_inf(), 0.0);
        assert_eq!(sol.nu_star.norm_inf(), 0.0);
    }

    #[test]
    fn identity_gives_uniform() {
        for &tau in &[0.05, 0.5, 3.0] {
            let n = 5;
            let sol = qre_fixed_point(&CostMatrix::identity(n), tau, None).unwrap();
            assert!(sol.g_star.max_abs_diff(&SimplexVector::uniform(n)) < 1e-13);
            for &x in sol.theta_star.iter() {
                assert!((x + 1.0 / (n as f64 * tau)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn residual_substitution_on_seeded_games() {
        let mut rng = SeededRng::new(100);
        for _ in 0..100 {
            let n = 2 + (rng.uniform() * 9.0) as usize;
            let tau = rng.uniform_in(0.05, 1.0);
            let q = random_cost_matrix(n, n, &mut rng);
            let sol = qre_fixed_point(&q, tau, None).unwrap();
            let r = qre_residual(q.entries(), tau, sol.g_star.probs(), sol.h_star.probs());
            assert!(r <= MAX_RESIDUAL, "residual {r}");
            // Parameter closed forms reproduce the policies.
            let g = softmax_raw(sol.theta_star.values());
            assert!((g - sol.g_star.probs()).amax() < 1e-12);
        }
    }

    #[test]
    fn small_tau_needs_polishing() {
        let mut rng = SeededRng::new(7);
        let q = random_cost_matrix(10, 10, &mut rng);
        let sol = qre_fixed_point(&q, 0.005, None).unwrap();
        assert!(sol.residual <= MAX_RESIDUAL);
    }

    #[test]
    fn restricted_solution_lies_in_class() {
        let mut rng = SeededRng::new(71);
        let q = random_cost_matrix(8, 8, &mut rng);
        let feats = PlayerFeatures::shared(random_feature_map(3, 8, &mut rng).unwrap());
        let sol = qre_fixed_point(&q, 0.2, Some(&feats)).unwrap();
        assert!(feats.row.restricted_simplex().contains(&sol.g_star));
        assert!(feats.col.restricted_simplex().contains(&sol.h_star));
        let g = crate::fa::log_linear_policy(&feats.row, &sol.theta_star).unwrap();
        assert!(g.max_abs_diff(&sol.g_star) < 1e-12);
        let h = crate::fa::log_linear_policy(&feats.col, &sol.nu_star).unwrap();
        assert!(h.max_abs_diff(&sol.h_star) < 1e-12);
    }

    #[test]
    fn full_features_match_tabular() {
        let mut rng = SeededRng::new(72);
        let q = random_cost_matrix(5, 5, &mut rng);
        let feats = PlayerFeatures::shared(FeatureMap::identity(5, 5).unwrap());
        let a = qre_fixed_point(&q, 0.3, Some(&feats)).unwrap();
        let b = qre_fixed_point(&q, 0.3, None).unwrap();
        assert!(a.g_star.max_abs_diff(&b.g_star) < 1e-14);
        assert!(a.theta_star.dist_sq(&b.theta_star).sqrt() < 1e-13);
    }

    #[test]
    fn pp_oracle_agrees_with_qre() {
        let mut rng = SeededRng::new(73);
        for _ in 0..5 {
            let q = random_cost_matrix(6, 6, &mut rng);
            let tau = 0.25;
            let qre = qre_fixed_point(&q, tau, None).unwrap();
            let spec = zero_sum_as_monotone(&q, tau);
            let pp = pp_reference_monotone(&spec, TARGET_RESIDUAL).unwrap();
            assert!(pp.residual <= MAX_RESIDUAL);
            assert!(pp.policies[0].max_abs_diff(&qre.g_star) < 1e-10);
            assert!(pp.policies[1].max_abs_diff(&qre.h_star) < 1e-10);
            assert!(pp.thetas[0].dist_sq(&qre.theta_star).sqrt() < 1e-9);
        }
    }

    #[test]
    fn pp_single_player_closed_form() {
        let c = DVector::from_column_slice(&[0.3, -0.5, 1.0]);
        let tau = 0.4;
        let spec = MonotoneGameSpec::linear(
            DMatrix::zeros(3, 3),
            c.clone(),
            1,
            3,
            tau,
        )
        .unwrap();
        let sol = pp_reference_monotone(&spec, TARGET_RESIDUAL).unwrap();
        let want = softmax_raw(&(-&c / tau));
        let err = (sol.policies[0].probs() - want).amax();
        assert!(err < TARGET_RESIDUAL, "{err}");
    }
}
