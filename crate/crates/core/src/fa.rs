//! Log-linear policies `softmax(Φᵀθ)` with `Φ = [M | 0]`.
//!
//! Such policies cover exactly the distributions whose trailing `n − d`
//! entries are equal. The update preconditions the tabular direction by
//! `[(Mᵀ)⁻¹ | 0] P̃`, where `P̃` subtracts the mean of the trailing block.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, NpgError, Result};
use crate::matrix_game::{
    drive, finite_or_diverged, onpg_stepsize_bound, relax, CostMatrix, OptimisticState,
    RegularizedGame, RunSpec, SolverConfig, SolverTrace,
};
use crate::oracles;
use crate::simplex::{entropy, log_sum_exp, softmax_raw, ParamVector, SimplexVector};

/// Condition number above which `M` is rejected.
pub const CONDITION_GUARD: f64 = 1e12;
/// Tolerance on equality of the trailing entries of a restricted policy.
pub const RESTRICTED_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    phi: DMatrix<f64>,
    m: DMatrix<f64>,
    m_inv_t: DMatrix<f64>,
    psi: DMatrix<f64>,
    p_tilde: DMatrix<f64>,
    preconditioner: DMatrix<f64>,
}

impl FeatureMap {
    /// Builds `Φ = [M | 0] ∈ R^{d×n}` and its derived matrices.
    ///
    /// `d == n` is accepted and gives the tabular parameterization with
    /// `Ψ = P̃ = I`.
    pub fn build(m: DMatrix<f64>, n: usize) -> Result<Self> {
        let d = m.nrows();
        check_dim(d, m.ncols())?;
        if d == 0 || d > n {
            return Err(NpgError::InvalidInput(format!(
                "feature dimension {d} must satisfy 1 <= d <= n = {n}"
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(NpgError::InvalidInput("feature block has non-finite entries".into()));
        }
        let sv = m.singular_values();
        let condition = sv.max() / sv.min();
        if !(condition.is_finite() && condition <= CONDITION_GUARD) {
            return Err(NpgError::SingularFeatureBlock { condition });
        }
        let m_inv_t = m
            .transpose()
            .lu()
            .try_inverse()
            .ok_or(NpgError::SingularFeatureBlock { condition })?;

        let mut phi = DMatrix::zeros(d, n);
        phi.view_mut((0, 0), (d, d)).copy_from(&m);

        let tail = n - d;
        let mut psi = DMatrix::zeros(n, n);
        let mut p_tilde = DMatrix::zeros(n, n);
        for i in 0..d {
            psi[(i, i)] = 1.0;
            p_tilde[(i, i)] = 1.0;
        }
        if tail > 0 {
            let w = 1.0 / tail as f64;
            psi.view_mut((d, d), (tail, tail)).fill(w);
            p_tilde.view_mut((0, d), (d, tail)).fill(-w);
        }
        let preconditioner = &m_inv_t * p_tilde.rows(0, d);
        Ok(Self {
            phi,
            m,
            m_inv_t,
            psi,
            p_tilde,
            preconditioner,
        })
    }

    pub fn identity(d: usize, n: usize) -> Result<Self> {
        Self::build(DMatrix::identity(d, d), n)
    }

    pub fn d(&self) -> usize {
        self.m.nrows()
    }

    pub fn n(&self) -> usize {
        self.phi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn m_inv_t(&self) -> &DMatrix<f64> {
        &self.m_inv_t
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn p_tilde(&self) -> &DMatrix<f64> {
        &self.p_tilde
    }

    pub fn preconditioner(&self) -> &DMatrix<f64> {
        &self.preconditioner
    }

    pub fn restricted_simplex(&self) -> RestrictedSimplex {
        RestrictedSimplex {
            d: self.d(),
            n: self.n(),
        }
    }

    /// `Φᵀθ`.
    pub fn logits(&self, theta: &DVector<f64>) -> DVector<f64> {
        self.phi.tr_mul(theta)
    }

    /// `Ψᵀ x`: keeps the leading block and replaces the tail by its mean.
    pub fn project_dual(&self, x: &DVector<f64>) -> DVector<f64> {
        self.psi.tr_mul(x)
    }
}

/// Distributions whose last `n − d` entries coincide.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RestrictedSimplex {
    pub d: usize,
    pub n: usize,
}

impl RestrictedSimplex {
    pub fn contains(&self, p: &SimplexVector) -> bool {
        if p.len() != self.n {
            return false;
        }
        let tail = &p.as_slice()[self.d..];
        match tail.first() {
            None => true,
            Some(&first) => tail.iter().all(|&x| (x - first).abs() <= RESTRICTED_TOL),
        }
    }

    /// Extreme points: the first `d` unit vectors and, when `d < n`, the
    /// uniform distribution over the tail.
    pub fn vertices(&self) -> Vec<SimplexVector> {
        let mut out = Vec::with_capacity(self.d + 1);
        for i in 0..self.d {
            let mut v = DVector::zeros(self.n);
            v[i] = 1.0;
            out.push(SimplexVector::from_raw(v));
        }
        if self.d < self.n {
            let mut v = DVector::zeros(self.n);
            let w = 1.0 / (self.n - self.d) as f64;
            v.rows_mut(self.d, self.n - self.d).fill(w);
            out.push(SimplexVector::from_raw(v));
        }
        out
    }
}

pub fn log_linear_policy(fmap: &FeatureMap, theta: &ParamVector) -> Result<SimplexVector> {
    check_dim(fmap.d(), theta.len())?;
    theta.check_finite()?;
    Ok(SimplexVector::from_raw(softmax_raw(&fmap.logits(theta))))
}

/// One feature map per player; both must share the feature dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct PlayerFeatures {
    pub row: FeatureMap,
    pub col: FeatureMap,
}

impl PlayerFeatures {
    pub fn new(row: FeatureMap, col: FeatureMap) -> Result<Self> {
        check_dim(row.d(), col.d())?;
        Ok(Self { row, col })
    }

    pub fn shared(fmap: FeatureMap) -> Self {
        Self {
            row: fmap.clone(),
            col: fmap,
        }
    }

    pub fn d(&self) -> usize {
        self.row.d()
    }

    fn check_game(&self, game: &RegularizedGame) -> Result<()> {
        check_dim(game.n_row(), self.row.n())?;
        check_dim(game.n_col(), self.col.n())
    }
}

/// The tabular game `Ψ_rowᵀ Q Ψ_col` whose equilibrium the feature-based
/// method converges to.
pub fn surrogate_game(game: &RegularizedGame, feats: &PlayerFeatures) -> Result<RegularizedGame> {
    feats.check_game(game)?;
    let q = feats.row.psi().tr_mul(game.q().entries()) * feats.col.psi();
    RegularizedGame::new(CostMatrix::new(q)?, game.tau())
}

/// One optimistic step in feature space.
pub fn onpg_fa_step(
    game: &RegularizedGame,
    feats: &PlayerFeatures,
    state: &OptimisticState,
    eta: f64,
) -> Result<OptimisticState> {
    feats.check_game(game)?;
    let d = feats.d();
    for p in [&state.theta, &state.nu, &state.theta_bar, &state.nu_bar] {
        check_dim(d, p.len())?;
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(NpgError::InvalidStepsize { eta, bound: f64::INFINITY });
    }
    let decay = 1.0 - eta * game.tau();
    let row_dir = |h: &SimplexVector| feats.row.preconditioner() * game.row_costs(h.probs());
    let col_dir = |g: &SimplexVector| feats.col.preconditioner() * game.col_payoffs(g.probs());

    let g_bar = log_linear_policy(&feats.row, &state.theta_bar)?;
    let h_bar = log_linear_policy(&feats.col, &state.nu_bar)?;
    let theta_bar = finite_or_diverged(relax(&state.theta, decay, -eta, &row_dir(&h_bar)))?;
    let nu_bar = finite_or_diverged(relax(&state.nu, decay, eta, &col_dir(&g_bar)))?;
    let g_bar = log_linear_policy(&feats.row, &theta_bar)?;
    let h_bar = log_linear_policy(&feats.col, &nu_bar)?;
    let theta = finite_or_diverged(relax(&state.theta, decay, -eta, &row_dir(&h_bar)))?;
    let nu = finite_or_diverged(relax(&state.nu, decay, eta, &col_dir(&g_bar)))?;
    Ok(OptimisticState {
        theta,
        nu,
        theta_bar,
        nu_bar,
    })
}

/// Optimistic NPG in feature space from zero parameters. The stepsize rule
/// and the theorem constants use the surrogate game's norm.
pub fn solve_regularized_fa(
    game: &RegularizedGame,
    feats: &PlayerFeatures,
    cfg: &SolverConfig,
) -> Result<SolverTrace> {
    if game.tau() <= 0.0 {
        return Err(NpgError::InvalidInput("regularized solvers need tau > 0".into()));
    }
    let surrogate = surrogate_game(game, feats)?;
    if cfg.guaranteed {
        let bound = onpg_stepsize_bound(&surrogate, cfg.norm);
        if cfg.eta > bound {
            return Err(NpgError::InvalidStepsize { eta: cfg.eta, bound });
        }
    }
    if !cfg.optimistic {
        return Err(NpgError::InvalidInput(
            "the feature-based solver is optimistic only".into(),
        ));
    }
    let targets = oracles::qre_fixed_point(game.q(), game.tau(), Some(feats))?;
    let spec = RunSpec {
        cfg,
        targets,
        q_norm: surrogate.q().norm(cfg.norm),
        tau: game.tau(),
    };
    let d = feats.d();
    let eta = cfg.eta;
    drive(
        spec,
        OptimisticState::zeros(d, d),
        |s| onpg_fa_step(game, feats, s, eta),
        |p, row| log_linear_policy(if row { &feats.row } else { &feats.col }, p),
    )
}

/// Unregularized exploitability when both players are restricted to
/// log-linear policies. Linear objectives attain their optimum at a vertex of
/// the restricted simplex, and the vertex values are the entries of `Ψᵀx`.
pub fn in_class_duality_gap(
    q: &CostMatrix,
    feats: &PlayerFeatures,
    g: &SimplexVector,
    h: &SimplexVector,
) -> f64 {
    let best_col = feats.col.project_dual(&q.entries().tr_mul(g.probs())).max();
    let best_row = feats.row.project_dual(&(q.entries() * h.probs())).min();
    best_col - best_row
}

/// Regularized exploitability over the restricted class. The best responses
/// have the closed form `softmax(∓Ψᵀ(·)/τ)`, which already lies in the class.
pub fn in_class_regularized_gap(
    game: &RegularizedGame,
    feats: &PlayerFeatures,
    g: &SimplexVector,
    h: &SimplexVector,
) -> f64 {
    let tau = game.tau();
    let col = feats.col.project_dual(&game.col_payoffs(g.probs())) / tau;
    let row = -feats.row.project_dual(&game.row_costs(h.probs())) / tau;
    tau * log_sum_exp(&col) + tau * log_sum_exp(&row) - tau * entropy(g) - tau * entropy(h)
}

/// Regularized best response of the row player within the class.
pub fn in_class_best_response_row(
    game: &RegularizedGame,
    feats: &PlayerFeatures,
    h: &SimplexVector,
) -> SimplexVector {
    let x = -feats.row.project_dual(&game.row_costs(h.probs())) / game.tau();
    SimplexVector::from_raw(softmax_raw(&x))
}
