//! Probability vectors, parameter vectors and the softmax / entropy / KL
//! primitives every solver is built on.

use std::ops::Deref;

use nalgebra::DVector;

use crate::error::{check_dim, NpgError, Result};

/// Absolute tolerance on the sum of a probability vector.
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;
/// Entrywise tolerance for the softmax shift-invariance property.
pub const SHIFT_TOL: f64 = 1e-14;
/// Per-term clamp on `ln(p/q)` inside [`kl`].
pub const LOG_RATIO_CLAMP: f64 = 700.0;

/// A probability vector: nonnegative entries summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexVector(DVector<f64>);

impl SimplexVector {
    pub fn new(probs: DVector<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(NpgError::InvalidInput("empty probability vector".into()));
        }
        if let Some(i) = probs.iter().position(|p| !p.is_finite() || *p < 0.0) {
            return Err(NpgError::InvalidInput(format!(
                "probability entry {i} is {} (must be finite and nonnegative)",
                probs[i]
            )));
        }
        let sum: f64 = probs.sum();
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(NpgError::InvalidInput(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn from_slice(probs: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(DVector::from_element(n, 1.0 / n as f64))
    }

    /// Wraps a vector the caller already knows to be a distribution.
    pub(crate) fn from_raw(probs: DVector<f64>) -> Self {
        Self(probs)
    }

    pub fn probs(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    pub fn min_entry(&self) -> f64 {
        self.0.min()
    }

    /// True when every entry is at least `delta`.
    pub fn is_interior(&self, delta: f64) -> bool {
        self.0.iter().all(|&p| p >= delta)
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &SimplexVector) -> f64 {
        (&self.0 - &other.0).amax()
    }
}

impl Deref for SimplexVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Unconstrained real parameters (θ or ν) of a softmax or log-linear policy.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(DVector<f64>);

impl ParamVector {
    pub fn new(values: DVector<f64>) -> Self {
        Self(values)
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self(DVector::from_column_slice(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Fails with the index of the first non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|x| !x.is_finite()) {
            Some(index) => Err(NpgError::DivergedParameter { index }),
            None => Ok(()),
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.amax()
    }

    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        (&self.0 - &other.0).norm_squared()
    }
}

impl Deref for ParamVector {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl From<DVector<f64>> for ParamVector {
    fn from(v: DVector<f64>) -> Self {
        Self(v)
    }
}

/// `log Σ exp(x)` with max-subtraction.
pub fn log_sum_exp(x: &DVector<f64>) -> f64 {
    let m = x.max();
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Softmax of a raw vector without validation. Callers in this crate use it
/// on vectors they have already checked for finiteness.
pub(crate) fn softmax_raw(x: &DVector<f64>) -> DVector<f64> {
    let m = x.max();
    let mut e = x.map(|v| (v - m).exp());
    let s = e.sum();
    e /= s;
    e
}

pub fn softmax(theta: &ParamVector) -> Result<SimplexVector> {
    theta.check_finite()?;
    if theta.is_empty() {
        return Err(NpgError::InvalidInput("softmax of an empty vector".into()));
    }
    Ok(SimplexVector(softmax_raw(&theta.0)))
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy(p: &SimplexVector) -> f64 {
    -p.0
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

/// `KL(p ‖ q)`, evaluated term by term in the log domain.
pub fn kl(p: &SimplexVector, q: &SimplexVector) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.0.iter().zip(q.0.iter()).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(NpgError::SupportMismatch { index: i });
        }
        let ratio = (pi.ln() - qi.ln()).clamp(-LOG_RATIO_CLAMP, LOG_RATIO_CLAMP);
        total += pi * ratio;
    }
    // Rounding can leave a tiny negative value when p ≈ q.
    Ok(total.max(0.0))
}

/// `KL(softmax a ‖ softmax b)` computed from the logits.
///
/// With `δ = a − b` centred so that `Σ q δ = 0`, the divergence is
/// `Σ p δ − ln Σ q e^δ`. Near `a = b` both terms are first order in `δ` while
/// their difference is second order, so the log-partition term goes through
/// `log1p`/`expm1`. This keeps full relative accuracy for tiny divergences,
/// where the probability-space formula loses it to cancellation.
pub fn kl_logits(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    check_dim(a.len(), b.len())?;
    let p = softmax(a)?;
    let q = softmax(b)?;
    let delta = &a.0 - &b.0;
    let d = delta.add_scalar(-q.0.dot(&delta));
    let cross = p.0.dot(&d);
    let log_partition = if d.amax() < 1.0 {
        q.0.iter().zip(d.iter()).map(|(qi, di)| qi * di.exp_m1()).sum::<f64>().ln_1p()
    } else {
        let shifted = DVector::from_iterator(d.len(), q.0.iter().zip(d.iter()).map(|(qi, di)| qi.ln() + di));
        log_sum_exp(&shifted)
    };
    Ok((cross - log_partition).max(0.0))
}

/// KL of a joint profile: the sum of the per-block divergences.
pub fn kl_joint(p: &[SimplexVector], q: &[SimplexVector]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    p.iter().zip(q).map(|(a, b)| kl(a, b)).sum()
}
