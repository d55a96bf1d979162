//! Emphatic weightings: the follow-on vector `f`, the emphasis vector `m`,
//! the λ-return transition matrix `P_λ`, and the constants `κ` and `β`.

use nalgebra::{DMatrix, DVector};

use crate::error::{EtdError, Result};
use crate::mdp::{
    check_discount, check_lambda, importance_ratios, induced_chain, stationary_distribution, Policy, StateDistribution,
    TabularMdp, STATIONARY_TOL,
};

/// Entries of `P_λ` in `[-PLAMBDA_CLAMP, 0)` are rounding noise and are clamped to zero.
pub const PLAMBDA_CLAMP: f64 = 1e-10;

/// Follow-on entries at or below this are rejected by [`kappa`].
pub const MIN_FOLLOWON: f64 = 1e-300;

/// Per-state interest `i(s) > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterestVector(DVector<f64>);

impl InterestVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        for (index, &value) in values.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(EtdError::NonPositiveWeight { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn ones(n_states: usize) -> Self {
        Self(DVector::from_element(n_states, 1.0))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn get(&self, state: usize) -> f64 {
        self.0[state]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Everything the contraction analysis needs for one `(π, μ, γ, λ, i)`.
#[derive(Debug, Clone)]
pub struct EmphasisBundle {
    pub gamma: f64,
    pub lambda: f64,
    pub d_mu: StateDistribution,
    /// `None` when the target chain has no unique stationary distribution.
    pub d_pi: Option<StateDistribution>,
    pub f: DVector<f64>,
    pub m: DVector<f64>,
    pub kappa: f64,
    pub beta: f64,
    pub plambda: DMatrix<f64>,
    /// `i(s)·d_μ(s)`
    pub i_weighted: DVector<f64>,
}

/// Residuals of the defining identities of an [`EmphasisBundle`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleResiduals {
    /// `‖fᵀ(I − γP_π) − d_μᵀ‖_∞`
    pub followon: f64,
    /// `‖mᵀ(I − P_λ) − iᵀ‖_∞`
    pub emphasis: f64,
    /// `|Σf − 1/(1−γ)|`
    pub followon_mass: f64,
    /// `‖P_λ1 − β1‖_∞`
    pub plambda_rowsum: f64,
    /// `max(0, max_s d_μ(s) − f(s))`
    pub followon_below_dmu: f64,
    /// `max(0, max_s i(s) − m(s))`
    pub emphasis_below_interest: f64,
}

impl BundleResiduals {
    pub fn max(&self) -> f64 {
        [
            self.followon,
            self.emphasis,
            self.followon_mass,
            self.plambda_rowsum,
            self.followon_below_dmu,
            self.emphasis_below_interest,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl EmphasisBundle {
    /// Recomputes every defining identity against the target transition matrix.
    pub fn residuals(&self, p_pi: &DMatrix<f64>) -> BundleResiduals {
        let n = self.f.len();
        let eye = DMatrix::<f64>::identity(n, n);
        let d_mu = self.d_mu.as_vector();
        let followon = ((eye.clone() - p_pi * self.gamma).tr_mul(&self.f) - d_mu).amax();
        let emphasis = ((eye - &self.plambda).tr_mul(&self.m) - &self.i_weighted).amax();
        let followon_mass = (self.f.sum() - 1.0 / (1.0 - self.gamma)).abs();
        let plambda_rowsum = self.plambda.row_iter().map(|r| (r.sum() - self.beta).abs()).fold(0.0, f64::max);
        let followon_below_dmu = d_mu.iter().zip(self.f.iter()).map(|(d, f)| d - f).fold(0.0, f64::max);
        let emphasis_below_interest = self.i_weighted.iter().zip(self.m.iter()).map(|(i, m)| i - m).fold(0.0, f64::max);
        BundleResiduals {
            followon,
            emphasis,
            followon_mass,
            plambda_rowsum,
            followon_below_dmu,
            emphasis_below_interest,
        }
    }
}

fn check_square(p: &DMatrix<f64>, n: usize, what: &str) -> Result<()> {
    if p.nrows() != n || p.ncols() != n {
        return Err(EtdError::Dimension(format!("{what} is {}x{}, expected {n}x{n}", p.nrows(), p.ncols())));
    }
    Ok(())
}

/// Follow-on weights `fᵀ = d_μᵀ(I − γP_π)^{-1}`, solved as `(I − γP_πᵀ)f = d_μ`.
pub fn followon_vector(d_mu: &StateDistribution, p_pi: &DMatrix<f64>, gamma: f64) -> Result<DVector<f64>> {
    check_discount(gamma)?;
    let d = d_mu.as_vector();
    check_square(p_pi, d.len(), "P_pi")?;
    let n = d.len();
    let a = DMatrix::identity(n, n) - p_pi.transpose() * gamma;
    a.lu().solve(d).ok_or_else(|| EtdError::Numerical("I - γP_πᵀ is singular".into()))
}

/// `κ = min_s d_μ(s)/f(s)`.
pub fn kappa(d_mu: &StateDistribution, f: &DVector<f64>) -> Result<f64> {
    let d = d_mu.as_vector();
    if d.len() != f.len() {
        return Err(EtdError::Dimension(format!("d_mu has {} entries, f has {}", d.len(), f.len())));
    }
    let mut best = f64::INFINITY;
    for (index, (&dm, &fv)) in d.iter().zip(f.iter()).enumerate() {
        if !(fv > MIN_FOLLOWON) {
            return Err(EtdError::NonPositiveWeight { index, value: fv });
        }
        best = best.min(dm / fv);
    }
    Ok(best)
}

/// `β = γ(1−λ)/(1−λγ)`, the common row sum of `P_λ`.
pub fn beta(gamma: f64, lambda: f64) -> Result<f64> {
    check_discount(gamma)?;
    check_lambda(lambda)?;
    Ok(gamma * (1.0 - lambda) / (1.0 - lambda * gamma))
}

/// `P_λ = I − (I − γλP_π)^{-1}(I − γP_π)`.
///
/// Computed by one LU solve. Entries down to `-PLAMBDA_CLAMP` are clamped to
/// zero; anything more negative is reported as a numerical error.
pub fn plambda(p_pi: &DMatrix<f64>, gamma: f64, lambda: f64) -> Result<DMatrix<f64>> {
    check_discount(gamma)?;
    check_lambda(lambda)?;
    let n = p_pi.nrows();
    check_square(p_pi, n, "P_pi")?;
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = &eye - p_pi * (gamma * lambda);
    let rhs = &eye - p_pi * gamma;
    let solved = lhs.lu().solve(&rhs).ok_or_else(|| EtdError::Numerical("I - γλP_π is singular".into()))?;
    let mut out = eye - solved;
    for x in out.iter_mut() {
        if *x < 0.0 {
            if *x < -PLAMBDA_CLAMP {
                return Err(EtdError::Numerical(format!("P_λ has entry {x:e} below -{PLAMBDA_CLAMP:e}")));
            }
            *x = 0.0;
        }
    }
    Ok(out)
}

/// Emphatic weights `mᵀ = iᵀ(I − P_λ)^{-1}` with `i(s) = interest(s)·d_μ(s)`.
pub fn emphasis_vector(
    interest: &InterestVector,
    d_mu: &StateDistribution,
    plambda: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let d = d_mu.as_vector();
    let n = d.len();
    if interest.len() != n {
        return Err(EtdError::Dimension(format!("interest has {} entries, expected {n}", interest.len())));
    }
    check_square(plambda, n, "P_lambda")?;
    let weighted = interest.as_vector().component_mul(d);
    let a = DMatrix::identity(n, n) - plambda.transpose();
    a.lu().solve(&weighted).ok_or_else(|| EtdError::Numerical("I - P_λᵀ is singular".into()))
}

/// Computes the complete [`EmphasisBundle`] for an MDP and a policy pair.
///
/// Requires coverage of `π` by `μ` and an ergodic behavior chain with
/// strictly positive stationary distribution.
pub fn emphasis_bundle(
    mdp: &TabularMdp,
    target: &Policy,
    behavior: &Policy,
    lambda: f64,
    interest: &InterestVector,
) -> Result<EmphasisBundle> {
    importance_ratios(target, behavior)?;
    let gamma = mdp.discount();
    let behavior_chain = induced_chain(mdp, behavior)?;
    let target_chain = induced_chain(mdp, target)?;
    let d_mu = stationary_distribution(&behavior_chain, STATIONARY_TOL)?;
    if !d_mu.is_positive() {
        return Err(EtdError::NonErgodic("behavior chain has transient states (d_mu has zero entries)".into()));
    }
    let d_pi = stationary_distribution(&target_chain, STATIONARY_TOL).ok();
    let p_pi = &target_chain.transition_matrix;
    let f = followon_vector(&d_mu, p_pi, gamma)?;
    let kappa = kappa(&d_mu, &f)?;
    let beta = beta(gamma, lambda)?;
    let plambda = plambda(p_pi, gamma, lambda)?;
    let m = emphasis_vector(interest, &d_mu, &plambda)?;
    let i_weighted = interest.as_vector().component_mul(d_mu.as_vector());
    Ok(EmphasisBundle { gamma, lambda, d_mu, d_pi, f, m, kappa, beta, plambda, i_weighted })
}
