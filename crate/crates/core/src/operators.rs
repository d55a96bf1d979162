//! Bellman operators, weighted projections and exact contraction moduli.
//!
//! The modulus of an affine map `v ↦ Av + b` in the `d`-weighted norm is the
//! spectral norm of `D^{1/2} A D^{-1/2}`, so every contraction claim here is
//! checked exactly rather than by sampling directions.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::emphasis::{plambda, EmphasisBundle};
use crate::error::{EtdError, Result};
use crate::mdp::{check_discount, FeatureMap, InducedChain};

/// Slack allowed when comparing an exact modulus to its theoretical bound.
pub const THEOREM_TOL: f64 = 1e-9;

/// Tolerance on the quadratic-form inequalities from the contraction proofs.
pub const PROOF_TOL: f64 = 1e-10;

/// Allowed deviation of a matrix row sum from its declared value in [`jensen_step_check`].
pub const ROWSUM_TOL: f64 = 1e-9;

fn check_weight(d: &DVector<f64>, n: usize) -> Result<()> {
    if d.len() != n {
        return Err(EtdError::Dimension(format!("weight has {} entries, expected {n}", d.len())));
    }
    for (index, &value) in d.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(EtdError::NonPositiveWeight { index, value });
        }
    }
    Ok(())
}

fn check_len(v: &DVector<f64>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(EtdError::Dimension(format!("{what} has {} entries, expected {n}", v.len())));
    }
    Ok(())
}

/// `‖v‖_d = sqrt(Σ_s d(s) v(s)²)`.
pub fn weighted_norm(v: &DVector<f64>, d: &DVector<f64>) -> Result<f64> {
    check_weight(d, v.len())?;
    Ok(weighted_sq_norm(v, d).sqrt())
}

fn weighted_sq_norm(v: &DVector<f64>, d: &DVector<f64>) -> f64 {
    v.iter().zip(d.iter()).map(|(x, w)| w * x * x).sum()
}

/// The affine map `v ↦ Av + b` on value vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineOperator {
    pub linear_part: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineOperator {
    pub fn new(linear_part: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        let n = linear_part.nrows();
        if linear_part.ncols() != n || offset.len() != n {
            return Err(EtdError::Dimension(format!(
                "affine operator with {}x{} linear part and offset of length {}",
                n,
                linear_part.ncols(),
                offset.len()
            )));
        }
        Ok(Self { linear_part, offset })
    }

    /// `T^π v = R_π + γP_π v`.
    pub fn bellman(chain: &InducedChain, gamma: f64) -> Result<Self> {
        check_discount(gamma)?;
        Self::new(&chain.transition_matrix * gamma, chain.reward_vector.clone())
    }

    /// `T^(λ) v = (I − γλP_π)^{-1} R_π + P_λ v`.
    pub fn bellman_lambda(chain: &InducedChain, gamma: f64, lambda: f64) -> Result<Self> {
        let linear = plambda(&chain.transition_matrix, gamma, lambda)?;
        let n = chain.n_states();
        let offset = (DMatrix::identity(n, n) - &chain.transition_matrix * (gamma * lambda))
            .lu()
            .solve(&chain.reward_vector)
            .ok_or_else(|| EtdError::Numerical("I - γλP_π is singular".into()))?;
        Self::new(linear, offset)
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, self.dim(), "value vector")?;
        Ok(&self.linear_part * v + &self.offset)
    }

    /// `Π ∘ self`, i.e. `v ↦ Π(Av + b)`.
    pub fn projected(&self, projector: &WeightedProjector) -> Result<Self> {
        if projector.dim() != self.dim() {
            return Err(EtdError::Dimension(format!(
                "projector acts on {} states, operator on {}",
                projector.dim(),
                self.dim()
            )));
        }
        Self::new(&projector.matrix * &self.linear_part, &projector.matrix * &self.offset)
    }
}

/// `T^π v`.
pub fn bellman_apply(chain: &InducedChain, gamma: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    AffineOperator::bellman(chain, gamma)?.apply(v)
}

/// `T^(λ) v`.
pub fn bellman_lambda_apply(chain: &InducedChain, gamma: f64, lambda: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
    AffineOperator::bellman_lambda(chain, gamma, lambda)?.apply(v)
}

/// Orthogonal projection onto `span(Φ)` under the `d`-weighted inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedProjector {
    weight: DVector<f64>,
    features: FeatureMap,
    matrix: DMatrix<f64>,
}

impl WeightedProjector {
    /// The realized `|S|×|S|` matrix `Φ(ΦᵀDΦ)^{-1}ΦᵀD`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn weight(&self) -> &DVector<f64> {
        &self.weight
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, self.dim(), "value vector")?;
        Ok(&self.matrix * v)
    }

    /// Weights `θ` of the projection, so that `Π_d v = Φθ`.
    pub fn coefficients(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(v, self.dim(), "value vector")?;
        let phi = self.features.matrix();
        let gram = weighted_gram(phi, &self.weight);
        let rhs = phi.tr_mul(&v.component_mul(&self.weight));
        gram.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| EtdError::Numerical("weighted Gram matrix is not positive definite".into()))
    }
}

fn weighted_gram(phi: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = phi.clone();
    for (mut row, &w) in scaled.row_iter_mut().zip(d.iter()) {
        row *= w;
    }
    phi.tr_mul(&scaled)
}

/// Builds `Π_d` by a Cholesky solve of the weighted normal equations.
pub fn make_projector(features: &FeatureMap, d: &DVector<f64>) -> Result<WeightedProjector> {
    let phi = features.matrix();
    check_weight(d, phi.nrows())?;
    let gram = weighted_gram(phi, d);
    // ΦᵀD, one column per state
    let mut phi_t_d = phi.transpose();
    for (mut col, &w) in phi_t_d.column_iter_mut().zip(d.iter()) {
        col *= w;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        let sigma = phi.clone().svd(false, false).singular_values.min();
        EtdError::RankDeficient { sigma }
    })?;
    let matrix = phi * chol.solve(&phi_t_d);
    Ok(WeightedProjector { weight: d.clone(), features: features.clone(), matrix })
}

/// Operator norm of `A` in the `d`-weighted norm: the largest singular value of `D^{1/2} A D^{-1/2}`.
pub fn contraction_modulus(op: &AffineOperator, d: &DVector<f64>) -> Result<f64> {
    matrix_modulus(&op.linear_part, d)
}

pub(crate) fn matrix_modulus(a: &DMatrix<f64>, d: &DVector<f64>) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(EtdError::Dimension("modulus needs a square matrix".into()));
    }
    check_weight(d, n)?;
    let sqrt_d: Vec<f64> = d.iter().map(|x| x.sqrt()).collect();
    let similar = DMatrix::from_fn(n, n, |i, j| sqrt_d[i] * a[(i, j)] / sqrt_d[j]);
    Ok(similar.svd(false, false).singular_values.max())
}

/// Which emphatic weighting a contraction claim is stated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormWeight {
    /// Follow-on weights `f` (ETD(0)).
    F,
    /// Emphatic weights `m` (ETD(λ)).
    M,
    /// Behavior stationary distribution `d_μ` (plain off-policy TD).
    DMu,
}

/// Exact modulus of a projected operator next to its theoretical bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionReport {
    pub modulus_exact: f64,
    pub bound: f64,
    pub norm_weight_id: NormWeight,
    pub slack: f64,
}

impl ContractionReport {
    fn new(modulus_exact: f64, bound: f64, norm_weight_id: NormWeight) -> Self {
        Self { modulus_exact, bound, norm_weight_id, slack: bound - modulus_exact }
    }

    pub fn holds(&self) -> bool {
        self.slack >= -THEOREM_TOL
    }
}

/// `Π_f T^π` in the `f`-norm against `sqrt(γ(1−κ))`.
pub fn etd0_contraction(
    bundle: &EmphasisBundle,
    chain: &InducedChain,
    features: &FeatureMap,
) -> Result<ContractionReport> {
    let projector = make_projector(features, &bundle.f)?;
    let op = AffineOperator::bellman(chain, bundle.gamma)?.projected(&projector)?;
    let modulus = contraction_modulus(&op, &bundle.f)?;
    let bound = (bundle.gamma * (1.0 - bundle.kappa)).sqrt();
    Ok(ContractionReport::new(modulus, bound, NormWeight::F))
}

/// `Π_m T^(λ)` in the `m`-norm against `sqrt(β)`.
pub fn etd_lambda_contraction(bundle: &EmphasisBundle, features: &FeatureMap) -> Result<ContractionReport> {
    let projector = make_projector(features, &bundle.m)?;
    let modulus = matrix_modulus(&(projector.matrix() * &bundle.plambda), &bundle.m)?;
    Ok(ContractionReport::new(modulus, bundle.beta.sqrt(), NormWeight::M))
}

/// Unprojected `T^(λ)` in the `m`-norm against `sqrt(β)`.
pub fn lambda_operator_contraction(bundle: &EmphasisBundle) -> Result<ContractionReport> {
    let modulus = matrix_modulus(&bundle.plambda, &bundle.m)?;
    Ok(ContractionReport::new(modulus, bundle.beta.sqrt(), NormWeight::M))
}

/// Modulus of `Π_{d_μ} γP_π` in the `d_μ`-norm, the operator behind off-policy TD(0).
/// Values above one mean there is no contraction guarantee.
pub fn td0_modulus(bundle: &EmphasisBundle, chain: &InducedChain, features: &FeatureMap) -> Result<f64> {
    let d_mu = bundle.d_mu.as_vector();
    let projector = make_projector(features, d_mu)?;
    matrix_modulus(&(projector.matrix() * &chain.transition_matrix * bundle.gamma), d_mu)
}

/// Solves `Φθ = Π_m T^(λ)(Φθ)` through the `n×n` system
/// `ΦᵀM(I − P_λ)Φ θ = ΦᵀM(I − γλP_π)^{-1}R_π`.
pub fn solve_projected_fixed_point(
    features: &FeatureMap,
    m: &DVector<f64>,
    chain: &InducedChain,
    gamma: f64,
    lambda: f64,
) -> Result<DVector<f64>> {
    let phi = features.matrix();
    let n = phi.nrows();
    if chain.n_states() != n {
        return Err(EtdError::Dimension(format!("features cover {n} states, chain has {}", chain.n_states())));
    }
    check_weight(m, n)?;
    let op = AffineOperator::bellman_lambda(chain, gamma, lambda)?;
    let mut m_phi = phi.clone();
    for (mut row, &w) in m_phi.row_iter_mut().zip(m.iter()) {
        row *= w;
    }
    // m_phi = MΦ, so ΦᵀM(...) = (MΦ)ᵀ(...)
    let lhs = m_phi.tr_mul(&((DMatrix::identity(n, n) - &op.linear_part) * phi));
    let rhs = m_phi.tr_mul(&op.offset);
    lhs.lu().solve(&rhs).ok_or_else(|| EtdError::Numerical("projected fixed-point system is singular".into()))
}

/// `‖Φθ − Π_m T^(λ)(Φθ)‖_m`.
pub fn fixed_point_residual(
    theta: &DVector<f64>,
    features: &FeatureMap,
    m: &DVector<f64>,
    chain: &InducedChain,
    gamma: f64,
    lambda: f64,
) -> Result<f64> {
    let projector = make_projector(features, m)?;
    let op = AffineOperator::bellman_lambda(chain, gamma, lambda)?.projected(&projector)?;
    let v = features.values(theta);
    weighted_norm(&(&v - op.apply(&v)?), m)
}

/// Both sides of the approximation-error bound
/// `‖Φθ* − V^π‖_w ≤ ‖Π_w V^π − V^π‖_w / (1 − modulus)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBoundReport {
    pub lhs: f64,
    pub proj_err: f64,
    pub rhs: f64,
    pub modulus: f64,
    pub holds: bool,
}

pub fn check_error_bound(
    theta_star: &DVector<f64>,
    v_pi: &DVector<f64>,
    features: &FeatureMap,
    weight: &DVector<f64>,
    modulus: f64,
) -> Result<ErrorBoundReport> {
    if !(modulus < 1.0) || modulus < 0.0 {
        return Err(EtdError::Precondition(format!(
            "error bound needs a contraction modulus in [0, 1), got {modulus}"
        )));
    }
    let projector = make_projector(features, weight)?;
    let lhs = weighted_norm(&(features.values(theta_star) - v_pi), weight)?;
    let proj_err = weighted_norm(&(projector.project(v_pi)? - v_pi), weight)?;
    let rhs = proj_err / (1.0 - modulus);
    Ok(ErrorBoundReport { lhs, proj_err, rhs, modulus, holds: lhs <= rhs + THEOREM_TOL })
}

/// Checks `vᵀPᵀ diag(w) P v ≤ c · vᵀ diag(wᵀP) v` for a nonnegative `P` with row sums `c`.
pub fn jensen_step_check(p: &DMatrix<f64>, rowsum: f64, weight: &DVector<f64>, v: &DVector<f64>) -> Result<bool> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(EtdError::Dimension("Jensen check needs a square matrix".into()));
    }
    check_weight(weight, n)?;
    check_len(v, n, "v")?;
    for (s, row) in p.row_iter().enumerate() {
        if (row.sum() - rowsum).abs() > ROWSUM_TOL {
            return Err(EtdError::Precondition(format!(
                "row {s} of P sums to {}, declared row sum is {rowsum}",
                row.sum()
            )));
        }
    }
    let pv = p * v;
    let lhs = weighted_sq_norm(&pv, weight);
    let column_mass = p.tr_mul(weight);
    let rhs = rowsum * weighted_sq_norm(v, &column_mass);
    Ok(lhs <= rhs + PROOF_TOL)
}

/// Outcome of the quadratic-form inequalities behind both contraction results.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofChecks {
    /// `‖v‖²_f − γ‖P_π v‖²_f ≥ ‖v‖²_{d_μ}`
    pub followon_step: bool,
    /// `κ‖v‖²_f ≤ ‖v‖²_{d_μ}`
    pub kappa_step: bool,
    /// `‖v‖²_m − (1/β)‖P_λ v‖²_m ≥ ‖v‖²_i`
    pub emphasis_step: bool,
}

impl ProofChecks {
    pub fn all(&self) -> bool {
        self.followon_step && self.kappa_step && self.emphasis_step
    }
}

pub fn proof_inequality_check(bundle: &EmphasisBundle, chain: &InducedChain, v: &DVector<f64>) -> Result<ProofChecks> {
    let n = bundle.f.len();
    check_len(v, n, "v")?;
    if chain.n_states() != n {
        return Err(EtdError::Dimension("chain and bundle disagree on state count".into()));
    }
    let d_mu = bundle.d_mu.as_vector();
    let vf = weighted_sq_norm(v, &bundle.f);
    let pvf = weighted_sq_norm(&(&chain.transition_matrix * v), &bundle.f);
    let vd = weighted_sq_norm(v, d_mu);
    let followon_step = vf - bundle.gamma * pvf >= vd - PROOF_TOL;
    let kappa_step = bundle.kappa * vf <= vd + PROOF_TOL;

    let vm = weighted_sq_norm(v, &bundle.m);
    let plvm = weighted_sq_norm(&(&bundle.plambda * v), &bundle.m);
    let vi = weighted_sq_norm(v, &bundle.i_weighted);
    let emphasis_step = if bundle.beta > 0.0 {
        vm - plvm / bundle.beta >= vi - PROOF_TOL
    } else {
        // β = 0 only when γ = 0, where P_λ vanishes
        vm >= vi - PROOF_TOL
    };
    Ok(ProofChecks { followon_step, kappa_step, emphasis_step })
}
