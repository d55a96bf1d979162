//! The audit report: every contraction, error-bound and proof-step check for
//! one instance, gathered into a deterministic JSON document.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::example::{tightness, Tightness};
use super::json::to_canonical_json;
use super::spec::{Instance, Origin, SpecFile};
use crate::emphasis::{emphasis_bundle, BundleResiduals, EmphasisBundle, InterestVector};
use crate::error::{EtdError, Result};
use crate::mdp::{check_lambda, induced_chain, true_value};
use crate::operators::{
    check_error_bound, etd0_contraction, etd_lambda_contraction, fixed_point_residual, jensen_step_check,
    lambda_operator_contraction, proof_inequality_check, solve_projected_fixed_point, td0_modulus, ContractionReport,
    ErrorBoundReport, THEOREM_TOL,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Bound on the defining-identity residuals of `f` and `m`.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    /// Overrides the instance's λ for the ETD(λ) checks.
    pub lambda: Option<f64>,
    /// Seed for the random test vectors of the proof-step checks.
    pub seed: u64,
    pub proof_samples: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { lambda: None, seed: 0, proof_samples: 32 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceSection {
    pub name: String,
    pub origin: Origin,
    pub content_hash: String,
    pub n_states: usize,
    pub n_actions: usize,
    pub n_features: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub spec: SpecFile,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualSection {
    pub followon: f64,
    pub emphasis: f64,
    pub followon_mass: f64,
    pub plambda_rowsum: f64,
    pub followon_below_dmu: f64,
    pub emphasis_below_interest: f64,
}

impl From<BundleResiduals> for ResidualSection {
    fn from(r: BundleResiduals) -> Self {
        Self {
            followon: r.followon,
            emphasis: r.emphasis,
            followon_mass: r.followon_mass,
            plambda_rowsum: r.plambda_rowsum,
            followon_below_dmu: r.followon_below_dmu,
            emphasis_below_interest: r.emphasis_below_interest,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EmphasisSection {
    pub d_mu: Vec<f64>,
    pub d_pi: Option<Vec<f64>>,
    pub f: Vec<f64>,
    pub m: Vec<f64>,
    pub i_weighted: Vec<f64>,
    pub kappa: f64,
    pub beta: f64,
    /// Residuals of the λ = 0 bundle (`f`) and the λ bundle (`m`, `P_λ`).
    pub residuals_etd0: ResidualSection,
    pub residuals_etd_lambda: ResidualSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModuliSection {
    /// `Π_f T^π` in the f-norm against `sqrt(γ(1−κ))`.
    pub etd0: ContractionReport,
    /// `Π_m T^(λ)` in the m-norm against `sqrt(β)`.
    pub etd_lambda: ContractionReport,
    /// `T^(λ)` alone in the m-norm against `sqrt(β)`.
    pub lambda_operator: ContractionReport,
    /// `Π_{d_μ} γP_π` in the d_μ-norm (off-policy TD(0)); may exceed 1.
    pub td0_dmu: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPoint {
    pub theta: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointSection {
    pub etd0: FixedPoint,
    pub etd_lambda: FixedPoint,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBoundSection {
    /// f-norm bound with modulus `sqrt(γ(1−κ))`.
    pub corollary1: ErrorBoundReport,
    /// m-norm bound with modulus `sqrt(β)`.
    pub corollary2: ErrorBoundReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProofSection {
    pub samples: usize,
    pub seed: u64,
    pub jensen_p_pi: bool,
    pub jensen_plambda: bool,
    pub followon_step: bool,
    pub kappa_step: bool,
    pub emphasis_step: bool,
}

impl ProofSection {
    fn holds(&self) -> bool {
        self.jensen_p_pi && self.jensen_plambda && self.followon_step && self.kappa_step && self.emphasis_step
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HoldsSection {
    pub etd0_contraction: bool,
    pub etd_lambda_contraction: bool,
    pub lambda_operator_contraction: bool,
    pub corollary1: bool,
    pub corollary2: bool,
    pub proof_checks: bool,
    pub residuals: bool,
    pub fixed_points: bool,
    pub all: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub instance: InstanceSection,
    pub emphasis: EmphasisSection,
    pub moduli: ModuliSection,
    pub fixed_point: FixedPointSection,
    pub error_bounds: ErrorBoundSection,
    pub proof_checks: ProofSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tightness: Option<Tightness>,
    pub holds: HoldsSection,
}

impl AuditReport {
    pub fn to_json(&self) -> String {
        to_canonical_json(self)
    }

    /// True when no theorem-level modulus exceeds its bound.
    pub fn contraction_slack_ok(&self) -> bool {
        self.holds.etd0_contraction && self.holds.etd_lambda_contraction && self.holds.lambda_operator_contraction
    }
}

fn vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn bundle_ok(r: &BundleResiduals) -> bool {
    r.max() <= RESIDUAL_TOL
}

/// Runs every check on `inst`.
///
/// The ETD(0) checks use `λ = 0` and unit interest; the ETD(λ) checks use the
/// instance's λ (or the override) and its interest vector.
pub fn audit(inst: &Instance, options: &AuditOptions) -> Result<AuditReport> {
    let lambda = options.lambda.unwrap_or(inst.lambda);
    check_lambda(lambda)?;
    let n = inst.mdp.n_states();
    let gamma = inst.mdp.discount();
    let chain = induced_chain(&inst.mdp, &inst.target)?;
    let b0: EmphasisBundle = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &InterestVector::ones(n))?;
    let bl = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, lambda, &inst.interest)?;
    let r0 = b0.residuals(&chain.transition_matrix);
    let rl = bl.residuals(&chain.transition_matrix);

    let etd0 = etd0_contraction(&b0, &chain, &inst.features)?;
    let etd_lambda = etd_lambda_contraction(&bl, &inst.features)?;
    let lambda_operator = lambda_operator_contraction(&bl)?;
    let td0_dmu = td0_modulus(&b0, &chain, &inst.features)?;

    let theta0 = solve_projected_fixed_point(&inst.features, &b0.f, &chain, gamma, 0.0)?;
    let res0 = fixed_point_residual(&theta0, &inst.features, &b0.f, &chain, gamma, 0.0)?;
    let theta_l = solve_projected_fixed_point(&inst.features, &bl.m, &chain, gamma, lambda)?;
    let res_l = fixed_point_residual(&theta_l, &inst.features, &bl.m, &chain, gamma, lambda)?;

    let v_pi = true_value(&chain, gamma)?;
    let corollary1 = check_error_bound(&theta0, &v_pi, &inst.features, &b0.f, etd0.bound)?;
    let corollary2 = check_error_bound(&theta_l, &v_pi, &inst.features, &bl.m, etd_lambda.bound)?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut proof = ProofSection {
        samples: options.proof_samples,
        seed: options.seed,
        jensen_p_pi: true,
        jensen_plambda: true,
        followon_step: true,
        kappa_step: true,
        emphasis_step: true,
    };
    for _ in 0..options.proof_samples {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        proof.jensen_p_pi &= jensen_step_check(&chain.transition_matrix, 1.0, &b0.f, &v)?;
        proof.jensen_plambda &= jensen_step_check(&bl.plambda, bl.beta, &bl.m, &v)?;
        let p0 = proof_inequality_check(&b0, &chain, &v)?;
        let pl = proof_inequality_check(&bl, &chain, &v)?;
        proof.followon_step &= p0.followon_step;
        proof.kappa_step &= p0.kappa_step;
        proof.emphasis_step &= pl.emphasis_step;
    }

    let tight = match inst.origin {
        Origin::TwoState { epsilon, gamma } => {
            Some(tightness(epsilon, gamma).map_err(|e| EtdError::Numerical(e.to_string()))?)
        }
        _ => None,
    };

    let fixed_ok = res0 <= THEOREM_TOL && res_l <= THEOREM_TOL;
    let mut holds = HoldsSection {
        etd0_contraction: etd0.holds(),
        etd_lambda_contraction: etd_lambda.holds(),
        lambda_operator_contraction: lambda_operator.holds(),
        corollary1: corollary1.holds,
        corollary2: corollary2.holds,
        proof_checks: proof.holds(),
        residuals: bundle_ok(&r0) && bundle_ok(&rl),
        fixed_points: fixed_ok,
        all: false,
    };
    holds.all = holds.etd0_contraction
        && holds.etd_lambda_contraction
        && holds.lambda_operator_contraction
        && holds.corollary1
        && holds.corollary2
        && holds.proof_checks
        && holds.residuals
        && holds.fixed_points;

    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        instance: InstanceSection {
            name: inst.name(),
            origin: inst.origin.clone(),
            content_hash: inst.content_hash(),
            n_states: n,
            n_actions: inst.mdp.n_actions(),
            n_features: inst.features.n_features(),
            gamma,
            lambda,
            spec: inst.spec.clone(),
        },
        emphasis: EmphasisSection {
            d_mu: vec(b0.d_mu.as_vector()),
            d_pi: b0.d_pi.as_ref().map(|d| vec(d.as_vector())),
            f: vec(&b0.f),
            m: vec(&bl.m),
            i_weighted: vec(&bl.i_weighted),
            kappa: b0.kappa,
            beta: bl.beta,
            residuals_etd0: r0.into(),
            residuals_etd_lambda: rl.into(),
        },
        moduli: ModuliSection { etd0, etd_lambda, lambda_operator, td0_dmu },
        fixed_point: FixedPointSection {
            etd0: FixedPoint { theta: vec(&theta0), residual: res0 },
            etd_lambda: FixedPoint { theta: vec(&theta_l), residual: res_l },
        },
        error_bounds: ErrorBoundSection { corollary1, corollary2 },
        proof_checks: proof,
        tightness: tight,
        holds,
    })
}
