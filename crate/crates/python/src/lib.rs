//! Python bindings: instances, audits, emphatic quantities and learning runs.
//!
//! Vectors cross the boundary as `list[float]`, matrices as `list[list[float]]`
//! (row-major).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use etd_core::audit::example;
use etd_core::audit::{self as core_audit, AuditOptions, Origin, RandomFixture, SpecError};
use etd_core::learner::{self, Algorithm, LearningConfig, LearningProblem, StepSchedule};
use etd_core::mdp::{self, InducedChain, StateDistribution, STATIONARY_TOL};
use etd_core::{emphasis, operators, DMatrix, DVector, EtdError};

fn etd_err(e: EtdError) -> PyErr {
    match e {
        EtdError::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn spec_err(e: SpecError) -> PyErr {
    PyValueError::new_err(format!("{}: {e}", e.code()))
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let k = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != k) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(n, k, rows.into_iter().flatten()))
}

fn from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn distribution(d: Vec<f64>) -> PyResult<StateDistribution> {
    StateDistribution::new(DVector::from_vec(d)).map_err(etd_err)
}

/// A validated MDP instance with its target and behavior policies.
#[pyclass(module = "etd_lab", frozen)]
struct Instance {
    inner: core_audit::Instance,
}

#[pymethods]
impl Instance {
    /// The two-state example: behavior goes Right w.p. ε, target goes Left w.p. ε.
    #[staticmethod]
    #[pyo3(signature = (epsilon=0.1, gamma=0.9))]
    fn two_state(epsilon: f64, gamma: f64) -> PyResult<Self> {
        let inner = core_audit::fixture_two_state(epsilon, gamma).map_err(spec_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (gamma=0.9))]
    fn on_policy(gamma: f64) -> PyResult<Self> {
        let inner = core_audit::fixture_on_policy(gamma).map_err(spec_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (seed, n_states=5, n_actions=3, min_prob=0.05, gamma=0.9, n_features=None))]
    fn random(
        seed: u64,
        n_states: usize,
        n_actions: usize,
        min_prob: f64,
        gamma: f64,
        n_features: Option<usize>,
    ) -> PyResult<Self> {
        let cfg = RandomFixture { gamma, n_features, ..RandomFixture::new(seed, n_states, n_actions, min_prob) };
        let inner = core_audit::fixture_random(&cfg).map_err(spec_err)?;
        Ok(Self { inner })
    }

    /// The frozen instance on which off-policy TD(0) diverges.
    #[staticmethod]
    fn divergence() -> PyResult<Self> {
        let inner = core_audit::fixture_divergence().map_err(spec_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = core_audit::parse_spec_str(text, Origin::File { path: "<string>".into() }).map_err(spec_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = core_audit::parse_spec(&path).map_err(spec_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name()
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.inner.mdp.n_states()
    }

    #[getter]
    fn n_actions(&self) -> usize {
        self.inner.mdp.n_actions()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.mdp.discount()
    }

    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        from_matrix(self.inner.features.matrix())
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn content_hash(&self) -> String {
        self.inner.content_hash()
    }

    /// Transition matrix `P` and reward vector `r` of the chain induced by
    /// the target (default) or behavior policy.
    #[pyo3(signature = (policy="target"))]
    fn chain(&self, policy: &str) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
        let c = self.induced(policy)?;
        Ok((from_matrix(&c.transition_matrix), from_vector(&c.reward_vector)))
    }

    /// `V^π` of the target policy.
    fn true_value(&self) -> PyResult<Vec<f64>> {
        let c = self.induced("target")?;
        Ok(from_vector(&mdp::true_value(&c, self.gamma()).map_err(etd_err)?))
    }

    /// `d_μ`, `d_π`, `f`, `m`, `κ`, `β` and `P_λ` as a dict.
    #[pyo3(signature = (lambda_=0.0, unit_interest=false))]
    fn emphasis<'py>(
        &self,
        py: Python<'py>,
        lambda_: f64,
        unit_interest: bool,
    ) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
        let interest =
            if unit_interest { emphasis::InterestVector::ones(self.n_states()) } else { self.inner.interest.clone() };
        let i = &self.inner;
        let b = emphasis::emphasis_bundle(&i.mdp, &i.target, &i.behavior, lambda_, &interest).map_err(etd_err)?;
        let out = pyo3::types::PyDict::new(py);
        out.set_item("d_mu", from_vector(b.d_mu.as_vector()))?;
        out.set_item("d_pi", b.d_pi.as_ref().map(|d| from_vector(d.as_vector())))?;
        out.set_item("f", from_vector(&b.f))?;
        out.set_item("m", from_vector(&b.m))?;
        out.set_item("kappa", b.kappa)?;
        out.set_item("beta", b.beta)?;
        out.set_item("plambda", from_matrix(&b.plambda))?;
        Ok(out)
    }

    /// Full audit report as canonical JSON.
    #[pyo3(signature = (lambda_=None, seed=0))]
    fn audit(&self, lambda_: Option<f64>, seed: u64) -> PyResult<String> {
        let options = AuditOptions { lambda: lambda_, seed, ..Default::default() };
        Ok(core_audit::audit(&self.inner, &options).map_err(etd_err)?.to_json())
    }

    /// Runs one learner and returns its curve.
    #[pyo3(signature = (alg="etd0", steps=200_000, seed=None, lambda_=None, schedule="harmonic", alpha=0.1, offset=1000.0, stride=1000))]
    #[allow(clippy::too_many_arguments)]
    fn learn(
        &self,
        py: Python<'_>,
        alg: &str,
        steps: u64,
        seed: Option<u64>,
        lambda_: Option<f64>,
        schedule: &str,
        alpha: f64,
        offset: f64,
        stride: u64,
    ) -> PyResult<LearningCurve> {
        let algorithm: Algorithm = alg.parse().map_err(PyValueError::new_err)?;
        let schedule = match schedule {
            "harmonic" => StepSchedule::Harmonic { alpha0: alpha, offset },
            "constant" => StepSchedule::Constant { alpha },
            other => return Err(PyValueError::new_err(format!("unknown schedule '{other}'"))),
        };
        let i = &self.inner;
        let config = LearningConfig {
            algorithm,
            schedule,
            steps,
            seed: seed.or(i.spec.seed).unwrap_or(0),
            stride,
            lambda: lambda_.unwrap_or(i.lambda),
        };
        let problem = LearningProblem {
            mdp: &i.mdp,
            target: &i.target,
            behavior: &i.behavior,
            features: &i.features,
            interest: &i.interest,
        };
        let curve = py.detach(|| learner::run_learning(&problem, &config)).map_err(etd_err)?;
        Ok(LearningCurve { inner: curve })
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(name={:?}, n_states={}, n_actions={}, gamma={})",
            self.name(),
            self.n_states(),
            self.n_actions(),
            self.gamma()
        )
    }
}

impl Instance {
    fn induced(&self, policy: &str) -> PyResult<InducedChain> {
        let pol = match policy {
            "target" => &self.inner.target,
            "behavior" => &self.inner.behavior,
            other => {
                return Err(PyValueError::new_err(format!("policy must be 'target' or 'behavior', got '{other}'")))
            }
        };
        mdp::induced_chain(&self.inner.mdp, pol).map_err(etd_err)
    }
}

/// Recorded distances to the projected fixed point over one run.
#[pyclass(module = "etd_lab", frozen)]
struct LearningCurve {
    inner: learner::LearningCurve,
}

#[pymethods]
impl LearningCurve {
    #[getter]
    fn steps(&self) -> Vec<u64> {
        self.inner.points.iter().map(|p| p.step).collect()
    }

    #[getter]
    fn distances(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.distance).collect()
    }

    #[getter]
    fn theta_norms(&self) -> Vec<f64> {
        self.inner.points.iter().map(|p| p.theta_norm).collect()
    }

    #[getter]
    fn followon(&self) -> Vec<Option<f64>> {
        self.inner.points.iter().map(|p| p.followon).collect()
    }

    #[getter]
    fn theta_star(&self) -> Vec<f64> {
        from_vector(&self.inner.theta_star)
    }

    #[getter]
    fn final_theta(&self) -> Vec<f64> {
        from_vector(&self.inner.final_theta)
    }

    #[getter]
    fn final_distance(&self) -> f64 {
        self.inner.final_distance()
    }

    #[getter]
    fn value_norm(&self) -> f64 {
        self.inner.value_norm
    }

    #[getter]
    fn max_followon(&self) -> Option<f64> {
        self.inner.max_followon
    }

    #[getter]
    fn config_hash(&self) -> &str {
        &self.inner.config_hash
    }

    #[getter]
    fn diverged(&self) -> bool {
        self.inner.diverged()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.points.len()
    }
}

/// `γ(1−λ)/(1−γλ)`.
#[pyfunction]
fn beta(gamma: f64, lambda_: f64) -> PyResult<f64> {
    emphasis::beta(gamma, lambda_).map_err(etd_err)
}

#[pyfunction]
fn kappa(d_mu: Vec<f64>, f: Vec<f64>) -> PyResult<f64> {
    emphasis::kappa(&distribution(d_mu)?, &DVector::from_vec(f)).map_err(etd_err)
}

#[pyfunction]
fn followon_vector(d_mu: Vec<f64>, p: Vec<Vec<f64>>, gamma: f64) -> PyResult<Vec<f64>> {
    let f = emphasis::followon_vector(&distribution(d_mu)?, &to_matrix(p)?, gamma).map_err(etd_err)?;
    Ok(from_vector(&f))
}

#[pyfunction]
fn plambda(p: Vec<Vec<f64>>, gamma: f64, lambda_: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(&emphasis::plambda(&to_matrix(p)?, gamma, lambda_).map_err(etd_err)?))
}

#[pyfunction]
fn stationary_distribution(p: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let p = to_matrix(p)?;
    let chain = InducedChain::new(p.clone(), DVector::zeros(p.nrows())).map_err(etd_err)?;
    let d = mdp::stationary_distribution(&chain, STATIONARY_TOL).map_err(etd_err)?;
    Ok(from_vector(d.as_vector()))
}

#[pyfunction]
fn weighted_norm(v: Vec<f64>, d: Vec<f64>) -> PyResult<f64> {
    operators::weighted_norm(&DVector::from_vec(v), &DVector::from_vec(d)).map_err(etd_err)
}

/// `σ_max(D^{1/2} A D^{-1/2})`, the exact modulus of `v ↦ Av + b` in the d-norm.
#[pyfunction]
fn contraction_modulus(a: Vec<Vec<f64>>, d: Vec<f64>) -> PyResult<f64> {
    let a = to_matrix(a)?;
    let n = a.nrows();
    let op = operators::AffineOperator::new(a, DVector::zeros(n)).map_err(etd_err)?;
    operators::contraction_modulus(&op, &DVector::from_vec(d)).map_err(etd_err)
}

/// Rows of the two-state example as `(quantity, computed, closed_form, abs_diff)`.
#[pyfunction]
#[pyo3(signature = (epsilon=0.1, gamma=0.9))]
fn example_table(epsilon: f64, gamma: f64) -> PyResult<Vec<(String, f64, f64, f64)>> {
    let table = example::example_table(epsilon, gamma).map_err(spec_err)?;
    Ok(table.rows.iter().map(|r| (r.quantity.to_string(), r.computed, r.closed_form, r.abs_diff)).collect())
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Instance>()?;
    m.add_class::<LearningCurve>()?;
    m.add_function(wrap_pyfunction!(beta, m)?)?;
    m.add_function(wrap_pyfunction!(kappa, m)?)?;
    m.add_function(wrap_pyfunction!(followon_vector, m)?)?;
    m.add_function(wrap_pyfunction!(plambda, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_norm, m)?)?;
    m.add_function(wrap_pyfunction!(contraction_modulus, m)?)?;
    m.add_function(wrap_pyfunction!(example_table, m)?)?;
    m.add("SCHEMA_VERSION", core_audit::report::SCHEMA_VERSION)?;
    Ok(())
}

#[pymodule]
fn etd_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}
