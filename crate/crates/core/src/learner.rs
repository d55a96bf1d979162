//! Behavior-policy simulation and the ETD(0), ETD(λ) and off-policy TD(0) learners.
//!
//! Within one step the follow-on trace is updated before the weights (and for
//! ETD(λ) the order is F, M, e, θ), since each quantity feeds the next.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::emphasis::{emphasis_bundle, InterestVector};
use crate::error::{EtdError, Result};
use crate::mdp::{importance_ratios, induced_chain, true_value, FeatureMap, Policy, TabularMdp};
use crate::numfmt::format_f64;
use crate::operators::{solve_projected_fixed_point, weighted_norm};

/// Distance beyond which a run is flagged as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e3;

/// One sampled transition `(s_t, a_t, r_{t+1}, s_{t+1}, ρ_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<Transition>,
}

/// Streams transitions generated by the behavior policy.
pub struct BehaviorSampler<'a> {
    mdp: &'a TabularMdp,
    rho: DMatrix<f64>,
    actions: Vec<WeightedIndex<f64>>,
    next: Vec<Vec<WeightedIndex<f64>>>,
    rng: ChaCha8Rng,
    state: usize,
}

fn weighted_index<'a>(weights: impl IntoIterator<Item = &'a f64>) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| EtdError::Numerical(format!("sampling table: {e}")))
}

impl<'a> BehaviorSampler<'a> {
    pub fn new(mdp: &'a TabularMdp, behavior: &Policy, target: &Policy, seed: u64) -> Result<Self> {
        let rho = importance_ratios(target, behavior)?;
        if behavior.n_states() != mdp.n_states() || behavior.n_actions() != mdp.n_actions() {
            return Err(EtdError::Dimension("policy does not match the MDP".into()));
        }
        let n = mdp.n_states();
        let actions = (0..n).map(|s| weighted_index(behavior.table().row(s).iter())).collect::<Result<Vec<_>>>()?;
        let next = (0..mdp.n_actions())
            .map(|a| (0..n).map(|s| weighted_index(mdp.transition(a).row(s).iter())).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = weighted_index(mdp.initial_dist().iter())?.sample(&mut rng);
        Ok(Self { mdp, rho, actions, next, rng, state })
    }
}

impl Iterator for BehaviorSampler<'_> {
    type Item = Transition;

    fn next(&mut self) -> Option<Transition> {
        let s = self.state;
        let a = self.actions[s].sample(&mut self.rng);
        let s2 = self.next[a][s].sample(&mut self.rng);
        self.state = s2;
        Some(Transition {
            state: s,
            action: a,
            reward: self.mdp.reward()[(s, a)],
            next_state: s2,
            rho: self.rho[(s, a)],
        })
    }
}

/// Samples `steps` transitions under `behavior`, annotating each with its ratio to `target`.
pub fn simulate(mdp: &TabularMdp, behavior: &Policy, target: &Policy, seed: u64, steps: usize) -> Result<Trajectory> {
    let sampler = BehaviorSampler::new(mdp, behavior, target, seed)?;
    Ok(Trajectory { seed, steps: sampler.take(steps).collect() })
}

/// Step-size sequence `α_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        alpha: f64,
    },
    /// `α_t = alpha0·offset/(offset + t)`
    Harmonic {
        alpha0: f64,
        offset: f64,
    },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Harmonic { alpha0: 0.1, offset: 1e3 }
    }
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        let (name, value) = match *self {
            StepSchedule::Constant { alpha } => ("alpha", alpha),
            StepSchedule::Harmonic { alpha0, offset } => {
                if !(offset > 0.0) {
                    return Err(EtdError::InvalidParameter {
                        name: "offset",
                        value: offset,
                        reason: "harmonic offset must be positive",
                    });
                }
                ("alpha0", alpha0)
            }
        };
        if !(value > 0.0) || !value.is_finite() {
            return Err(EtdError::InvalidParameter { name, value, reason: "step size must be positive" });
        }
        Ok(())
    }

    pub fn alpha(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Constant { alpha } => alpha,
            StepSchedule::Harmonic { alpha0, offset } => alpha0 * offset / (offset + t as f64),
        }
    }
}

fn check_features(theta: &DVector<f64>, features: &FeatureMap, tr: &Transition) -> Result<()> {
    if theta.len() != features.n_features() {
        return Err(EtdError::Dimension(format!(
            "theta has {} entries, features have {}",
            theta.len(),
            features.n_features()
        )));
    }
    let n = features.n_states();
    if tr.state >= n || tr.next_state >= n {
        return Err(EtdError::Dimension(format!("transition references a state outside 0..{n}")));
    }
    Ok(())
}

fn td_error(theta: &DVector<f64>, features: &FeatureMap, tr: &Transition, gamma: f64) -> f64 {
    let phi = features.matrix();
    let v = phi.row(tr.state).transpose().dot(theta);
    let v_next = phi.row(tr.next_state).transpose().dot(theta);
    tr.reward + gamma * v_next - v
}

/// Iterate of ETD(0): weights and the follow-on trace `F_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Etd0State {
    pub theta: DVector<f64>,
    /// `F_t` of the most recent step (0 before the first step).
    pub followon: f64,
    /// `ρ_t` of the most recent step, needed for the next follow-on update.
    pub prev_rho: f64,
    pub step_count: u64,
}

impl Etd0State {
    pub fn new(n_features: usize) -> Self {
        Self { theta: DVector::zeros(n_features), followon: 0.0, prev_rho: 0.0, step_count: 0 }
    }
}

/// One ETD(0) step: `F_t = γρ_{t−1}F_{t−1} + 1` (`F_0 = 1`), then
/// `θ += αF_tρ_t δ_t φ(s_t)`.
pub fn etd0_step(
    state: &Etd0State,
    tr: &Transition,
    alpha: f64,
    gamma: f64,
    features: &FeatureMap,
) -> Result<Etd0State> {
    check_features(&state.theta, features, tr)?;
    let followon = if state.step_count == 0 { 1.0 } else { gamma * state.prev_rho * state.followon + 1.0 };
    let delta = td_error(&state.theta, features, tr, gamma);
    let phi = features.matrix().row(tr.state);
    let mut theta = state.theta.clone();
    for (t, &p) in theta.iter_mut().zip(phi.iter()) {
        *t += alpha * delta * (tr.rho * (followon * p));
    }
    Ok(Etd0State { theta, followon, prev_rho: tr.rho, step_count: state.step_count + 1 })
}

/// Iterate of ETD(λ): weights, eligibility trace, follow-on and emphasis.
#[derive(Debug, Clone, PartialEq)]
pub struct EtdLambdaState {
    pub theta: DVector<f64>,
    pub trace: DVector<f64>,
    pub followon: f64,
    pub emphasis: f64,
    pub prev_rho: f64,
    pub step_count: u64,
}

impl EtdLambdaState {
    pub fn new(n_features: usize) -> Self {
        Self {
            theta: DVector::zeros(n_features),
            trace: DVector::zeros(n_features),
            followon: 0.0,
            emphasis: 0.0,
            prev_rho: 0.0,
            step_count: 0,
        }
    }
}

/// One ETD(λ) step:
/// `F_t = γρ_{t−1}F_{t−1} + i(s_t)` (`F_0 = i(s_0)`), `M_t = λi(s_t) + (1−λ)F_t`,
/// `e_t = ρ_t(γλe_{t−1} + M_tφ(s_t))`, `θ += αδ_t e_t`.
pub fn etd_lambda_step(
    state: &EtdLambdaState,
    tr: &Transition,
    alpha: f64,
    gamma: f64,
    lambda: f64,
    interest: &InterestVector,
    features: &FeatureMap,
) -> Result<EtdLambdaState> {
    check_features(&state.theta, features, tr)?;
    if interest.len() != features.n_states() {
        return Err(EtdError::Dimension("interest does not cover every state".into()));
    }
    let i_s = interest.get(tr.state);
    let followon = if state.step_count == 0 { i_s } else { gamma * state.prev_rho * state.followon + i_s };
    let emphasis = lambda * i_s + (1.0 - lambda) * followon;
    let decay = gamma * lambda;
    let phi = features.matrix().row(tr.state);
    let mut trace = state.trace.clone();
    for (e, &p) in trace.iter_mut().zip(phi.iter()) {
        *e = tr.rho * (decay * *e + emphasis * p);
    }
    let delta = td_error(&state.theta, features, tr, gamma);
    let mut theta = state.theta.clone();
    for (t, &e) in theta.iter_mut().zip(trace.iter()) {
        *t += alpha * delta * e;
    }
    Ok(EtdLambdaState { theta, trace, followon, emphasis, prev_rho: tr.rho, step_count: state.step_count + 1 })
}

/// Off-policy TD(0) without emphasis: `θ += αρ_t δ_t φ(s_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Td0State {
    pub theta: DVector<f64>,
    pub step_count: u64,
}

impl Td0State {
    pub fn new(n_features: usize) -> Self {
        Self { theta: DVector::zeros(n_features), step_count: 0 }
    }
}

pub fn td0_step(state: &Td0State, tr: &Transition, alpha: f64, gamma: f64, features: &FeatureMap) -> Result<Td0State> {
    check_features(&state.theta, features, tr)?;
    let delta = td_error(&state.theta, features, tr, gamma);
    let phi = features.matrix().row(tr.state);
    let mut theta = state.theta.clone();
    for (t, &p) in theta.iter_mut().zip(phi.iter()) {
        *t += alpha * tr.rho * delta * p;
    }
    Ok(Td0State { theta, step_count: state.step_count + 1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Etd0,
    EtdLambda,
    Td0,
}

impl std::str::FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "etd0" => Ok(Algorithm::Etd0),
            "etdlambda" => Ok(Algorithm::EtdLambda),
            "td0" => Ok(Algorithm::Td0),
            other => Err(format!("unknown algorithm '{other}' (expected etd0, etdlambda or td0)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearningConfig {
    pub algorithm: Algorithm,
    pub schedule: StepSchedule,
    pub steps: u64,
    pub seed: u64,
    /// Record a curve point every `stride` steps (the final step is always recorded).
    pub stride: u64,
    /// Only used by ETD(λ); ETD(0) and TD(0) run at λ = 0.
    pub lambda: f64,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Etd0,
            schedule: StepSchedule::default(),
            steps: 200_000,
            seed: 0,
            stride: 1_000,
            lambda: 0.0,
        }
    }
}

impl LearningConfig {
    /// SHA-256 over everything except the seed, so runs that differ only in
    /// their seed share a hash.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            algorithm: &'a Algorithm,
            schedule: &'a StepSchedule,
            steps: u64,
            stride: u64,
            lambda: String,
        }
        let text = serde_json::to_string(&Hashed {
            algorithm: &self.algorithm,
            schedule: &self.schedule,
            steps: self.steps,
            stride: self.stride,
            lambda: format_f64(self.lambda),
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    /// `‖Φθ_t − Φθ*‖` in the emphatic norm of the algorithm's fixed point.
    pub distance: f64,
    pub theta_norm: f64,
    /// `None` for TD(0), which has no follow-on trace.
    pub followon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningCurve {
    pub config: LearningConfig,
    pub config_hash: String,
    pub points: Vec<CurvePoint>,
    pub theta_star: DVector<f64>,
    pub final_theta: DVector<f64>,
    /// The weighting the distance is measured in (`f` at λ = 0, else `m`).
    pub weight: DVector<f64>,
    /// `‖V^π‖` in the same weighting.
    pub value_norm: f64,
    pub max_followon: Option<f64>,
}

impl LearningCurve {
    pub fn final_distance(&self) -> f64 {
        self.points.last().map_or(f64::NAN, |p| p.distance)
    }

    pub fn diverged(&self) -> bool {
        let d = self.final_distance();
        !d.is_finite() || d > DIVERGENCE_THRESHOLD
    }

    /// Writes `step,distance_m,theta_norm,F_value` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,distance_m,theta_norm,F_value")?;
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                p.step,
                format_f64(p.distance),
                format_f64(p.theta_norm),
                p.followon.map(format_f64).unwrap_or_default()
            )?;
        }
        Ok(())
    }
}

enum Learner {
    Etd0(Etd0State),
    EtdLambda(EtdLambdaState),
    Td0(Td0State),
}

impl Learner {
    fn theta(&self) -> &DVector<f64> {
        match self {
            Learner::Etd0(s) => &s.theta,
            Learner::EtdLambda(s) => &s.theta,
            Learner::Td0(s) => &s.theta,
        }
    }

    fn followon(&self) -> Option<f64> {
        match self {
            Learner::Etd0(s) => Some(s.followon),
            Learner::EtdLambda(s) => Some(s.followon),
            Learner::Td0(_) => None,
        }
    }
}

/// The quantities a learning run is evaluated against.
pub struct LearningProblem<'a> {
    pub mdp: &'a TabularMdp,
    pub target: &'a Policy,
    pub behavior: &'a Policy,
    pub features: &'a FeatureMap,
    pub interest: &'a InterestVector,
}

/// Runs one learner on a freshly simulated behavior trajectory and records
/// its distance to the exact projected fixed point.
///
/// ETD(0) and TD(0) are measured against the ETD(0) fixed point in the `f`
/// norm; ETD(λ) against its own fixed point in the `m` norm.
pub fn run_learning(problem: &LearningProblem<'_>, config: &LearningConfig) -> Result<LearningCurve> {
    config.schedule.validate()?;
    if config.stride == 0 {
        return Err(EtdError::InvalidParameter { name: "stride", value: 0.0, reason: "stride must be positive" });
    }
    let gamma = problem.mdp.discount();
    let (lambda, interest) = match config.algorithm {
        Algorithm::EtdLambda => (config.lambda, problem.interest.clone()),
        Algorithm::Etd0 | Algorithm::Td0 => (0.0, InterestVector::ones(problem.mdp.n_states())),
    };
    let bundle = emphasis_bundle(problem.mdp, problem.target, problem.behavior, lambda, &interest)?;
    let weight = bundle.m.clone();
    let chain = induced_chain(problem.mdp, problem.target)?;
    let theta_star = solve_projected_fixed_point(problem.features, &weight, &chain, gamma, lambda)?;
    let v_star = problem.features.values(&theta_star);
    let value_norm = weighted_norm(&true_value(&chain, gamma)?, &weight)?;

    let n_features = problem.features.n_features();
    let mut learner = match config.algorithm {
        Algorithm::Etd0 => Learner::Etd0(Etd0State::new(n_features)),
        Algorithm::EtdLambda => Learner::EtdLambda(EtdLambdaState::new(n_features)),
        Algorithm::Td0 => Learner::Td0(Td0State::new(n_features)),
    };

    let record = |step: u64, learner: &Learner| -> Result<CurvePoint> {
        let theta = learner.theta();
        Ok(CurvePoint {
            step,
            distance: weighted_norm(&(problem.features.values(theta) - &v_star), &weight)?,
            theta_norm: theta.norm(),
            followon: learner.followon(),
        })
    };

    let mut points = vec![record(0, &learner)?];
    let mut max_followon = learner.followon().map(|_| 0.0f64);
    let sampler = BehaviorSampler::new(problem.mdp, problem.behavior, problem.target, config.seed)?;
    for (t, tr) in sampler.take(config.steps as usize).enumerate() {
        let t = t as u64;
        let alpha = config.schedule.alpha(t);
        learner = match learner {
            Learner::Etd0(s) => Learner::Etd0(etd0_step(&s, &tr, alpha, gamma, problem.features)?),
            Learner::EtdLambda(s) => {
                Learner::EtdLambda(etd_lambda_step(&s, &tr, alpha, gamma, lambda, &interest, problem.features)?)
            }
            Learner::Td0(s) => Learner::Td0(td0_step(&s, &tr, alpha, gamma, problem.features)?),
        };
        if let (Some(best), Some(f)) = (max_followon.as_mut(), learner.followon()) {
            *best = best.max(f);
        }
        let step = t + 1;
        if step.is_multiple_of(config.stride) || step == config.steps {
            points.push(record(step, &learner)?);
        }
    }

    Ok(LearningCurve {
        config: *config,
        config_hash: config.config_hash(),
        points,
        theta_star,
        final_theta: learner.theta().clone(),
        weight,
        value_norm,
        max_followon,
    })
}
