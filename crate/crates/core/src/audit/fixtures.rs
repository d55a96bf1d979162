//! Built-in instances: the two-state tightness example, seeded random ergodic
//! MDPs, and the frozen off-policy TD divergence witness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::spec::{parse_spec_str, Instance, Labels, Origin, SpecError, SpecFile, BEHAVIOR_POLICY, TARGET_POLICY};
use crate::emphasis::{emphasis_bundle, InterestVector};
use crate::mdp::{induced_chain, RANK_TOL};
use crate::operators::td0_modulus;
use nalgebra::DMatrix;

fn invalid(field: &str, message: impl Into<String>) -> SpecError {
    SpecError::Invalid { field: field.into(), message: message.into() }
}

/// Two states, Left (0) and Right (1), each with a deterministic "go left"
/// and "go right" action. The behavior policy goes right with probability
/// `epsilon`; the target policy goes left with probability `epsilon`.
/// Reward is 1 for every action taken in Right, 0 in Left.
pub fn two_state_spec(epsilon: f64, gamma: f64) -> Result<SpecFile, SpecError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", format!("{epsilon} is outside (0, 1)")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("{gamma} is outside [0, 1)")));
    }
    let behavior = vec![1.0 - epsilon, epsilon];
    let target = vec![epsilon, 1.0 - epsilon];
    let mut policies = BTreeMap::new();
    policies.insert(BEHAVIOR_POLICY.to_string(), vec![behavior.clone(), behavior]);
    policies.insert(TARGET_POLICY.to_string(), vec![target.clone(), target]);
    Ok(SpecFile {
        name: Some("two_state".into()),
        states: Labels::Names(vec!["Left".into(), "Right".into()]),
        actions: Labels::Names(vec!["go_left".into(), "go_right".into()]),
        transition: vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
        reward: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        gamma,
        initial_dist: vec![0.5, 0.5],
        policies,
        features: None,
        interest: None,
        lambda: None,
        seed: None,
    })
}

pub fn fixture_two_state(epsilon: f64, gamma: f64) -> Result<Instance, SpecError> {
    Instance::from_spec(two_state_spec(epsilon, gamma)?, Origin::TwoState { epsilon, gamma })
}

/// The two-state example at `epsilon = 0.5`, where target and behavior are both uniform.
pub fn fixture_on_policy(gamma: f64) -> Result<Instance, SpecError> {
    fixture_two_state(0.5, gamma)
}

/// Parameters of a seeded random ergodic instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFixture {
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    /// Lower bound on every transition and action probability.
    pub min_prob: f64,
    pub gamma: f64,
    /// Gaussian feature columns; tabular features when `None`.
    pub n_features: Option<usize>,
}

impl RandomFixture {
    pub fn new(seed: u64, n_states: usize, n_actions: usize, min_prob: f64) -> Self {
        Self { seed, n_states, n_actions, min_prob, gamma: 0.9, n_features: None }
    }
}

fn random_row(rng: &mut ChaCha8Rng, len: usize, min_prob: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let free = 1.0 - len as f64 * min_prob;
    let mut row: Vec<f64> = raw.iter().map(|w| min_prob + free * w / total).collect();
    // absorb rounding so the row sums to one within the validation tolerance
    let drift: f64 = row.iter().sum::<f64>() - 1.0;
    let (imax, _) = row.iter().enumerate().fold((0, f64::MIN), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
    row[imax] -= drift;
    row
}

/// A random MDP whose transitions and policies all put at least `min_prob`
/// on every outcome, which makes every induced chain ergodic and every
/// importance ratio finite.
pub fn fixture_random(cfg: &RandomFixture) -> Result<Instance, SpecError> {
    let RandomFixture { seed, n_states: n, n_actions: k, min_prob, gamma, n_features } = *cfg;
    if n == 0 || k == 0 {
        return Err(invalid("n_states/n_actions", "need at least one state and one action"));
    }
    if !(min_prob > 0.0) || n as f64 * min_prob > 1.0 || k as f64 * min_prob > 1.0 {
        return Err(invalid("min_prob", format!("min_prob = {min_prob} is infeasible for {n} states and {k} actions")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = (0..k).map(|_| (0..n).map(|_| random_row(&mut rng, n, min_prob)).collect()).collect();
    let reward = (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let initial_dist = random_row(&mut rng, n, 0.0);
    let mut policies = BTreeMap::new();
    policies.insert(TARGET_POLICY.to_string(), (0..n).map(|_| random_row(&mut rng, k, min_prob)).collect());
    policies.insert(BEHAVIOR_POLICY.to_string(), (0..n).map(|_| random_row(&mut rng, k, min_prob)).collect());
    let features = match n_features {
        None => None,
        Some(width) => {
            if width == 0 || width > n {
                return Err(invalid("n_features", format!("{width} features for {n} states")));
            }
            loop {
                let rows: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..width).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
                let m = DMatrix::from_fn(n, width, |i, j| rows[i][j]);
                if m.svd(false, false).singular_values.min() > 1e3 * RANK_TOL {
                    break Some(rows);
                }
            }
        }
    };
    let spec = SpecFile {
        name: Some(format!("random_{seed}")),
        states: Labels::Count(n),
        actions: Labels::Count(k),
        transition,
        reward,
        gamma,
        initial_dist,
        policies,
        features,
        interest: None,
        lambda: None,
        seed: Some(seed),
    };
    Instance::from_spec(spec, Origin::Random { seed, n_states: n, n_actions: k, min_prob })
}

/// Frozen off-policy TD(0) divergence witness (see `examples/find_divergence.rs`).
pub const DIVERGENCE_JSON: &str = include_str!("../../fixtures/divergence.json");

/// SHA-256 of [`DIVERGENCE_JSON`].
pub const DIVERGENCE_SHA256: &str = "634b155ee896ec36214f245607932c24bf824df6e171523ca705d9f777d29545";

/// Loads the divergence witness and re-verifies, at load time, that
/// `Π_{d_μ}γP_π` is not a contraction in the `d_μ`-norm while the ETD(0)
/// bound `sqrt(γ(1−κ))` stays below one.
pub fn fixture_divergence() -> Result<Instance, SpecError> {
    let corrupted = |message: String| SpecError::CorruptedFixture { name: "divergence".into(), message };
    let hash = hex::encode(<sha2::Sha256 as sha2::Digest>::digest(DIVERGENCE_JSON.as_bytes()));
    if hash != DIVERGENCE_SHA256 {
        return Err(corrupted(format!("content hash {hash} does not match {DIVERGENCE_SHA256}")));
    }
    let inst = parse_spec_str(DIVERGENCE_JSON, Origin::Divergence)?;
    let check = || -> crate::Result<(f64, f64)> {
        let chain = induced_chain(&inst.mdp, &inst.target)?;
        let bundle =
            emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &InterestVector::ones(inst.mdp.n_states()))?;
        let td = td0_modulus(&bundle, &chain, &inst.features)?;
        Ok((td, (bundle.gamma * (1.0 - bundle.kappa)).sqrt()))
    };
    let (td, etd_bound) = check().map_err(|e| corrupted(e.to_string()))?;
    if !(td > 1.0) {
        return Err(corrupted(format!("TD(0) modulus {td} is not above 1")));
    }
    if !(etd_bound < 1.0) {
        return Err(corrupted(format!("ETD(0) bound {etd_bound} is not below 1")));
    }
    Ok(inst)
}

/// Looks up a fixture by CLI name.
pub fn fixture_by_name(name: &str, epsilon: f64, gamma: f64, seed: u64) -> Result<Instance, SpecError> {
    match name {
        "two_state" => fixture_two_state(epsilon, gamma),
        "on_policy" => fixture_on_policy(gamma),
        "random" => {
            let mut cfg = RandomFixture::new(seed, 5, 3, 0.05);
            cfg.gamma = gamma;
            cfg.n_features = Some(3);
            fixture_random(&cfg)
        }
        "divergence" => fixture_divergence(),
        other => Err(invalid(
            "fixture",
            format!("unknown fixture '{other}' (expected two_state, on_policy, random or divergence)"),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_rejects_bad_epsilon() {
        assert!(fixture_two_state(0.0, 0.9).is_err());
        assert!(fixture_two_state(1.0, 0.9).is_err());
        assert!(fixture_two_state(0.1, 1.0).is_err());
    }

    #[test]
    fn random_is_deterministic() {
        let cfg = RandomFixture { n_features: Some(2), ..RandomFixture::new(11, 5, 3, 0.05) };
        let a = fixture_random(&cfg).unwrap();
        let b = fixture_random(&cfg).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let c = fixture_random(&RandomFixture { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.content_hash(), c.content_hash());
    }

    #[test]
    fn random_rejects_infeasible_min_prob() {
        assert!(fixture_random(&RandomFixture::new(0, 5, 2, 0.3)).is_err());
    }

    #[test]
    fn random_respects_min_prob() {
        let inst = fixture_random(&RandomFixture::new(4, 6, 3, 0.05)).unwrap();
        for a in 0..3 {
            assert!(inst.mdp.transition(a).iter().all(|&p| p >= 0.05 - 1e-15));
        }
        assert!(inst.behavior.table().iter().all(|&p| p >= 0.05 - 1e-15));
    }
}
