//! Seeded search for an instance on which off-policy TD(0) diverges while
//! ETD(0) stays bounded. Candidates are two-state, two-action MDPs where
//! action `a` leads to state `a` with high probability, with one feature.
//! The first instance that passes every check is printed as a spec file and
//! frozen as `fixtures/divergence.json`:
//!
//!     cargo run --release -p etd-core --example find_divergence > crates/core/fixtures/divergence.json

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use etd_core::audit::spec::{write_spec, Instance, Labels, Origin, SpecFile};
use etd_core::emphasis::{emphasis_bundle, InterestVector};
use etd_core::learner::{run_learning, Algorithm, LearningConfig, LearningProblem, StepSchedule};
use etd_core::mdp::induced_chain;
use etd_core::operators::td0_modulus;

const RUN_SEED: u64 = 2024;
const STEPS: u64 = 100_000;

fn candidate(seed: u64) -> SpecFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Vec::new();
    for a in 0..2 {
        let slip: f64 = rng.random_range(0.0..0.2);
        let row = if a == 0 { vec![1.0 - slip, slip] } else { vec![slip, 1.0 - slip] };
        transition.push(vec![row.clone(), row]);
    }
    let mut policy = |lo: f64| -> Vec<Vec<f64>> {
        (0..2)
            .map(|_| {
                let p: f64 = rng.random_range(lo..1.0 - lo);
                vec![p, 1.0 - p]
            })
            .collect()
    };
    let target = policy(0.02);
    let behavior = policy(0.2);
    let reward = (0..2).map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let gamma = [0.8, 0.9, 0.95][rng.random_range(0..3)];
    let c: f64 = rng.random_range(-3.0..3.0);
    let scale = c.abs().max(1.0);
    let mut policies = BTreeMap::new();
    policies.insert("target".to_string(), target);
    policies.insert("behavior".to_string(), behavior);
    SpecFile {
        name: Some("divergence".into()),
        states: Labels::Count(2),
        actions: Labels::Count(2),
        transition,
        reward,
        gamma,
        initial_dist: vec![0.5, 0.5],
        policies,
        features: Some(vec![vec![1.0 / scale], vec![c / scale]]),
        interest: None,
        lambda: None,
        seed: Some(RUN_SEED),
    }
}

fn main() {
    let mut counts = [0usize; 2];
    for seed in 0..1_000_000u64 {
        let Ok(inst) = Instance::from_spec(candidate(seed), Origin::Divergence) else { continue };
        let ones = InterestVector::ones(2);
        let Ok(bundle) = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &ones) else { continue };
        let chain = induced_chain(&inst.mdp, &inst.target).unwrap();
        let td = td0_modulus(&bundle, &chain, &inst.features).unwrap();
        if td <= 1.0 {
            continue;
        }
        counts[0] += 1;
        let problem = LearningProblem {
            mdp: &inst.mdp,
            target: &inst.target,
            behavior: &inst.behavior,
            features: &inst.features,
            interest: &ones,
        };
        let base = LearningConfig {
            algorithm: Algorithm::Td0,
            schedule: StepSchedule::Constant { alpha: 0.01 },
            steps: STEPS,
            seed: RUN_SEED,
            stride: 1_000,
            lambda: 0.0,
        };
        let td_run = run_learning(&problem, &base).unwrap();
        let td_max = td_run.points.iter().map(|p| p.theta_norm).fold(0.0, f64::max);
        if td_max.is_nan() || td_max <= 1e4 {
            continue;
        }
        counts[1] += 1;
        let etd_run = run_learning(&problem, &LearningConfig { algorithm: Algorithm::Etd0, ..base }).unwrap();
        let etd_max = etd_run.points.iter().map(|p| p.theta_norm).fold(0.0, f64::max);
        if etd_max.is_nan() || etd_max >= 10.0 {
            continue;
        }
        eprintln!(
            "seed {seed}: gamma {}, td0 modulus {td:.4}, etd0 bound {:.4}, max |theta| td0 {td_max:.3e}, etd0 {etd_max:.3}",
            bundle.gamma,
            (bundle.gamma * (1.0 - bundle.kappa)).sqrt()
        );
        print!("{}", write_spec(&inst.spec));
        return;
    }
    eprintln!("no instance found; candidates per stage: {counts:?}");
    std::process::exit(1);
}
