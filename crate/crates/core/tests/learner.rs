use etd_core::audit::{fixture_divergence, fixture_random, fixture_two_state, RandomFixture};
use etd_core::emphasis::{emphasis_bundle, InterestVector};
use etd_core::learner::*;
use etd_core::mdp::{induced_chain, stationary_distribution, FeatureMap, STATIONARY_TOL};
use etd_core::DVector;
use proptest::prelude::*;

#[test]
fn etd_lambda_three_step_trace() {
    let features = FeatureMap::tabular(2);
    let interest = InterestVector::new(DVector::from_vec(vec![1.0, 2.0])).unwrap();
    let steps = [
        Transition { state: 0, action: 0, reward: 1.0, next_state: 1, rho: 2.0 },
        Transition { state: 1, action: 0, reward: 0.0, next_state: 0, rho: 0.5 },
        Transition { state: 0, action: 0, reward: 2.0, next_state: 0, rho: 1.0 },
    ];
    let mut s = EtdLambdaState::new(2);
    let mut seen = Vec::new();
    for tr in &steps {
        s = etd_lambda_step(&s, tr, 0.1, 0.9, 0.5, &interest, &features).unwrap();
        seen.push((s.followon, s.emphasis));
    }
    // F: 1, 0.9·2·1 + 2, 0.9·0.5·3.8 + 1; M = 0.5·i + 0.5·F
    let expected = [(1.0, 1.0), (3.8, 2.9), (2.71, 1.855)];
    for ((f, m), (ef, em)) in seen.iter().zip(expected) {
        assert!((f - ef).abs() < 1e-12 && (m - em).abs() < 1e-12);
    }
    assert!((s.trace[0] - 2.0575).abs() < 1e-12 && (s.trace[1] - 0.6525).abs() < 1e-12);
    assert!((s.theta[0] - 0.6153183425).abs() < 1e-12);
    assert!((s.theta[1] - 0.1552421475).abs() < 1e-12);
}

#[test]
fn etd0_first_step() {
    let features = FeatureMap::new(etd_core::DMatrix::from_row_slice(2, 1, &[2.0, 1.0])).unwrap();
    let tr = Transition { state: 0, action: 1, reward: 3.0, next_state: 1, rho: 1.5 };
    let s = etd0_step(&Etd0State::new(1), &tr, 0.1, 0.9, &features).unwrap();
    assert_eq!(s.followon, 1.0);
    assert!((s.theta[0] - 0.1 * 1.5 * 3.0 * 2.0).abs() < 1e-15);
}

#[test]
fn visit_frequencies_match_behavior_stationary() {
    let inst = fixture_two_state(0.1, 0.9).unwrap();
    let traj = simulate(&inst.mdp, &inst.behavior, &inst.target, 42, 1_000_000).unwrap();
    let mut counts = [0usize; 2];
    for tr in &traj.steps {
        counts[tr.state] += 1;
    }
    let d = stationary_distribution(&induced_chain(&inst.mdp, &inst.behavior).unwrap(), STATIONARY_TOL).unwrap();
    for (s, &count) in counts.iter().enumerate() {
        let freq = count as f64 / traj.steps.len() as f64;
        assert!((freq - d.as_vector()[s]).abs() < 0.01, "state {s}: {freq}");
    }
}

#[test]
fn followon_trace_tracks_followon_vector() {
    // ε = 0.4, γ = 0.8 keeps E_μ[(γρ)²] below one, so F has finite variance
    let inst = fixture_two_state(0.4, 0.8).unwrap();
    let b = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &InterestVector::ones(2)).unwrap();
    let features = FeatureMap::tabular(2);
    let sampler = BehaviorSampler::new(&inst.mdp, &inst.behavior, &inst.target, 7).unwrap();
    let mut state = Etd0State::new(2);
    let mut sums = [0.0; 2];
    let n = 1_000_000;
    for tr in sampler.take(n) {
        state = etd0_step(&state, &tr, 0.0, 0.8, &features).unwrap();
        sums[tr.state] += state.followon;
    }
    for (s, &sum) in sums.iter().enumerate() {
        let est = sum / n as f64;
        assert!((est / b.f[s] - 1.0).abs() < 0.05, "state {s}: {est} vs {}", b.f[s]);
    }
}

#[test]
fn td0_with_unit_ratios_is_plain_td() {
    let inst = fixture_random(&RandomFixture::new(3, 4, 2, 0.05)).unwrap();
    let traj = simulate(&inst.mdp, &inst.behavior, &inst.behavior, 1, 500).unwrap();
    let gamma = inst.mdp.discount();
    let phi = inst.features.matrix();
    let mut state = Td0State::new(inst.features.n_features());
    let mut theta = DVector::zeros(inst.features.n_features());
    for tr in &traj.steps {
        assert_eq!(tr.rho, 1.0);
        state = td0_step(&state, tr, 0.05, gamma, &inst.features).unwrap();
        let v = phi.row(tr.state).transpose().dot(&theta);
        let v2 = phi.row(tr.next_state).transpose().dot(&theta);
        let delta = tr.reward + gamma * v2 - v;
        theta += phi.row(tr.state).transpose() * (0.05 * delta);
        assert!((&state.theta - &theta).amax() < 1e-12);
    }
}

fn two_state_problem(inst: &etd_core::audit::Instance) -> LearningProblem<'_> {
    LearningProblem {
        mdp: &inst.mdp,
        target: &inst.target,
        behavior: &inst.behavior,
        features: &inst.features,
        interest: &inst.interest,
    }
}

#[test]
fn runs_are_deterministic_per_seed() {
    let inst = fixture_two_state(0.3, 0.8).unwrap();
    let problem = two_state_problem(&inst);
    let cfg = LearningConfig { steps: 5_000, stride: 500, seed: 9, ..Default::default() };
    let a = run_learning(&problem, &cfg).unwrap();
    let b = run_learning(&problem, &cfg).unwrap();
    assert_eq!(a, b);
    let c = run_learning(&problem, &LearningConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.final_theta, c.final_theta);
    assert_eq!(a.config_hash, c.config_hash);
    let d = LearningConfig { stride: 100, ..cfg };
    assert_ne!(a.config_hash, d.config_hash());
}

#[test]
fn zero_steps_records_initial_point() {
    let inst = fixture_two_state(0.3, 0.8).unwrap();
    let cfg = LearningConfig { steps: 0, ..Default::default() };
    let curve = run_learning(&two_state_problem(&inst), &cfg).unwrap();
    assert_eq!(curve.points.len(), 1);
    assert_eq!(curve.points[0].step, 0);
    assert_eq!(curve.final_theta, DVector::zeros(inst.features.n_features()));
}

#[test]
fn csv_has_header_and_one_row_per_point() {
    let inst = fixture_two_state(0.3, 0.8).unwrap();
    let cfg = LearningConfig { steps: 1_050, stride: 100, ..Default::default() };
    let curve = run_learning(&two_state_problem(&inst), &cfg).unwrap();
    let mut buf = Vec::new();
    curve.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "step,distance_m,theta_norm,F_value");
    // 0, 100, ..., 1000, 1050
    assert_eq!(lines.len(), 1 + 12);
    assert!(lines.last().unwrap().starts_with("1050,"));
    let td = run_learning(&two_state_problem(&inst), &LearningConfig { algorithm: Algorithm::Td0, ..cfg }).unwrap();
    let mut buf = Vec::new();
    td.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn on_policy_tabular_etd_converges() {
    let inst = fixture_random(&RandomFixture::new(12, 3, 2, 0.05)).unwrap();
    let features = FeatureMap::tabular(3);
    let problem = LearningProblem {
        mdp: &inst.mdp,
        target: &inst.behavior,
        behavior: &inst.behavior,
        features: &features,
        interest: &inst.interest,
    };
    for algorithm in [Algorithm::Etd0, Algorithm::EtdLambda, Algorithm::Td0] {
        let cfg = LearningConfig { algorithm, lambda: 0.5, ..Default::default() };
        let curve = run_learning(&problem, &cfg).unwrap();
        assert!(
            curve.final_distance() < 0.05 * curve.value_norm,
            "{algorithm:?}: {} vs {}",
            curve.final_distance(),
            curve.value_norm
        );
    }
}

#[test]
fn td_diverges_where_etd_does_not() {
    let inst = fixture_divergence().unwrap();
    let problem = two_state_problem(&inst);
    let cfg = LearningConfig {
        steps: 100_000,
        stride: 10_000,
        schedule: StepSchedule::Constant { alpha: 0.01 },
        ..Default::default()
    };
    let td = run_learning(&problem, &LearningConfig { algorithm: Algorithm::Td0, ..cfg }).unwrap();
    assert!(td.diverged(), "td final distance {}", td.final_distance());
    let etd = run_learning(&problem, &cfg).unwrap();
    assert!(!etd.diverged(), "etd final distance {}", etd.final_distance());
}

#[test]
fn bad_configs_are_rejected() {
    let inst = fixture_two_state(0.3, 0.8).unwrap();
    let problem = two_state_problem(&inst);
    for cfg in [
        LearningConfig { stride: 0, ..Default::default() },
        LearningConfig { schedule: StepSchedule::Constant { alpha: 0.0 }, ..Default::default() },
        LearningConfig { schedule: StepSchedule::Harmonic { alpha0: 0.1, offset: -1.0 }, ..Default::default() },
        LearningConfig { algorithm: Algorithm::EtdLambda, lambda: 1.5, ..Default::default() },
    ] {
        assert!(run_learning(&problem, &cfg).is_err(), "{cfg:?}");
    }
    assert!("etd1".parse::<Algorithm>().is_err());
    assert_eq!("etdlambda".parse::<Algorithm>().unwrap(), Algorithm::EtdLambda);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn etd_lambda_at_zero_is_etd0(seed in 0u64..10_000, alpha in 0.001f64..0.5) {
        let inst = fixture_random(&RandomFixture::new(seed, 4, 3, 0.05)).unwrap();
        let gamma = inst.mdp.discount();
        let traj = simulate(&inst.mdp, &inst.behavior, &inst.target, seed, 200).unwrap();
        let ones = InterestVector::ones(4);
        let mut a = Etd0State::new(inst.features.n_features());
        let mut b = EtdLambdaState::new(inst.features.n_features());
        for tr in &traj.steps {
            a = etd0_step(&a, tr, alpha, gamma, &inst.features).unwrap();
            b = etd_lambda_step(&b, tr, alpha, gamma, 0.0, &ones, &inst.features).unwrap();
            prop_assert_eq!(&a.theta, &b.theta);
            prop_assert_eq!(a.followon, b.followon);
        }
    }

    #[test]
    fn followon_is_at_least_interest(seed in 0u64..10_000) {
        let inst = fixture_random(&RandomFixture::new(seed, 3, 2, 0.05)).unwrap();
        let traj = simulate(&inst.mdp, &inst.behavior, &inst.target, seed, 100).unwrap();
        let mut s = EtdLambdaState::new(inst.features.n_features());
        for tr in &traj.steps {
            s = etd_lambda_step(&s, tr, 0.01, 0.9, 0.3, &inst.interest, &inst.features).unwrap();
            prop_assert!(s.followon >= inst.interest.get(tr.state));
            prop_assert!(s.emphasis >= inst.interest.get(tr.state) - 1e-12);
        }
    }
}
