use etd_core::audit::{fixture_on_policy, fixture_random, fixture_two_state, RandomFixture};
use etd_core::emphasis::{emphasis_bundle, emphasis_vector, plambda, InterestVector};
use etd_core::mdp::{induced_chain, stationary_distribution, STATIONARY_TOL};
use etd_core::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn plambda_matches_series_oracle() {
    let inst = fixture_random(&RandomFixture::new(21, 5, 2, 0.02)).unwrap();
    let p = induced_chain(&inst.mdp, &inst.target).unwrap().transition_matrix;
    let (gamma, lambda) = (0.9, 0.5);
    let pl = plambda(&p, gamma, lambda).unwrap();
    // (1−λ) Σ_k λ^k (γP)^{k+1}
    let gp = &p * gamma;
    let mut power = gp.clone();
    let mut sum = DMatrix::zeros(5, 5);
    for k in 0..200 {
        sum += &power * lambda.powi(k);
        power = &power * &gp;
    }
    sum *= 1.0 - lambda;
    assert!((pl - sum).amax() < 1e-8);
}

#[test]
fn emphasis_near_lambda_one_matches_series() {
    let inst = fixture_random(&RandomFixture::new(8, 4, 3, 0.02)).unwrap();
    let chain = induced_chain(&inst.mdp, &inst.target).unwrap();
    let d_mu = stationary_distribution(&induced_chain(&inst.mdp, &inst.behavior).unwrap(), STATIONARY_TOL).unwrap();
    let interest = InterestVector::new(DVector::from_vec(vec![0.5, 1.0, 2.0, 1.5])).unwrap();
    let pl = plambda(&chain.transition_matrix, 0.9, 0.999).unwrap();
    let m = emphasis_vector(&interest, &d_mu, &pl).unwrap();
    // mᵀ = iᵀ Σ_k P_λ^k, which converges fast since the row sums are β ≈ 0.009
    let i_w = interest.as_vector().component_mul(d_mu.as_vector());
    let mut term = i_w.clone();
    let mut sum = i_w.clone();
    for _ in 0..60 {
        term = pl.tr_mul(&term);
        sum += &term;
    }
    assert!((&m - sum).amax() < 1e-12);
    assert!(m.iter().zip(i_w.iter()).all(|(m, i)| m >= i));
}

#[test]
fn on_policy_bundle_degenerates() {
    let gamma = 0.9;
    let inst = fixture_on_policy(gamma).unwrap();
    let b = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &InterestVector::ones(2)).unwrap();
    let d_pi = b.d_pi.as_ref().unwrap().as_vector();
    assert!((&b.f - d_pi / (1.0 - gamma)).amax() < 1e-12);
    assert!((&b.m - &b.f).amax() < 1e-12);
    assert!((b.kappa - (1.0 - gamma)).abs() < 1e-12);
    assert_eq!(b.beta, gamma);
}

#[test]
fn two_state_bundle_closed_form() {
    let (eps, gamma) = (0.1, 0.9);
    let inst = fixture_two_state(eps, gamma).unwrap();
    let b = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &inst.interest).unwrap();
    assert!((b.f[0] - 1.8).abs() < 1e-12 && (b.f[1] - 8.2).abs() < 1e-12);
    assert!((b.kappa - 0.1 / 8.2).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bundle_invariants(
        seed in 0u64..100_000,
        n in 2usize..9,
        k in 2usize..4,
        gamma in prop::sample::select(vec![0.0, 0.3, 0.5, 0.9, 0.99]),
        lambda in prop::sample::select(vec![0.0, 0.1, 0.5, 0.9, 0.99]),
        weights in prop::collection::vec(0.1f64..3.0, 8),
    ) {
        let cfg = RandomFixture { gamma, ..RandomFixture::new(seed, n, k, 0.02) };
        let inst = fixture_random(&cfg).unwrap();
        let interest = InterestVector::new(DVector::from_column_slice(&weights[..n])).unwrap();
        let chain = induced_chain(&inst.mdp, &inst.target).unwrap();
        let b = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, lambda, &interest).unwrap();
        let r = b.residuals(&chain.transition_matrix);
        prop_assert!(r.followon <= 1e-10, "{r:?}");
        prop_assert!(r.emphasis <= 1e-10, "{r:?}");
        prop_assert!(r.followon_mass <= 1e-10, "{r:?}");
        prop_assert!(r.plambda_rowsum <= 1e-10, "{r:?}");
        prop_assert!(r.followon_below_dmu <= 0.0 && r.emphasis_below_interest <= 0.0, "{r:?}");
        prop_assert!(b.plambda.iter().all(|&x| x >= 0.0));
        prop_assert!(b.kappa > 0.0 && b.kappa <= 1.0 - gamma + 1e-12, "kappa {}", b.kappa);
    }

    #[test]
    fn kappa_is_one_minus_gamma_on_policy(seed in 0u64..100_000, n in 2usize..8, gamma in 0.0f64..0.99) {
        let cfg = RandomFixture { gamma, ..RandomFixture::new(seed, n, 3, 0.02) };
        let inst = fixture_random(&cfg).unwrap();
        let b = emphasis_bundle(&inst.mdp, &inst.behavior, &inst.behavior, 0.0, &InterestVector::ones(n)).unwrap();
        prop_assert!((b.kappa - (1.0 - gamma)).abs() <= 1e-9);
    }

    #[test]
    fn unit_interest_at_lambda_zero_gives_f(seed in 0u64..100_000, n in 2usize..8) {
        let inst = fixture_random(&RandomFixture::new(seed, n, 2, 0.02)).unwrap();
        let b = emphasis_bundle(&inst.mdp, &inst.target, &inst.behavior, 0.0, &InterestVector::ones(n)).unwrap();
        prop_assert!((&b.m - &b.f).amax() <= 1e-10);
    }
}
