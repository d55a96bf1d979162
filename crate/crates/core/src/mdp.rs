//! Finite MDPs, policies and features, and the Markov chains they induce.

use nalgebra::{DMatrix, DVector};

use crate::error::{EtdError, Result};

/// Absolute tolerance for every probability-vector validation.
pub const PROB_TOL: f64 = 1e-12;

/// Default convergence tolerance for [`stationary_distribution`].
pub const STATIONARY_TOL: f64 = 1e-12;

/// Iteration cap for the power iteration in [`stationary_distribution`].
pub const STATIONARY_MAX_ITERS: usize = 1_000_000;

/// Columns of `Φ` with a singular value below this are treated as dependent.
pub const RANK_TOL: f64 = 1e-10;

fn check_distribution<'a>(values: impl IntoIterator<Item = &'a f64>, what: impl Fn() -> String) -> Result<()> {
    let mut sum = 0.0;
    for &v in values {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(EtdError::NegativeProbability { what: what(), value: v });
        }
        sum += v;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(EtdError::Stochasticity { what: what(), sum });
    }
    Ok(())
}

/// A finite MDP with deterministic rewards `R(s,a)` and constant discount.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transition: Vec<DMatrix<f64>>,
    reward: DMatrix<f64>,
    discount: f64,
    initial_dist: DVector<f64>,
}

impl TabularMdp {
    /// `transition[a][(s, s')]` is `P(s'|s,a)`; `reward[(s, a)]` is `R(s,a)`.
    pub fn new(
        transition: Vec<DMatrix<f64>>,
        reward: DMatrix<f64>,
        discount: f64,
        initial_dist: DVector<f64>,
    ) -> Result<Self> {
        let n_actions = transition.len();
        if n_actions == 0 {
            return Err(EtdError::Dimension("MDP needs at least one action".into()));
        }
        let n_states = transition[0].nrows();
        if n_states == 0 {
            return Err(EtdError::Dimension("MDP needs at least one state".into()));
        }
        for (a, p) in transition.iter().enumerate() {
            if p.nrows() != n_states || p.ncols() != n_states {
                return Err(EtdError::Dimension(format!(
                    "transition[{a}] is {}x{}, expected {n_states}x{n_states}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            for s in 0..n_states {
                check_distribution(p.row(s).iter(), || format!("transition[{a}][{s}]"))?;
            }
        }
        if reward.nrows() != n_states || reward.ncols() != n_actions {
            return Err(EtdError::Dimension(format!(
                "reward is {}x{}, expected {n_states}x{n_actions}",
                reward.nrows(),
                reward.ncols()
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(EtdError::Dimension("reward contains non-finite values".into()));
        }
        check_discount(discount)?;
        if initial_dist.len() != n_states {
            return Err(EtdError::Dimension(format!(
                "initial_dist has length {}, expected {n_states}",
                initial_dist.len()
            )));
        }
        check_distribution(initial_dist.iter(), || "initial_dist".to_string())?;
        Ok(Self { transition, reward, discount, initial_dist })
    }

    pub fn n_states(&self) -> usize {
        self.transition[0].nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.transition.len()
    }

    /// `P(·|·,a)` as a row-stochastic matrix.
    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transition[action]
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transition
    }

    pub fn reward(&self) -> &DMatrix<f64> {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial_dist(&self) -> &DVector<f64> {
        &self.initial_dist
    }
}

pub(crate) fn check_discount(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(EtdError::InvalidParameter { name: "gamma", value: gamma, reason: "discount must lie in [0, 1)" });
    }
    Ok(())
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(EtdError::InvalidParameter {
            name: "lambda",
            value: lambda,
            reason: "bootstrapping parameter must lie in [0, 1)",
        });
    }
    Ok(())
}

/// Action-selection table `pol(a|s)`, one row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    table: DMatrix<f64>,
}

impl Policy {
    pub fn new(table: DMatrix<f64>) -> Result<Self> {
        if table.nrows() == 0 || table.ncols() == 0 {
            return Err(EtdError::Dimension("policy table is empty".into()));
        }
        for s in 0..table.nrows() {
            check_distribution(table.row(s).iter(), || format!("policy row {s}"))?;
        }
        Ok(Self { table })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(EtdError::Dimension("policy rows have unequal lengths".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), n_actions, |s, a| rows[s][a]))
    }

    /// Uniform over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { table: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64) }
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.table[(state, action)]
    }

    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }

    pub fn n_states(&self) -> usize {
        self.table.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.table.ncols()
    }
}

/// The Markov reward process `(P_π, R_π)` obtained by fixing a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedChain {
    pub transition_matrix: DMatrix<f64>,
    pub reward_vector: DVector<f64>,
}

impl InducedChain {
    /// Builds a chain directly from a transition matrix, validating row stochasticity.
    pub fn new(transition_matrix: DMatrix<f64>, reward_vector: DVector<f64>) -> Result<Self> {
        let n = transition_matrix.nrows();
        if transition_matrix.ncols() != n || reward_vector.len() != n {
            return Err(EtdError::Dimension(format!(
                "chain matrix {}x{} with reward vector of length {}",
                n,
                transition_matrix.ncols(),
                reward_vector.len()
            )));
        }
        for s in 0..n {
            check_distribution(transition_matrix.row(s).iter(), || format!("chain row {s}"))?;
        }
        Ok(Self { transition_matrix, reward_vector })
    }

    pub fn n_states(&self) -> usize {
        self.transition_matrix.nrows()
    }
}

/// Feature matrix `Φ` with one row `φ(s)` per state.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    matrix: DMatrix<f64>,
}

impl FeatureMap {
    /// Validates full column rank, which every weighted projection needs.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n_states, n_features) = matrix.shape();
        if n_features == 0 || n_features > n_states {
            return Err(EtdError::Dimension(format!("feature matrix is {n_states}x{n_features}; need 1 <= n <= |S|")));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(EtdError::Dimension("feature matrix contains non-finite values".into()));
        }
        let sigma = matrix.clone().svd(false, false).singular_values.iter().copied().fold(f64::INFINITY, f64::min);
        if !(sigma > RANK_TOL) {
            return Err(EtdError::RankDeficient { sigma });
        }
        Ok(Self { matrix })
    }

    /// Identity features: one indicator per state.
    pub fn tabular(n_states: usize) -> Self {
        Self { matrix: DMatrix::identity(n_states, n_states) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_states(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.matrix.ncols()
    }

    /// `φ(s)` as a column vector.
    pub fn phi(&self, state: usize) -> DVector<f64> {
        self.matrix.row(state).transpose()
    }

    /// `Φθ`, the value estimate at every state.
    pub fn values(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.matrix * theta
    }
}

/// A probability vector over states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution(DVector<f64>);

impl StateDistribution {
    pub fn new(d: DVector<f64>) -> Result<Self> {
        let mut sum = 0.0;
        for &x in d.iter() {
            if !(x >= 0.0) {
                return Err(EtdError::NegativeProbability { what: "state distribution".into(), value: x });
            }
            sum += x;
        }
        if (sum - 1.0).abs() > 1e-10 {
            return Err(EtdError::Stochasticity { what: "state distribution".into(), sum });
        }
        Ok(Self(d))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&x| x > 0.0)
    }
}

/// `P_π(s'|s) = Σ_a π(a|s) P(s'|s,a)` and `R_π(s) = Σ_a π(a|s) R(s,a)`.
pub fn induced_chain(mdp: &TabularMdp, pol: &Policy) -> Result<InducedChain> {
    let (n, k) = (mdp.n_states(), mdp.n_actions());
    if pol.n_states() != n || pol.n_actions() != k {
        return Err(EtdError::Dimension(format!(
            "policy is {}x{}, MDP has {n} states and {k} actions",
            pol.n_states(),
            pol.n_actions()
        )));
    }
    let mut p = DMatrix::zeros(n, n);
    let mut r = DVector::zeros(n);
    for s in 0..n {
        for a in 0..k {
            let w = pol.prob(s, a);
            if w == 0.0 {
                continue;
            }
            r[s] += w * mdp.reward()[(s, a)];
            for s2 in 0..n {
                p[(s, s2)] += w * mdp.transition(a)[(s, s2)];
            }
        }
    }
    Ok(InducedChain { transition_matrix: p, reward_vector: r })
}

/// Number of singular values of `I − P` below which eigenvalue 1 is counted as repeated.
const MULTIPLICITY_TOL: f64 = 1e-9;

/// Stationary distribution of an ergodic chain by power iteration on `dᵀ ← dᵀP`.
///
/// Fails with [`EtdError::NonErgodic`] when eigenvalue 1 of `P` is not simple
/// (several closed classes) or when the iteration does not settle within
/// [`STATIONARY_MAX_ITERS`] steps (periodic chains).
pub fn stationary_distribution(chain: &InducedChain, tol: f64) -> Result<StateDistribution> {
    let p = &chain.transition_matrix;
    let n = p.nrows();

    let gap = (DMatrix::identity(n, n) - p).svd(false, false).singular_values;
    let null_dim = gap.iter().filter(|&&s| s < MULTIPLICITY_TOL).count();
    if null_dim > 1 {
        return Err(EtdError::NonErgodic(format!(
            "eigenvalue 1 has multiplicity {null_dim}; stationary distribution is not unique"
        )));
    }

    let pt = p.transpose();
    let mut d = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..STATIONARY_MAX_ITERS {
        let mut next = &pt * &d;
        let total = next.sum();
        next /= total;
        let change = (&next - &d).amax();
        d = next;
        if change <= tol {
            // post-condition is checked on the returned vector itself
            let residual = (&pt * &d - &d).amax();
            if residual <= tol {
                return StateDistribution::new(d);
            }
        }
    }
    Err(EtdError::NonErgodic(format!(
        "power iteration did not converge to tolerance {tol:e} within {STATIONARY_MAX_ITERS} iterations"
    )))
}

/// Exact `V^π = (I − γP_π)^{-1} R_π`.
pub fn true_value(chain: &InducedChain, gamma: f64) -> Result<DVector<f64>> {
    check_discount(gamma)?;
    let n = chain.n_states();
    let a = DMatrix::identity(n, n) - &chain.transition_matrix * gamma;
    a.lu().solve(&chain.reward_vector).ok_or_else(|| EtdError::Numerical("I - γP is singular".into()))
}

/// Importance ratios `ρ(s,a) = π(a|s)/μ(a|s)`, zero where both policies are zero.
pub fn importance_ratios(target: &Policy, behavior: &Policy) -> Result<DMatrix<f64>> {
    if target.table().shape() != behavior.table().shape() {
        return Err(EtdError::Dimension(format!(
            "target policy is {:?}, behavior policy is {:?}",
            target.table().shape(),
            behavior.table().shape()
        )));
    }
    let (n, k) = target.table().shape();
    let mut rho = DMatrix::zeros(n, k);
    for s in 0..n {
        for a in 0..k {
            let (pi, mu) = (target.prob(s, a), behavior.prob(s, a));
            if mu > 0.0 {
                rho[(s, a)] = pi / mu;
            } else if pi > 0.0 {
                return Err(EtdError::Coverage { state: s, action: a });
            }
        }
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_state(eps: f64) -> (TabularMdp, Policy, Policy) {
        let left = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let right = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let mdp =
            TabularMdp::new(vec![left, right], DMatrix::zeros(2, 2), 0.9, DVector::from_vec(vec![0.5, 0.5])).unwrap();
        let target = Policy::from_rows(&[vec![eps, 1.0 - eps], vec![eps, 1.0 - eps]]).unwrap();
        let behavior = Policy::from_rows(&[vec![1.0 - eps, eps], vec![1.0 - eps, eps]]).unwrap();
        (mdp, target, behavior)
    }

    #[test]
    fn rejects_row_not_summing_to_one() {
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 0.4, 0.0, 1.0]);
        let err = TabularMdp::new(vec![bad], DMatrix::zeros(2, 1), 0.5, DVector::from_vec(vec![1.0, 0.0])).unwrap_err();
        assert!(matches!(err, EtdError::Stochasticity { ref what, .. } if what == "transition[0][0]"));
    }

    #[test]
    fn rejects_discount_of_one() {
        let p = DMatrix::identity(1, 1);
        let err = TabularMdp::new(vec![p], DMatrix::zeros(1, 1), 1.0, DVector::from_element(1, 1.0));
        assert!(matches!(err, Err(EtdError::InvalidParameter { name: "gamma", .. })));
    }

    #[test]
    fn single_action_chain_is_the_action_matrix() {
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.3, 0.5, 0.0, 0.5, 0.5, 1.0, 0.0, 0.0]);
        let mdp = TabularMdp::new(
            vec![p.clone()],
            DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]),
            0.5,
            DVector::from_element(3, 1.0 / 3.0),
        )
        .unwrap();
        let chain = induced_chain(&mdp, &Policy::uniform(3, 1)).unwrap();
        assert_eq!(chain.transition_matrix, p);
    }

    #[test]
    fn two_state_target_chain() {
        let (mdp, target, behavior) = two_state(0.1);
        let chain = induced_chain(&mdp, &target).unwrap();
        for s in 0..2 {
            assert!((chain.transition_matrix[(s, 0)] - 0.1).abs() < 1e-15);
            assert!((chain.transition_matrix[(s, 1)] - 0.9).abs() < 1e-15);
        }
        let d_mu = stationary_distribution(&induced_chain(&mdp, &behavior).unwrap(), STATIONARY_TOL).unwrap();
        assert!((d_mu.as_vector()[0] - 0.9).abs() < 1e-12);
        assert!((d_mu.as_vector()[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn one_state_stationary() {
        let chain = InducedChain::new(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let d = stationary_distribution(&chain, STATIONARY_TOL).unwrap();
        assert_eq!(d.as_vector()[0], 1.0);
    }

    #[test]
    fn periodic_chain_is_rejected() {
        // period 2 with a non-uniform stationary law, so the iterates oscillate
        let p = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.5, 0.0, 0.5, 0.0, 1.0, 0.0]);
        let chain = InducedChain::new(p, DVector::zeros(3)).unwrap();
        assert!(matches!(stationary_distribution(&chain, STATIONARY_TOL), Err(EtdError::NonErgodic(_))));
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let chain = InducedChain::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert!(matches!(stationary_distribution(&chain, STATIONARY_TOL), Err(EtdError::NonErgodic(_))));
    }

    #[test]
    fn value_of_zero_and_constant_rewards() {
        let p = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4]);
        let zero = InducedChain::new(p.clone(), DVector::zeros(2)).unwrap();
        assert_eq!(true_value(&zero, 0.9).unwrap(), DVector::zeros(2));
        let ones = InducedChain::new(p, DVector::from_element(2, 1.0)).unwrap();
        let v = true_value(&ones, 0.9).unwrap();
        assert!(v.iter().all(|x| (x - 10.0).abs() < 1e-12));
    }

    #[test]
    fn ratios_for_two_state_example() {
        let (_, target, behavior) = two_state(0.1);
        let rho = importance_ratios(&target, &behavior).unwrap();
        assert!((rho[(0, 1)] - 0.9 / 0.1).abs() < 1e-12);
        assert!((rho[(0, 0)] - 0.1 / 0.9).abs() < 1e-15);
        let same = importance_ratios(&behavior, &behavior).unwrap();
        assert!(same.iter().all(|&r| r == 1.0));
    }

    #[test]
    fn deterministic_target_uniform_behavior() {
        let target = Policy::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let rho = importance_ratios(&target, &Policy::uniform(1, 3)).unwrap();
        assert_eq!(rho[(0, 2)], 3.0);
        assert_eq!(rho[(0, 0)], 0.0);
    }

    #[test]
    fn coverage_violation_names_the_pair() {
        let target = Policy::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let behavior = Policy::from_rows(&[vec![0.5, 0.5], vec![0.0, 1.0]]).unwrap();
        assert_eq!(importance_ratios(&target, &behavior).unwrap_err(), EtdError::Coverage { state: 1, action: 0 });
    }

    #[test]
    fn rank_deficient_features_rejected() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert!(matches!(FeatureMap::new(phi), Err(EtdError::RankDeficient { .. })));
    }
}
