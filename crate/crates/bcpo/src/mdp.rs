//! Exact finite-MDP machinery: the ground-truth model and the oracle
//! quantities (policy evaluation, occupancy measures, returns) that every
//! estimator in this crate is checked against.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BcpoError, Result};

pub const PROB_TOL: f64 = 1e-12;

/// A finite MDP with known transitions and mean rewards.
///
/// Terminal states follow the absorbing-zero convention: they self-loop
/// with zero reward, so exact evaluation assigns them value zero and
/// episode simulation may stop upon entering them.
#[derive(Debug, Clone)]
pub struct TabularMDP {
    pub n_states: usize,
    pub n_actions: usize,
    /// Transition probabilities indexed (s, a, s').
    pub transition: Array3<f64>,
    /// Expected immediate reward indexed (s, a).
    pub mean_reward: Array2<f64>,
    /// Optional realized reward per outcome (s, a, s'). When present,
    /// simulation draws rewards from it; its expectation under
    /// `transition` must equal `mean_reward`.
    pub outcome_reward: Option<Array3<f64>>,
    pub discount: f64,
    pub initial_dist: Array1<f64>,
    pub terminal_mask: Vec<bool>,
}

impl TabularMDP {
    pub fn new(
        transition: Array3<f64>,
        mean_reward: Array2<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
        terminal_mask: Vec<bool>,
    ) -> Result<Self> {
        let (n_states, n_actions, _) = transition.dim();
        let mdp = TabularMDP {
            n_states,
            n_actions,
            transition,
            mean_reward,
            outcome_reward: None,
            discount,
            initial_dist,
            terminal_mask,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn with_outcome_reward(mut self, outcome_reward: Array3<f64>) -> Result<Self> {
        self.outcome_reward = Some(outcome_reward);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (s, a, s2) = self.transition.dim();
        if s != self.n_states || a != self.n_actions || s2 != self.n_states {
            return Err(BcpoError::validation("transition tensor shape mismatch"));
        }
        if self.mean_reward.dim() != (s, a) {
            return Err(BcpoError::validation("mean_reward shape mismatch"));
        }
        if self.initial_dist.len() != s || self.terminal_mask.len() != s {
            return Err(BcpoError::validation("initial_dist/terminal_mask length mismatch"));
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(BcpoError::validation(format!(
                "discount must lie in [0, 1), got {}",
                self.discount
            )));
        }
        for state in 0..s {
            for action in 0..a {
                let mut row_sum = 0.0;
                for next in 0..s {
                    let p = self.transition[[state, action, next]];
                    if !p.is_finite() || p < 0.0 {
                        return Err(BcpoError::validation(format!(
                            "transition({state},{action},{next}) = {p} is not a probability"
                        )));
                    }
                    row_sum += p;
                }
                if (row_sum - 1.0).abs() > PROB_TOL {
                    return Err(BcpoError::validation(format!(
                        "transition row ({state},{action}) sums to {row_sum}"
                    )));
                }
                if !self.mean_reward[[state, action]].is_finite() {
                    return Err(BcpoError::validation("non-finite mean reward"));
                }
            }
            if self.terminal_mask[state] {
                for action in 0..a {
                    if (self.transition[[state, action, state]] - 1.0).abs() > PROB_TOL {
                        return Err(BcpoError::validation(format!(
                            "terminal state {state} must self-loop"
                        )));
                    }
                    if self.mean_reward[[state, action]] != 0.0 {
                        return Err(BcpoError::validation(format!(
                            "terminal state {state} must have zero reward"
                        )));
                    }
                }
                if self.initial_dist[state] != 0.0 {
                    return Err(BcpoError::validation(format!(
                        "initial distribution assigns mass to terminal state {state}"
                    )));
                }
            }
        }
        let init_sum: f64 = self.initial_dist.iter().sum();
        if (init_sum - 1.0).abs() > PROB_TOL || self.initial_dist.iter().any(|p| *p < 0.0) {
            return Err(BcpoError::validation(format!(
                "initial distribution sums to {init_sum}"
            )));
        }
        if let Some(outcome) = &self.outcome_reward {
            if outcome.dim() != (s, a, s) {
                return Err(BcpoError::validation("outcome_reward shape mismatch"));
            }
            for state in 0..s {
                for action in 0..a {
                    let mut expected = 0.0;
                    for next in 0..s {
                        expected += self.transition[[state, action, next]]
                            * outcome[[state, action, next]];
                    }
                    if (expected - self.mean_reward[[state, action]]).abs() > 1e-10 {
                        return Err(BcpoError::validation(format!(
                            "outcome_reward inconsistent with mean_reward at ({state},{action})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Seeded random MDP without terminal states. Transition rows are
    /// normalized exponentials, rewards are uniform on [0, 1], and the
    /// initial distribution is uniform. Used by property-test corpora.
    pub fn random(n_states: usize, n_actions: usize, discount: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut transition = Array3::zeros((n_states, n_actions, n_states));
        let mut mean_reward = Array2::zeros((n_states, n_actions));
        let mut outcome = Array3::zeros((n_states, n_actions, n_states));
        for s in 0..n_states {
            for a in 0..n_actions {
                let mut row_sum = 0.0;
                for s2 in 0..n_states {
                    let w: f64 = rng.random_range(0.05..1.0);
                    transition[[s, a, s2]] = w;
                    row_sum += w;
                }
                for s2 in 0..n_states {
                    transition[[s, a, s2]] /= row_sum;
                    outcome[[s, a, s2]] = rng.random_range(0.0..1.0);
                }
                let mut expected = 0.0;
                for s2 in 0..n_states {
                    expected += transition[[s, a, s2]] * outcome[[s, a, s2]];
                }
                mean_reward[[s, a]] = expected;
            }
        }
        let initial_dist = Array1::from_elem(n_states, 1.0 / n_states as f64);
        TabularMDP {
            n_states,
            n_actions,
            transition,
            mean_reward,
            outcome_reward: Some(outcome),
            discount,
            initial_dist,
            terminal_mask: vec![false; n_states],
        }
    }

    /// Realized reward of a single transition (s, a) -> s'.
    pub fn realized_reward(&self, s: usize, a: usize, s_next: usize) -> f64 {
        match &self.outcome_reward {
            Some(outcome) => outcome[[s, a, s_next]],
            None => self.mean_reward[[s, a]],
        }
    }
}

/// A stationary stochastic policy: one probability row per state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub probs: Array2<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (n_states, n_actions) = probs.dim();
        if n_actions == 0 || n_states == 0 {
            return Err(BcpoError::validation("policy must be non-empty"));
        }
        for s in 0..n_states {
            let mut row_sum = 0.0;
            for a in 0..n_actions {
                let p = probs[[s, a]];
                if !p.is_finite() || p < 0.0 {
                    return Err(BcpoError::validation(format!(
                        "policy({s},{a}) = {p} is not a probability"
                    )));
                }
                row_sum += p;
            }
            if (row_sum - 1.0).abs() > PROB_TOL {
                return Err(BcpoError::validation(format!(
                    "policy row {s} sums to {row_sum}"
                )));
            }
        }
        Ok(TabularPolicy { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn from_actions(actions: &[usize], n_actions: usize) -> Self {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            probs[[s, a]] = 1.0;
        }
        TabularPolicy { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    /// Most probable action per state, ties toward the lowest index.
    pub fn mode_actions(&self) -> Vec<usize> {
        (0..self.n_states())
            .map(|s| {
                let mut best = 0;
                let mut best_p = self.probs[[s, 0]];
                for a in 1..self.n_actions() {
                    if self.probs[[s, a]] > best_p {
                        best_p = self.probs[[s, a]];
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Seeded random policy with strictly positive rows.
    pub fn random(n_states: usize, n_actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut probs = Array2::zeros((n_states, n_actions));
        for s in 0..n_states {
            let mut row_sum = 0.0;
            for a in 0..n_actions {
                let w: f64 = rng.random_range(0.05..1.0);
                probs[[s, a]] = w;
                row_sum += w;
            }
            for a in 0..n_actions {
                probs[[s, a]] /= row_sum;
            }
        }
        TabularPolicy { probs }
    }
}

/// State-action value table.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Array2<f64>,
}

impl QTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(BcpoError::numerical("QTable contains non-finite entries"));
        }
        Ok(QTable { values })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        QTable {
            values: Array2::zeros((n_states, n_actions)),
        }
    }
}

/// V(s) = sum_a pi(a|s) Q(s,a).
pub fn state_values(policy: &TabularPolicy, q: &QTable) -> Array1<f64> {
    let (n_states, n_actions) = q.values.dim();
    let mut v = Array1::zeros(n_states);
    for s in 0..n_states {
        let mut acc = 0.0;
        for a in 0..n_actions {
            acc += policy.probs[[s, a]] * q.values[[s, a]];
        }
        v[s] = acc;
    }
    v
}

/// P^pi(s, s') = sum_a pi(a|s) P(s'|s,a).
fn transition_under_policy(mdp: &TabularMDP, policy: &TabularPolicy) -> Array2<f64> {
    let n = mdp.n_states;
    let mut p = Array2::zeros((n, n));
    for s in 0..n {
        for a in 0..mdp.n_actions {
            let w = policy.probs[[s, a]];
            if w == 0.0 {
                continue;
            }
            for s2 in 0..n {
                p[[s, s2]] += w * mdp.transition[[s, a, s2]];
            }
        }
    }
    p
}

fn reward_under_policy(mdp: &TabularMDP, policy: &TabularPolicy) -> Array1<f64> {
    let n = mdp.n_states;
    let mut r = Array1::zeros(n);
    for s in 0..n {
        for a in 0..mdp.n_actions {
            r[s] += policy.probs[[s, a]] * mdp.mean_reward[[s, a]];
        }
    }
    r
}

/// Solves A x = b by LU decomposition.
fn solve_linear(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    let mat = nalgebra::DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let rhs = nalgebra::DVector::from_fn(n, |i, _| b[i]);
    let sol = mat
        .lu()
        .solve(&rhs)
        .ok_or_else(|| BcpoError::numerical("singular linear system"))?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(BcpoError::numerical("non-finite linear solve result"));
    }
    Ok(Array1::from_iter(sol.iter().copied()))
}

/// One application of the true Bellman operator for `policy`.
pub fn true_bellman_backup(mdp: &TabularMDP, policy: &TabularPolicy, q: &QTable) -> Result<QTable> {
    if q.values.iter().any(|v| !v.is_finite()) {
        return Err(BcpoError::numerical("non-finite Q input to Bellman backup"));
    }
    let v = state_values(policy, q);
    let mut out = Array2::zeros((mdp.n_states, mdp.n_actions));
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let mut cont = 0.0;
            for s2 in 0..mdp.n_states {
                cont += mdp.transition[[s, a, s2]] * v[s2];
            }
            out[[s, a]] = mdp.mean_reward[[s, a]] + mdp.discount * cont;
        }
    }
    QTable::new(out)
}

/// Exact Q^pi via linear solve of (I - gamma P^pi) V = r^pi, with a value
/// iteration fallback for large state-action spaces. The returned table
/// satisfies ||Q - T^pi Q||_inf <= tol.
pub fn exact_policy_evaluation(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    tol: f64,
) -> Result<QTable> {
    if tol <= 0.0 {
        return Err(BcpoError::validation("tolerance must be positive"));
    }
    let n = mdp.n_states;
    let use_linear = n * mdp.n_actions <= 10_000;
    let mut q = if use_linear {
        let p_pi = transition_under_policy(mdp, policy);
        let r_pi = reward_under_policy(mdp, policy);
        let mut a = Array2::eye(n);
        for i in 0..n {
            for j in 0..n {
                a[[i, j]] -= mdp.discount * p_pi[[i, j]];
            }
        }
        let v = solve_linear(&a, &r_pi)?;
        let mut q = Array2::zeros((n, mdp.n_actions));
        for s in 0..n {
            for act in 0..mdp.n_actions {
                let mut cont = 0.0;
                for s2 in 0..n {
                    cont += mdp.transition[[s, act, s2]] * v[s2];
                }
                q[[s, act]] = mdp.mean_reward[[s, act]] + mdp.discount * cont;
            }
        }
        QTable::new(q)?
    } else {
        QTable::zeros(n, mdp.n_actions)
    };

    // Polish (or run, in the fallback case) value iteration until the
    // Bellman residual is inside the tolerance.
    let max_iters = 1_000_000;
    for _ in 0..max_iters {
        let next = true_bellman_backup(mdp, policy, &q)?;
        let residual = sup_distance(&next.values, &q.values);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(BcpoError::NonConvergence {
        residual: f64::NAN,
        iterations: max_iters,
    })
}

pub fn sup_distance(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Discounted occupancy d^pi over states and state-action pairs:
/// d^pi = (1 - gamma) (I - gamma P^pi^T)^{-1} rho0.
pub fn discounted_occupancy(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = mdp.n_states;
    let p_pi = transition_under_policy(mdp, policy);
    let mut a = Array2::eye(n);
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] -= mdp.discount * p_pi[[j, i]];
        }
    }
    let x = solve_linear(&a, &mdp.initial_dist)?;
    let mut d_state = x;
    d_state.mapv_inplace(|v| v * (1.0 - mdp.discount));
    let total: f64 = d_state.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(BcpoError::numerical(format!(
            "occupancy sums to {total}, expected 1"
        )));
    }
    let mut d_sa = Array2::zeros((n, mdp.n_actions));
    for s in 0..n {
        for act in 0..mdp.n_actions {
            d_sa[[s, act]] = d_state[s] * policy.probs[[s, act]];
        }
    }
    Ok((d_state, d_sa))
}

/// Exact discounted return J(pi) = E_{rho0, a ~ pi}[Q^pi(s0, a)].
pub fn policy_return(mdp: &TabularMDP, policy: &TabularPolicy) -> Result<f64> {
    let q = exact_policy_evaluation(mdp, policy, 1e-12)?;
    let v = state_values(policy, &q);
    Ok(mdp.initial_dist.iter().zip(v.iter()).map(|(p, v)| p * v).sum())
}

/// Both sides of the performance difference lemma:
/// lhs = J(pi') - J(pi), rhs = E_{d^{pi'}}[A^pi] / (1 - gamma).
pub fn performance_difference(
    mdp: &TabularMDP,
    pi_prime: &TabularPolicy,
    pi: &TabularPolicy,
) -> Result<(f64, f64)> {
    let lhs = policy_return(mdp, pi_prime)? - policy_return(mdp, pi)?;
    let q = exact_policy_evaluation(mdp, pi, 1e-12)?;
    let v = state_values(pi, &q);
    let (_, d_sa) = discounted_occupancy(mdp, pi_prime)?;
    let mut adv_mean = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            adv_mean += d_sa[[s, a]] * (q.values[[s, a]] - v[s]);
        }
    }
    let rhs = adv_mean / (1.0 - mdp.discount);
    Ok((lhs, rhs))
}
