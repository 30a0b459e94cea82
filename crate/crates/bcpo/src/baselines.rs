//! Comparison methods: naive fitted Q-iteration on the empirical model
//! (no conservatism, kept deliberately so) and greedy policy extraction.

use ndarray::Array3;

use crate::data::CountStatistics;
use crate::error::{BcpoError, Result};
use crate::mdp::{QTable, TabularPolicy};

#[derive(Debug, Clone)]
pub struct FqiResult {
    pub q: QTable,
    pub iterations: usize,
    /// Sup-norm change per iteration. Not guaranteed monotone.
    pub residual_history: Vec<f64>,
}

/// One optimality backup on the empirical model:
/// Q'(s,a) = r_hat(s,a) + gamma sum_s' P_hat(s'|s,a) max_a' Q(s',a'),
/// with zero continuation through states observed as terminal.
pub fn fqi_backup(
    counts: &CountStatistics,
    empirical: &Array3<f64>,
    gamma: f64,
    q: &QTable,
) -> QTable {
    let (s, a) = (counts.n_states, counts.n_actions);
    let mut v_max = vec![0.0; s];
    for (i, slot) in v_max.iter_mut().enumerate() {
        if counts.terminal_observed[i] {
            continue;
        }
        let mut best = f64::NEG_INFINITY;
        for j in 0..a {
            best = best.max(q.values[[i, j]]);
        }
        *slot = best;
    }
    let mut out = ndarray::Array2::zeros((s, a));
    for i in 0..s {
        for j in 0..a {
            if counts.terminal_observed[i] {
                out[[i, j]] = counts.reward_mean[[i, j]];
                continue;
            }
            let mut cont = 0.0;
            for k in 0..s {
                cont += empirical[[i, j, k]] * v_max[k];
            }
            out[[i, j]] = counts.reward_mean[[i, j]] + gamma * cont;
        }
    }
    QTable { values: out }
}

/// Exactly `iters` optimality backups from Q0 = 0.
pub fn naive_fqi(
    counts: &CountStatistics,
    empirical: &Array3<f64>,
    gamma: f64,
    iters: usize,
) -> Result<FqiResult> {
    if iters == 0 {
        return Err(BcpoError::validation("fqi needs at least one iteration"));
    }
    let mut q = QTable::zeros(counts.n_states, counts.n_actions);
    let mut residual_history = Vec::with_capacity(iters);
    for iter in 0..iters {
        let next = fqi_backup(counts, empirical, gamma, &q);
        if next.values.iter().any(|v| !v.is_finite()) {
            return Err(BcpoError::numerical(format!(
                "fqi produced non-finite values at iteration {iter}"
            )));
        }
        residual_history.push(crate::mdp::sup_distance(&next.values, &q.values));
        q = next;
    }
    Ok(FqiResult {
        q,
        iterations: iters,
        residual_history,
    })
}

/// Deterministic greedy policy, ties toward the lowest action index.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    let (s, a) = q.values.dim();
    let actions: Vec<usize> = (0..s)
        .map(|i| {
            let mut best = 0;
            let mut best_v = q.values[[i, 0]];
            for j in 1..a {
                if q.values[[i, j]] > best_v {
                    best_v = q.values[[i, j]];
                    best = j;
                }
            }
            best
        })
        .collect();
    TabularPolicy::from_actions(&actions, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{count_statistics, Transition, TransitionDataset};
    use crate::mdp::TabularMDP;
    use crate::posterior::empirical_transitions;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn myopic_fqi_returns_reward_means() {
        let recs = vec![
            Transition { state: 0, action: 0, reward: 0.7, next_state: 1, terminal: false },
            Transition { state: 1, action: 1, reward: -0.2, next_state: 0, terminal: false },
        ];
        let counts = count_statistics(&TransitionDataset::new(recs, 2, 2).unwrap()).unwrap();
        let emp = empirical_transitions(&counts);
        let one = naive_fqi(&counts, &emp, 0.0, 1).unwrap();
        assert_eq!(one.q.values, counts.reward_mean);
        let many = naive_fqi(&counts, &emp, 0.0, 25).unwrap();
        assert_eq!(many.q.values, counts.reward_mean);
    }

    /// Deterministic 4-state chain with exact counts: FQI must recover
    /// the true optimal Q.
    fn chain_counts(copies: usize) -> (CountStatistics, TabularMDP) {
        // states 0 -> 1 -> 2 -> 3 (absorbing, zero reward), action 0 moves
        // forward with reward 0.5, action 1 stays with reward 0.1
        let n = 4;
        let mut recs = Vec::new();
        for s in 0..3usize {
            for _ in 0..copies {
                recs.push(Transition {
                    state: s,
                    action: 0,
                    reward: 0.5,
                    next_state: s + 1,
                    terminal: s + 1 == 3,
                });
                recs.push(Transition {
                    state: s,
                    action: 1,
                    reward: 0.1,
                    next_state: s,
                    terminal: false,
                });
            }
        }
        let counts =
            count_statistics(&TransitionDataset::new(recs, n, 2).unwrap()).unwrap();

        let mut transition = ndarray::Array3::zeros((n, 2, n));
        let mut reward = Array2::zeros((n, 2));
        for s in 0..3 {
            transition[[s, 0, s + 1]] = 1.0;
            transition[[s, 1, s]] = 1.0;
            reward[[s, 0]] = 0.5;
            reward[[s, 1]] = 0.1;
        }
        for a in 0..2 {
            transition[[3, a, 3]] = 1.0;
        }
        let mdp = TabularMDP::new(
            transition,
            reward,
            0.9,
            ndarray::Array1::from_vec(vec![1.0, 0.0, 0.0, 0.0]),
            vec![false, false, false, true],
        )
        .unwrap();
        (counts, mdp)
    }

    fn optimal_q(mdp: &TabularMDP, tol: f64) -> Array2<f64> {
        let (s, a) = mdp.mean_reward.dim();
        let mut q = Array2::zeros((s, a));
        loop {
            let mut next = Array2::zeros((s, a));
            let mut delta = 0.0_f64;
            for i in 0..s {
                for j in 0..a {
                    let mut cont = 0.0;
                    for k in 0..s {
                        if mdp.terminal_mask[k] {
                            continue;
                        }
                        let mut best = f64::NEG_INFINITY;
                        for j2 in 0..a {
                            best = best.max(q[[k, j2]]);
                        }
                        cont += mdp.transition[[i, j, k]] * best;
                    }
                    if mdp.terminal_mask[i] {
                        next[[i, j]] = 0.0;
                    } else {
                        next[[i, j]] = mdp.mean_reward[[i, j]] + mdp.discount * cont;
                    }
                    delta = delta.max((next[[i, j]] - q[[i, j]]).abs());
                }
            }
            q = next;
            if delta < tol {
                return q;
            }
        }
    }

    #[test]
    fn fully_observed_chain_recovers_optimal_q() {
        let (counts, mdp) = chain_counts(3);
        let emp = empirical_transitions(&counts);
        let fqi = naive_fqi(&counts, &emp, 0.9, 500).unwrap();
        let qstar = optimal_q(&mdp, 1e-10);
        for s in 0..3 {
            for a in 0..2 {
                assert!(
                    (fqi.q.values[[s, a]] - qstar[[s, a]]).abs() < 1e-6,
                    "({s},{a}): {} vs {}",
                    fqi.q.values[[s, a]],
                    qstar[[s, a]]
                );
            }
        }
    }

    #[test]
    fn scaled_counts_limit_matches_optimal_value_iteration() {
        let (mut counts, mdp) = chain_counts(1);
        counts.n_sa.mapv_inplace(|n| n * 10_000);
        counts.n_sas.mapv_inplace(|n| n * 10_000);
        counts.total *= 10_000;
        let emp = empirical_transitions(&counts);
        let fqi = naive_fqi(&counts, &emp, 0.9, 500).unwrap();
        let qstar = optimal_q(&mdp, 1e-10);
        for s in 0..3 {
            for a in 0..2 {
                assert!((fqi.q.values[[s, a]] - qstar[[s, a]]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn non_finite_rewards_fail_with_iteration_index() {
        let recs = vec![Transition {
            state: 0,
            action: 0,
            reward: 0.5,
            next_state: 1,
            terminal: false,
        }];
        let mut counts =
            count_statistics(&TransitionDataset::new(recs, 2, 1).unwrap()).unwrap();
        counts.reward_mean[[0, 0]] = f64::INFINITY;
        let emp = empirical_transitions(&counts);
        let err = naive_fqi(&counts, &emp, 0.9, 10);
        match err {
            Err(crate::error::BcpoError::Numerical(msg)) => {
                assert!(msg.contains("iteration 0"), "message: {msg}");
            }
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn greedy_picks_argmax() {
        let q = QTable::new(array![[1.0, 3.0], [2.0, 2.0]]).unwrap();
        let pi = greedy_policy(&q);
        assert_eq!(pi.probs[[0, 1]], 1.0);
        // tie broken toward the lowest index
        assert_eq!(pi.probs[[1, 0]], 1.0);
    }

    #[test]
    fn greedy_matches_scan_oracle() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let q = QTable::new(Array2::from_shape_fn((8, 5), |_| {
            rng.random_range(-3.0..3.0)
        }))
        .unwrap();
        let pi = greedy_policy(&q);
        for s in 0..8 {
            let mut best = 0;
            for a in 1..5 {
                if q.values[[s, a]] > q.values[[s, best]] {
                    best = a;
                }
            }
            assert_eq!(pi.probs[[s, best]], 1.0);
        }
    }

    proptest! {
        #[test]
        fn greedy_invariant_to_per_state_constant(seed in 0u64..200, shift in -10.0f64..10.0) {
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let q = QTable::new(Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0))).unwrap();
            let mut shifted = q.clone();
            for s in 0..6 {
                for a in 0..4 {
                    shifted.values[[s, a]] += shift * (s as f64 + 1.0);
                }
            }
            prop_assert_eq!(greedy_policy(&q).probs, greedy_policy(&shifted).probs);
        }
    }
}
