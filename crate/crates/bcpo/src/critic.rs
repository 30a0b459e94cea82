//! The pessimistic Bellman operator, its Picard fixed point, and the
//! derived pessimistic quantities: V_LCB, A_LCB, and the pessimistic
//! return J_LCB.

use ndarray::{Array1, Array2};

use crate::data::CountStatistics;
use crate::error::{BcpoError, Result};
use crate::mdp::{state_values, sup_distance, QTable, TabularPolicy};
use crate::posterior::PosteriorModel;

/// Pessimistic critic for a fixed policy: the fixed point of the
/// pessimistic Bellman operator together with its induced state values.
#[derive(Debug, Clone)]
pub struct PessimisticCritic {
    pub q_lcb: QTable,
    pub v_lcb: Array1<f64>,
    /// Copy of the policy this critic was solved for.
    pub policy_ref: TabularPolicy,
    pub iterations_used: usize,
    pub final_residual: f64,
}

/// One application of the pessimistic Bellman operator:
///
///   (T Q)(s,a) = (r_hat - b_r) + gamma * sum_s' Pbar(s'|s,a) V(s')
///                - gamma * b_P(s,a) * ||V||_inf
///
/// with V(s) = sum_a pi(a|s) Q(s,a) and the sup norm taken over all
/// states. States observed as terminal in the dataset are backed up to
/// r_hat - b_r alone (their continuation is zero by the absorbing-zero
/// convention).
pub fn pessimistic_backup(
    q: &QTable,
    policy: &TabularPolicy,
    model: &PosteriorModel,
    counts: &CountStatistics,
    gamma: f64,
) -> Result<QTable> {
    if q.values.iter().any(|v| !v.is_finite()) {
        return Err(BcpoError::numerical("non-finite Q input to pessimistic backup"));
    }
    let (s, a) = (counts.n_states, counts.n_actions);
    let v = state_values(policy, q);
    let v_inf = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut out = Array2::zeros((s, a));
    for i in 0..s {
        for j in 0..a {
            let base = counts.reward_mean[[i, j]] - model.b_r[[i, j]];
            if counts.terminal_observed[i] {
                out[[i, j]] = base;
                continue;
            }
            let mut cont = 0.0;
            for k in 0..s {
                cont += model.posterior_mean[[i, j, k]] * v[k];
            }
            out[[i, j]] = base + gamma * cont - gamma * model.b_p[[i, j]] * v_inf;
        }
    }
    QTable::new(out)
}

/// Picard iteration from Q0 = 0. See [`solve_pessimistic_fixed_point_from`].
pub fn solve_pessimistic_fixed_point(
    policy: &TabularPolicy,
    model: &PosteriorModel,
    counts: &CountStatistics,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PessimisticCritic> {
    let q0 = QTable::zeros(counts.n_states, counts.n_actions);
    solve_pessimistic_fixed_point_from(q0, policy, model, counts, gamma, tol, max_iters)
}

/// Picard iteration from an arbitrary starting table (used by the
/// supersolution-descent checks). When gamma * (1 + max b_P) >= 1 the
/// operator is not provably contractive; in that regime the solver
/// watches the residual sequence and reports non-convergence if it fails
/// to decrease for 50 consecutive iterations.
pub fn solve_pessimistic_fixed_point_from(
    q0: QTable,
    policy: &TabularPolicy,
    model: &PosteriorModel,
    counts: &CountStatistics,
    gamma: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PessimisticCritic> {
    if tol <= 0.0 {
        return Err(BcpoError::validation("tolerance must be positive"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(BcpoError::validation("gamma must lie in [0, 1)"));
    }
    let b_p_max = model.b_p.iter().fold(0.0_f64, |m, &x| m.max(x));
    let contractive = gamma * (1.0 + b_p_max) < 1.0;

    let mut q = q0;
    let mut residual = f64::INFINITY;
    let mut stall = 0usize;
    for iter in 1..=max_iters {
        let next = pessimistic_backup(&q, policy, model, counts, gamma)?;
        let step = sup_distance(&next.values, &q.values);
        q = next;
        if step <= tol {
            let v_lcb = state_values(policy, &q);
            return Ok(PessimisticCritic {
                q_lcb: q,
                v_lcb,
                policy_ref: policy.clone(),
                iterations_used: iter,
                final_residual: step,
            });
        }
        if !contractive {
            if step >= residual {
                stall += 1;
                if stall >= 50 {
                    return Err(BcpoError::NonConvergence {
                        residual: step,
                        iterations: iter,
                    });
                }
            } else {
                stall = 0;
            }
        }
        residual = step;
    }
    Err(BcpoError::NonConvergence {
        residual,
        iterations: max_iters,
    })
}

/// J_LCB(pi) = E_{s0 ~ rho0} [ sum_a pi(a|s0) Q_LCB(s0, a) ].
pub fn pessimistic_return(
    critic: &PessimisticCritic,
    policy: &TabularPolicy,
    initial_dist: &Array1<f64>,
) -> Result<f64> {
    if critic.policy_ref.probs != policy.probs {
        return Err(BcpoError::validation(
            "critic was solved for a different policy",
        ));
    }
    Ok(initial_dist
        .iter()
        .zip(critic.v_lcb.iter())
        .map(|(p, v)| p * v)
        .sum())
}

/// Pessimistic advantage A_LCB(s,a) = Q_LCB(s,a) - V_LCB(s).
pub fn pessimistic_advantage(
    critic: &PessimisticCritic,
    policy: &TabularPolicy,
) -> Result<Array2<f64>> {
    if critic.policy_ref.probs != policy.probs {
        return Err(BcpoError::validation(
            "critic was solved for a different policy",
        ));
    }
    let (s, a) = critic.q_lcb.values.dim();
    let mut adv = Array2::zeros((s, a));
    for i in 0..s {
        for j in 0..a {
            adv[[i, j]] = critic.q_lcb.values[[i, j]] - critic.v_lcb[i];
        }
    }
    Ok(adv)
}
