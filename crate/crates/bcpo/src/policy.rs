//! KL-regularized mirror-descent policy improvement, trust-region
//! enforcement via the Lagrange multiplier, the outer optimization loop,
//! and the per-update shift certificate.

use ndarray::{Array1, Array2, ArrayView1};

use crate::critic::{pessimistic_return, solve_pessimistic_fixed_point, PessimisticCritic};
use crate::data::{behavior_cloning, state_marginal, CountStatistics};
use crate::error::{BcpoError, Result};
use crate::mdp::{exact_policy_evaluation, state_values, QTable, TabularMDP, TabularPolicy};
use crate::posterior::PosteriorModel;

/// Mixture weight of the uniform floor applied to KL reference rows so
/// mirror-descent exponents stay finite. Below every test tolerance.
pub const POLICY_FLOOR: f64 = 1e-12;

/// KL(p || q) with 0 log 0 = 0. Returns +infinity when p charges an
/// outcome q does not (the caller must treat that as a signal, never as
/// an ordinary magnitude).
pub fn kl_divergence(p: ArrayView1<f64>, q: ArrayView1<f64>) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q.iter()) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    acc
}

fn floored_row(probs: &Array2<f64>, s: usize, n_actions: usize, a: usize) -> f64 {
    (1.0 - POLICY_FLOOR) * probs[[s, a]] + POLICY_FLOOR / n_actions as f64
}

/// E_{s ~ nu} KL(p(.|s) || q(.|s)) with the uniform floor applied to q.
pub fn expected_kl(nu: &Array1<f64>, p: &TabularPolicy, q: &TabularPolicy) -> f64 {
    let (n_states, n_actions) = p.probs.dim();
    let mut acc = 0.0;
    for s in 0..n_states {
        if nu[s] == 0.0 {
            continue;
        }
        let mut state_kl = 0.0;
        for a in 0..n_actions {
            let pi = p.probs[[s, a]];
            if pi > 0.0 {
                state_kl += pi * (pi / floored_row(&q.probs, s, n_actions, a)).ln();
            }
        }
        acc += nu[s] * state_kl;
    }
    acc
}

/// Closed-form maximizer of
///   sum_a pi(a) Q(s,a) - alpha KL(pi || pi_b) - eta KL(pi || pi_old)
/// per state:
///   pi_new propto pi_b^{alpha/(alpha+eta)} pi_old^{eta/(alpha+eta)}
///           exp(Q / (alpha+eta)),
/// computed in the log domain with max subtraction.
pub fn mirror_descent_step(
    q_lcb: &QTable,
    pi_b: &TabularPolicy,
    pi_old: &TabularPolicy,
    alpha: f64,
    eta: f64,
) -> Result<TabularPolicy> {
    if alpha <= 0.0 || eta < 0.0 || !(alpha + eta).is_finite() {
        return Err(BcpoError::validation(format!(
            "need alpha > 0 and eta >= 0, got alpha={alpha}, eta={eta}"
        )));
    }
    let (n_states, n_actions) = q_lcb.values.dim();
    for s in 0..n_states {
        let b_sum: f64 = (0..n_actions).map(|a| pi_b.probs[[s, a]]).sum();
        let o_sum: f64 = (0..n_actions).map(|a| pi_old.probs[[s, a]]).sum();
        if b_sum <= 0.0 || o_sum <= 0.0 {
            return Err(BcpoError::validation(format!("zero policy row at state {s}")));
        }
    }
    let total = alpha + eta;
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        let mut logits = vec![0.0; n_actions];
        let mut max_logit = f64::NEG_INFINITY;
        for (a, logit) in logits.iter_mut().enumerate() {
            let lb = floored_row(&pi_b.probs, s, n_actions, a).ln();
            let lo = floored_row(&pi_old.probs, s, n_actions, a).ln();
            *logit = (alpha * lb + eta * lo + q_lcb.values[[s, a]]) / total;
            max_logit = max_logit.max(*logit);
        }
        let mut norm = 0.0;
        for a in 0..n_actions {
            let w = (logits[a] - max_logit).exp();
            probs[[s, a]] = w;
            norm += w;
        }
        for a in 0..n_actions {
            probs[[s, a]] /= norm;
        }
    }
    TabularPolicy::new(probs)
}

#[derive(Debug, Clone, Copy)]
pub struct EtaBisection {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

impl Default for EtaBisection {
    fn default() -> Self {
        EtaBisection {
            lo: 0.0,
            hi: 1e4,
            tol: 1e-6,
        }
    }
}

/// Cap for the geometric bracket expansion before declaring the trust
/// region infeasible.
const ETA_CAP: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct TrustRegionOutcome {
    pub policy: TabularPolicy,
    pub eta: f64,
    /// (eta, expected KL) pairs evaluated during the search.
    pub trace: Vec<(f64, f64)>,
}

/// Smallest eta (by bisection) whose mirror-descent step satisfies
/// E_{nu}[KL(pi_new || pi_old)] <= delta_tr. Returns eta = lo when the
/// unconstrained step already satisfies the radius.
pub fn enforce_trust_region(
    q_lcb: &QTable,
    pi_b: &TabularPolicy,
    pi_old: &TabularPolicy,
    nu_hat: &Array1<f64>,
    alpha: f64,
    delta_tr: f64,
    bisect: EtaBisection,
) -> Result<TrustRegionOutcome> {
    if delta_tr <= 0.0 {
        return Err(BcpoError::validation("trust region radius must be positive"));
    }
    if bisect.lo < 0.0 || bisect.hi <= bisect.lo || bisect.tol <= 0.0 {
        return Err(BcpoError::validation("bad eta bisection bracket"));
    }
    let mut trace = Vec::new();
    let probe = |eta: f64, trace: &mut Vec<(f64, f64)>| -> Result<(TabularPolicy, f64)> {
        let policy = mirror_descent_step(q_lcb, pi_b, pi_old, alpha, eta)?;
        let kl = expected_kl(nu_hat, &policy, pi_old);
        trace.push((eta, kl));
        Ok((policy, kl))
    };

    let (policy_lo, kl_lo) = probe(bisect.lo, &mut trace)?;
    if kl_lo <= delta_tr {
        return Ok(TrustRegionOutcome {
            policy: policy_lo,
            eta: bisect.lo,
            trace,
        });
    }
    let mut hi = bisect.hi;
    let (mut policy_hi, mut kl_hi) = probe(hi, &mut trace)?;
    while kl_hi > delta_tr {
        hi *= 2.0;
        if hi > ETA_CAP {
            return Err(BcpoError::InfeasibleTrustRegion {
                kl: kl_hi,
                eta_cap: ETA_CAP,
            });
        }
        let out = probe(hi, &mut trace)?;
        policy_hi = out.0;
        kl_hi = out.1;
    }
    let mut lo = bisect.lo;
    while hi - lo > bisect.tol {
        let mid = 0.5 * (lo + hi);
        let (policy_mid, kl_mid) = probe(mid, &mut trace)?;
        if kl_mid <= delta_tr {
            hi = mid;
            policy_hi = policy_mid;
        } else {
            lo = mid;
        }
    }
    Ok(TrustRegionOutcome {
        policy: policy_hi,
        eta: hi,
        trace,
    })
}

/// Per-update shift certificate:
///   Shift = (2 Q_max / (1 - gamma)) (sqrt(KL_b / 2) + sqrt(delta_tr / 2)).
pub fn shift_certificate(kl_to_behavior: f64, delta_tr: f64, q_max: f64, gamma: f64) -> f64 {
    2.0 * q_max / (1.0 - gamma) * ((kl_to_behavior / 2.0).sqrt() + (delta_tr / 2.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QMaxMode {
    /// Q_max = (r_max - r_min + max b_r) / (1 - gamma), from the data.
    RewardRangeBound,
    /// Q_max = max |Q_LCB| of the critic used for the update.
    ObservedMax,
}

#[derive(Debug, Clone)]
pub struct BcpoConfig {
    /// Behavior-KL penalty weight (alpha).
    pub alpha: f64,
    /// Trust-region radius on E_nu KL(pi_new || pi_old).
    pub trust_region_delta: f64,
    /// Confidence level delta for the posterior bonuses.
    pub confidence_delta: f64,
    /// Critic discount. The pessimistic operator is guaranteed
    /// contractive only when gamma * (1 + max b_P) < 1, so with clipped
    /// bonuses this should stay below 0.5.
    pub gamma: f64,
    pub n_outer_iters: usize,
    pub critic_tol: f64,
    pub critic_max_iters: usize,
    pub eta_bisection: EtaBisection,
    pub q_max_mode: QMaxMode,
    pub seed: u64,
}

impl Default for BcpoConfig {
    fn default() -> Self {
        BcpoConfig {
            alpha: 0.1,
            trust_region_delta: 0.05,
            confidence_delta: 0.05,
            gamma: 0.45,
            n_outer_iters: 30,
            critic_tol: 1e-8,
            critic_max_iters: 2_000,
            eta_bisection: EtaBisection::default(),
            q_max_mode: QMaxMode::RewardRangeBound,
            seed: 0,
        }
    }
}

impl BcpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(BcpoError::validation("alpha must be positive"));
        }
        if self.trust_region_delta <= 0.0 {
            return Err(BcpoError::validation("trust_region_delta must be positive"));
        }
        if !(0.0..1.0).contains(&self.confidence_delta) || self.confidence_delta == 0.0 {
            return Err(BcpoError::validation("confidence_delta must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(BcpoError::validation("gamma must lie in [0, 1)"));
        }
        if self.critic_tol <= 0.0 {
            return Err(BcpoError::validation("critic_tol must be positive"));
        }
        if self.eta_bisection.lo < 0.0 {
            return Err(BcpoError::validation("eta bracket must start at >= 0"));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics. Row 0 describes the initial (behavior
/// clone) policy; row k >= 1 describes the policy after update k.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    pub eta: f64,
    pub surrogate_gain: f64,
    pub kl_to_behavior: f64,
    pub kl_to_previous: f64,
    pub j_lcb: f64,
    /// Exact return of the iterate on the oracle MDP (at the critic's
    /// discount), when a ground-truth model is available.
    pub j_true: Option<f64>,
    pub shift_bound: f64,
}

#[derive(Debug, Clone)]
pub struct BcpoOutcome {
    pub policy: TabularPolicy,
    pub logs: Vec<IterationLog>,
    /// Policy after each logged iteration (index-aligned with `logs`).
    pub snapshots: Vec<TabularPolicy>,
}

/// Surrogate objective J_BCPO under the fixed critic:
/// E_nu E_pi[Q] - alpha E_nu KL(pi || pi_b).
fn surrogate_objective(
    nu: &Array1<f64>,
    policy: &TabularPolicy,
    q: &QTable,
    pi_b: &TabularPolicy,
    alpha: f64,
) -> f64 {
    expected_q(nu, policy, q) - alpha * expected_kl(nu, policy, pi_b)
}

fn expected_q(nu: &Array1<f64>, policy: &TabularPolicy, q: &QTable) -> f64 {
    let (n_states, n_actions) = q.values.dim();
    let mut acc = 0.0;
    for s in 0..n_states {
        if nu[s] == 0.0 {
            continue;
        }
        let mut per_state = 0.0;
        for a in 0..n_actions {
            per_state += policy.probs[[s, a]] * q.values[[s, a]];
        }
        acc += nu[s] * per_state;
    }
    acc
}

/// The outer loop: alternate pessimistic policy evaluation with the
/// trust-region mirror-descent update, starting from the behavior clone.
/// Logs one row per iteration; early-stops when consecutive policies
/// agree to 1e-8 in expected KL.
pub fn bcpo_optimize(
    counts: &CountStatistics,
    model: &PosteriorModel,
    initial_dist: &Array1<f64>,
    config: &BcpoConfig,
    oracle_mdp: Option<&TabularMDP>,
) -> Result<BcpoOutcome> {
    config.validate()?;
    let pi_b = behavior_cloning(counts);
    let nu_hat = state_marginal(counts)?;
    let oracle_at_gamma = match oracle_mdp {
        Some(mdp) => {
            let mut rescaled = mdp.clone();
            rescaled.discount = config.gamma;
            rescaled.validate()?;
            Some(rescaled)
        }
        None => None,
    };
    let oracle_return = |policy: &TabularPolicy| -> Result<Option<f64>> {
        match &oracle_at_gamma {
            Some(mdp) => {
                let q = exact_policy_evaluation(mdp, policy, 1e-10)?;
                let v = state_values(policy, &q);
                Ok(Some(
                    mdp.initial_dist
                        .iter()
                        .zip(v.iter())
                        .map(|(p, v)| p * v)
                        .sum(),
                ))
            }
            None => Ok(None),
        }
    };
    let solve = |policy: &TabularPolicy| -> Result<PessimisticCritic> {
        solve_pessimistic_fixed_point(
            policy,
            model,
            counts,
            config.gamma,
            config.critic_tol,
            config.critic_max_iters,
        )
    };
    let b_r_max = model.b_r.iter().fold(0.0_f64, |m, &x| m.max(x));
    let range_q_max =
        (counts.reward_max - counts.reward_min + b_r_max) / (1.0 - config.gamma);

    let mut policy = pi_b.clone();
    let mut critic = solve(&policy)?;
    let mut logs = Vec::with_capacity(config.n_outer_iters + 1);
    let mut snapshots = Vec::with_capacity(config.n_outer_iters + 1);
    logs.push(IterationLog {
        iteration: 0,
        eta: 0.0,
        surrogate_gain: 0.0,
        kl_to_behavior: expected_kl(&nu_hat, &policy, &pi_b),
        kl_to_previous: 0.0,
        j_lcb: pessimistic_return(&critic, &policy, initial_dist)?,
        j_true: oracle_return(&policy)?,
        shift_bound: 0.0,
    });
    snapshots.push(policy.clone());

    for iteration in 1..=config.n_outer_iters {
        let step = enforce_trust_region(
            &critic.q_lcb,
            &pi_b,
            &policy,
            &nu_hat,
            config.alpha,
            config.trust_region_delta,
            config.eta_bisection,
        )?;
        let new_policy = step.policy;

        let gain = expected_q(&nu_hat, &new_policy, &critic.q_lcb)
            - expected_q(&nu_hat, &policy, &critic.q_lcb);
        let old_objective =
            surrogate_objective(&nu_hat, &policy, &critic.q_lcb, &pi_b, config.alpha);
        let new_objective =
            surrogate_objective(&nu_hat, &new_policy, &critic.q_lcb, &pi_b, config.alpha);
        if new_objective < old_objective - 1e-9 {
            return Err(BcpoError::numerical(format!(
                "surrogate objective decreased at iteration {iteration}: {new_objective} < {old_objective}"
            )));
        }
        let kl_behavior_new = expected_kl(&nu_hat, &new_policy, &pi_b);
        let kl_behavior_old = expected_kl(&nu_hat, &policy, &pi_b);
        if gain < config.alpha * (kl_behavior_new - kl_behavior_old) - 1e-9 {
            return Err(BcpoError::numerical(format!(
                "surrogate gain bound violated at iteration {iteration}"
            )));
        }
        let kl_prev = expected_kl(&nu_hat, &new_policy, &policy);
        if kl_prev > config.trust_region_delta + 1e-9 {
            return Err(BcpoError::numerical(format!(
                "trust region violated at iteration {iteration}: {kl_prev}"
            )));
        }

        let q_max = match config.q_max_mode {
            QMaxMode::RewardRangeBound => range_q_max,
            QMaxMode::ObservedMax => critic
                .q_lcb
                .values
                .iter()
                .fold(0.0_f64, |m, &x| m.max(x.abs())),
        };
        let shift = shift_certificate(
            kl_behavior_new,
            config.trust_region_delta,
            q_max,
            config.gamma,
        );

        policy = new_policy;
        critic = solve(&policy)?;
        logs.push(IterationLog {
            iteration,
            eta: step.eta,
            surrogate_gain: gain,
            kl_to_behavior: kl_behavior_new,
            kl_to_previous: kl_prev,
            j_lcb: pessimistic_return(&critic, &policy, initial_dist)?,
            j_true: oracle_return(&policy)?,
            shift_bound: shift,
        });
        snapshots.push(policy.clone());
        if kl_prev < 1e-8 {
            break;
        }
    }
    Ok(BcpoOutcome {
        policy,
        logs,
        snapshots,
    })
}
