//! Executable verification suite for the theory: each check replays one
//! guarantee (pessimism, contraction, the performance-difference
//! identity, mirror-descent optimality, the Pinsker-based shift bounds,
//! the certificate audit, coverage monotonicity) against exact oracles
//! and reports pass/fail with a one-line summary.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::critic::{pessimistic_backup, solve_pessimistic_fixed_point};
use crate::data::{count_statistics, CountStatistics};
use crate::error::Result;
use crate::experiment::ExperimentConfig;
use crate::gridworld::{build_mdp, generate_dataset, make_behavior_policy};
use crate::mdp::{
    discounted_occupancy, exact_policy_evaluation, performance_difference, state_values,
    true_bellman_backup, QTable, TabularMDP, TabularPolicy,
};
use crate::policy::{
    bcpo_optimize, kl_divergence, mirror_descent_step, shift_certificate,
};
use crate::posterior::{fit_posterior, fit_posterior_with_range, DirichletPrior, PosteriorModel};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name,
            passed,
            detail,
        }
    }
}

/// Whether the one-step pessimism inequality T_star Q >= T_pess Q holds
/// at every (s, a) for Q = exact Q^pi on `mdp` (evaluated at
/// `mdp.discount`).
pub fn one_step_event_holds(
    mdp: &TabularMDP,
    policy: &TabularPolicy,
    model: &PosteriorModel,
    counts: &CountStatistics,
) -> Result<bool> {
    let q_true = exact_policy_evaluation(mdp, policy, 1e-12)?;
    let t_star = true_bellman_backup(mdp, policy, &q_true)?;
    let t_pess = pessimistic_backup(&q_true, policy, model, counts, mdp.discount)?;
    Ok(t_star
        .values
        .iter()
        .zip(t_pess.values.iter())
        .all(|(star, pess)| *star >= *pess - 1e-9))
}

/// Shared fixture for the resampling studies: a seeded 4-state 2-action
/// ground-truth MDP with stochastic rewards in [0, 1].
fn resampling_fixture() -> (TabularMDP, TabularPolicy) {
    let mdp = TabularMDP::random(4, 2, 0.45, 7);
    let policy = TabularPolicy::random(4, 2, 99);
    (mdp, policy)
}

fn resampled_model(
    mdp: &TabularMDP,
    seed: u64,
    delta: f64,
) -> Result<(CountStatistics, PosteriorModel)> {
    let behavior = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    let dataset = generate_dataset(mdp, &behavior, 200, 40, seed);
    let counts = count_statistics(&dataset)?;
    let prior = DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, 1.0)?;
    let model = fit_posterior(&counts, &prior, delta)?;
    Ok((counts, model))
}

/// Criterion: among 500 resampled datasets at delta = 0.1, the one-step
/// pessimism event fails in at most delta + 0.05 of them, and whenever
/// it holds the pessimistic fixed point sits below the true Q entrywise.
pub fn check_fixed_point_pessimism() -> Vec<CheckOutcome> {
    let delta = 0.1;
    let n_datasets = 500;
    let (mdp, policy) = resampling_fixture();
    let q_true = match exact_policy_evaluation(&mdp, &policy, 1e-12) {
        Ok(q) => q,
        Err(e) => {
            return vec![CheckOutcome::new(
                "one-step-pessimism-calibration",
                false,
                format!("oracle evaluation failed: {e}"),
            )]
        }
    };
    let mut event_failures = 0usize;
    let mut pessimism_violations = 0usize;
    let mut holders = 0usize;
    for seed in 0..n_datasets {
        let (counts, model) = match resampled_model(&mdp, seed as u64, delta) {
            Ok(v) => v,
            Err(e) => {
                return vec![CheckOutcome::new(
                    "one-step-pessimism-calibration",
                    false,
                    format!("dataset {seed} failed: {e}"),
                )]
            }
        };
        let holds = one_step_event_holds(&mdp, &policy, &model, &counts).unwrap_or(false);
        if !holds {
            event_failures += 1;
            continue;
        }
        holders += 1;
        match solve_pessimistic_fixed_point(&policy, &model, &counts, mdp.discount, 1e-12, 10_000)
        {
            Ok(critic) => {
                let violated = critic
                    .q_lcb
                    .values
                    .iter()
                    .zip(q_true.values.iter())
                    .any(|(lcb, truth)| *lcb > *truth + 1e-8);
                if violated {
                    pessimism_violations += 1;
                }
            }
            Err(_) => pessimism_violations += 1,
        }
    }
    let failure_rate = event_failures as f64 / n_datasets as f64;
    vec![
        CheckOutcome::new(
            "one-step-pessimism-calibration",
            failure_rate <= delta + 0.05,
            format!(
                "event failed in {event_failures}/{n_datasets} datasets (rate {failure_rate:.3}, budget {:.3})",
                delta + 0.05
            ),
        ),
        CheckOutcome::new(
            "fixed-point-pessimism",
            pessimism_violations == 0 && holders > 0,
            format!(
                "Q_LCB <= Q^pi (slack 1e-8) violated in {pessimism_violations}/{holders} event-holding datasets"
            ),
        ),
    ]
}

/// Criterion: the pessimistic operator is gamma (1 + max b_P)-Lipschitz
/// in sup norm and Picard iteration reaches tol 1e-8 within 2000
/// iterations with geometrically decaying residuals, on 100 random
/// instances.
pub fn check_contraction_and_convergence() -> CheckOutcome {
    let name = "contraction-and-convergence";
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_margin = f64::INFINITY;
    for instance in 0..100u64 {
        let n_states = 3 + (instance as usize % 6);
        let n_actions = 2 + (instance as usize % 3);
        let gamma = 0.30 + 0.15 * (instance as f64 % 10.0) / 10.0;
        let mdp = TabularMDP::random(n_states, n_actions, gamma, 5_000 + instance);
        let behavior = TabularPolicy::uniform(n_states, n_actions);
        let n_records = 100 + (instance as usize * 13) % 900;
        let dataset = generate_dataset(&mdp, &behavior, n_records, 50, 6_000 + instance);
        let counts = match count_statistics(&dataset) {
            Ok(c) => c,
            Err(e) => return CheckOutcome::new(name, false, format!("counts failed: {e}")),
        };
        let prior = DirichletPrior::symmetric(n_states, n_actions, 1.0).unwrap();
        let model = match fit_posterior(&counts, &prior, 0.1) {
            Ok(m) => m,
            Err(e) => return CheckOutcome::new(name, false, format!("fit failed: {e}")),
        };
        let policy = TabularPolicy::random(n_states, n_actions, 7_000 + instance);
        let b_p_max = model.b_p.iter().fold(0.0_f64, |m, &x| m.max(x));
        let rate = gamma * (1.0 + b_p_max);

        // Lipschitz bound on a random pair.
        let q1 = QTable::new(Array2::from_shape_fn((n_states, n_actions), |_| {
            rng.random_range(-4.0..4.0)
        }))
        .unwrap();
        let q2 = QTable::new(Array2::from_shape_fn((n_states, n_actions), |_| {
            rng.random_range(-4.0..4.0)
        }))
        .unwrap();
        let t1 = pessimistic_backup(&q1, &policy, &model, &counts, gamma).unwrap();
        let t2 = pessimistic_backup(&q2, &policy, &model, &counts, gamma).unwrap();
        let lhs = crate::mdp::sup_distance(&t1.values, &t2.values);
        let rhs = rate * crate::mdp::sup_distance(&q1.values, &q2.values);
        if lhs > rhs + 1e-12 {
            return CheckOutcome::new(
                name,
                false,
                format!("instance {instance}: Lipschitz bound violated ({lhs} > {rhs})"),
            );
        }
        worst_margin = worst_margin.min(rhs - lhs);

        // Geometric residual decay along the Picard orbit.
        let mut q = QTable::zeros(n_states, n_actions);
        let mut prev_res: Option<f64> = None;
        let mut converged_at = None;
        for iter in 1..=2_000 {
            let next = pessimistic_backup(&q, &policy, &model, &counts, gamma).unwrap();
            let res = crate::mdp::sup_distance(&next.values, &q.values);
            if let Some(prev) = prev_res {
                if res > rate * prev + 1e-12 {
                    return CheckOutcome::new(
                        name,
                        false,
                        format!("instance {instance}: residual {res} exceeds {rate} * {prev}"),
                    );
                }
            }
            prev_res = Some(res);
            q = next;
            if res <= 1e-8 {
                converged_at = Some(iter);
                break;
            }
        }
        if converged_at.is_none() {
            return CheckOutcome::new(
                name,
                false,
                format!("instance {instance}: no convergence within 2000 iterations"),
            );
        }
    }
    CheckOutcome::new(
        name,
        true,
        format!("100 instances converged; smallest Lipschitz margin {worst_margin:.3e}"),
    )
}

/// Criterion: the performance difference lemma holds to 1e-8 on 100
/// random MDP / policy-pair instances.
pub fn check_performance_difference() -> CheckOutcome {
    let name = "performance-difference-lemma";
    let mut worst = 0.0_f64;
    for seed in 0..100u64 {
        let n_states = 2 + (seed as usize % 7);
        let n_actions = 2 + (seed as usize % 3);
        let gamma = 0.5 + 0.045 * (seed % 10) as f64;
        let mdp = TabularMDP::random(n_states, n_actions, gamma, 100 + seed);
        let pi_prime = TabularPolicy::random(n_states, n_actions, 300 + seed);
        let pi = TabularPolicy::random(n_states, n_actions, 600 + seed);
        match performance_difference(&mdp, &pi_prime, &pi) {
            Ok((lhs, rhs)) => {
                worst = worst.max((lhs - rhs).abs());
                if (lhs - rhs).abs() > 1e-8 {
                    return CheckOutcome::new(
                        name,
                        false,
                        format!("seed {seed}: |{lhs} - {rhs}| > 1e-8"),
                    );
                }
            }
            Err(e) => return CheckOutcome::new(name, false, format!("seed {seed}: {e}")),
        }
    }
    CheckOutcome::new(name, true, format!("identity held; worst gap {worst:.3e}"))
}

/// Criterion: the closed-form mirror-descent step beats 1000 random
/// simplex points (slack 1e-9) and matches a 10^4-point grid search to
/// 1e-3 in objective value, on 100 random states.
pub fn check_mirror_descent_optimality() -> CheckOutcome {
    let name = "mirror-descent-optimality";
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for trial in 0..100u64 {
        let alpha: f64 = rng.random_range(0.05..3.0);
        let eta: f64 = rng.random_range(0.0..3.0);

        // dense 1-simplex scan at two actions
        let q2 = QTable::new(Array2::from_shape_fn((1, 2), |_| rng.random_range(-2.0..2.0)))
            .unwrap();
        let pi_b2 = TabularPolicy::random(1, 2, 9_000 + trial);
        let pi_o2 = TabularPolicy::random(1, 2, 9_500 + trial);
        let objective2 = |p: &Array1<f64>| {
            let mut acc = 0.0;
            for a in 0..2 {
                acc += p[a] * q2.values[[0, a]];
            }
            acc - alpha * kl_divergence(p.view(), pi_b2.probs.row(0))
                - eta * kl_divergence(p.view(), pi_o2.probs.row(0))
        };
        let ours = mirror_descent_step(&q2, &pi_b2, &pi_o2, alpha, eta).unwrap();
        let ours_val = objective2(&ours.probs.row(0).to_owned());
        let mut grid_best = f64::NEG_INFINITY;
        for i in 1..10_000 {
            let p = i as f64 / 10_000.0;
            grid_best = grid_best.max(objective2(&ndarray::array![p, 1.0 - p]));
        }
        if (ours_val - grid_best).abs() > 1e-3 || grid_best > ours_val + 1e-9 {
            return CheckOutcome::new(
                name,
                false,
                format!("trial {trial}: closed form {ours_val} vs grid {grid_best}"),
            );
        }

        // random simplex points at a random action count
        let n_actions = 2 + (trial as usize % 4);
        let q = QTable::new(Array2::from_shape_fn((1, n_actions), |_| {
            rng.random_range(-2.0..2.0)
        }))
        .unwrap();
        let pi_b = TabularPolicy::random(1, n_actions, 10_000 + trial);
        let pi_o = TabularPolicy::random(1, n_actions, 11_000 + trial);
        let step = mirror_descent_step(&q, &pi_b, &pi_o, alpha, eta).unwrap();
        let objective = |p: &Array1<f64>| {
            let mut acc = 0.0;
            for a in 0..n_actions {
                acc += p[a] * q.values[[0, a]];
            }
            acc - alpha * kl_divergence(p.view(), pi_b.probs.row(0))
                - eta * kl_divergence(p.view(), pi_o.probs.row(0))
        };
        let step_val = objective(&step.probs.row(0).to_owned());
        for _ in 0..1_000 {
            let mut cand = Array1::zeros(n_actions);
            let mut norm = 0.0;
            for a in 0..n_actions {
                let w: f64 = rng.random_range(1e-9..1.0);
                cand[a] = w;
                norm += w;
            }
            cand.mapv_inplace(|w| w / norm);
            if objective(&cand) > step_val + 1e-9 {
                return CheckOutcome::new(
                    name,
                    false,
                    format!("trial {trial}: random simplex point beats the closed form"),
                );
            }
        }
    }
    CheckOutcome::new(name, true, "100 states: grid within 1e-3, no random point wins".into())
}

/// Criterion: Pinsker, the TV expectation-shift bound, and the per-state
/// KL shift bound hold on 1000 random draws with zero violations.
pub fn check_pinsker_and_shift_bounds() -> CheckOutcome {
    let name = "pinsker-and-shift-bounds";
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    for trial in 0..1_000 {
        let dim = 2 + trial % 5;
        let mut p = Array1::<f64>::zeros(dim);
        let mut q = Array1::<f64>::zeros(dim);
        let mut ps = 0.0;
        let mut qs = 0.0;
        for i in 0..dim {
            p[i] = rng.random_range(1e-4..1.0);
            q[i] = rng.random_range(1e-4..1.0);
            ps += p[i];
            qs += q[i];
        }
        p.mapv_inplace(|w| w / ps);
        q.mapv_inplace(|w| w / qs);
        let m: f64 = rng.random_range(0.1..5.0);
        let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-m..m)).collect();

        let tv = 0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let kl = kl_divergence(p.view(), q.view());
        if tv > (kl / 2.0).sqrt() + 1e-12 {
            return CheckOutcome::new(name, false, format!("trial {trial}: Pinsker violated"));
        }
        let ep: f64 = p.iter().zip(g.iter()).map(|(w, v)| w * v).sum();
        let eq: f64 = q.iter().zip(g.iter()).map(|(w, v)| w * v).sum();
        if (ep - eq).abs() > 2.0 * m * tv + 1e-12 {
            return CheckOutcome::new(
                name,
                false,
                format!("trial {trial}: TV expectation-shift bound violated"),
            );
        }
        if (ep - eq).abs() > 2.0 * m * (kl / 2.0).sqrt() + 1e-12 {
            return CheckOutcome::new(
                name,
                false,
                format!("trial {trial}: KL shift bound violated"),
            );
        }
    }
    CheckOutcome::new(name, true, "1000 draws, zero violations".into())
}

/// Criterion: along default-config gridworld BCPO runs whose iterates
/// satisfy the one-step pessimism event, consecutive pessimistic returns
/// obey J_LCB(pi_{k+1}) >= J_LCB(pi_k) - Shift_{k+1}.
pub fn check_certificate_audit() -> CheckOutcome {
    let name = "certificate-audit";
    let mut audited_updates = 0usize;
    // default radius plus a tight radius that forces multi-step,
    // multiplier-active trajectories
    let runs: [(u64, f64); 5] = [
        (0, 0.05),
        (1, 0.05),
        (2, 0.05),
        (0, 0.01),
        (1, 0.01),
    ];
    for (dataset_seed, trust_radius) in runs {
        let mut config = ExperimentConfig {
            dataset_seed,
            ..ExperimentConfig::default()
        };
        config.bcpo.trust_region_delta = trust_radius;
        let outcome = (|| -> Result<(crate::policy::BcpoOutcome, TabularMDP, CountStatistics, PosteriorModel)> {
            let mdp = build_mdp(&config.grid)?;
            let behavior = make_behavior_policy(&mdp, &config.grid, config.behavior_epsilon)?;
            let dataset = generate_dataset(
                &mdp,
                &behavior,
                config.n_transitions,
                config.grid.max_episode_steps,
                config.dataset_seed,
            );
            let counts = count_statistics(&dataset)?;
            let prior =
                DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, config.prior_mass)?;
            let model = fit_posterior_with_range(
                &counts,
                &prior,
                config.bcpo.confidence_delta,
                config.effective_reward_range(),
            )?;
            let run = bcpo_optimize(&counts, &model, &mdp.initial_dist, &config.bcpo, Some(&mdp))?;
            Ok((run, mdp, counts, model))
        })();
        let (run, mdp, counts, model) = match outcome {
            Ok(v) => v,
            Err(e) => return CheckOutcome::new(name, false, format!("seed {dataset_seed}: {e}")),
        };
        let mut oracle = mdp.clone();
        oracle.discount = config.bcpo.gamma;
        // event status per snapshot
        let events: Vec<bool> = run
            .snapshots
            .iter()
            .map(|snapshot| {
                one_step_event_holds(&oracle, snapshot, &model, &counts).unwrap_or(false)
            })
            .collect();
        for k in 1..run.logs.len() {
            if !(events[k - 1] && events[k]) {
                continue;
            }
            audited_updates += 1;
            let lower = run.logs[k - 1].j_lcb - run.logs[k].shift_bound;
            if run.logs[k].j_lcb < lower - 1e-9 {
                return CheckOutcome::new(
                    name,
                    false,
                    format!(
                        "seed {dataset_seed}, update {k}: J_LCB {} below {} - {}",
                        run.logs[k].j_lcb,
                        run.logs[k - 1].j_lcb,
                        run.logs[k].shift_bound
                    ),
                );
            }
        }
    }
    CheckOutcome::new(
        name,
        audited_updates > 0,
        format!("{audited_updates} updates audited across 5 runs, all inside the certificate"),
    )
}

/// Criterion: on the default gridworld dataset, b_P sorted by n(s,a) is
/// nonincreasing (exactly).
pub fn check_coverage_monotonicity() -> CheckOutcome {
    let name = "coverage-uncertainty-monotonicity";
    let config = ExperimentConfig::default();
    let result = (|| -> Result<Vec<(u64, f64)>> {
        let mdp = build_mdp(&config.grid)?;
        let behavior = make_behavior_policy(&mdp, &config.grid, config.behavior_epsilon)?;
        let dataset = generate_dataset(
            &mdp,
            &behavior,
            config.n_transitions,
            config.grid.max_episode_steps,
            config.dataset_seed,
        );
        let counts = count_statistics(&dataset)?;
        let prior = DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, config.prior_mass)?;
        let model = fit_posterior_with_range(
            &counts,
            &prior,
            config.bcpo.confidence_delta,
            config.effective_reward_range(),
        )?;
        let mut pairs = Vec::new();
        for s in 0..counts.n_states {
            for a in 0..counts.n_actions {
                pairs.push((counts.n_sa[[s, a]], model.b_p[[s, a]]));
            }
        }
        Ok(pairs)
    })();
    match result {
        Ok(mut pairs) => {
            pairs.sort_by_key(|&(n, _)| n);
            for w in pairs.windows(2) {
                if w[1].1 > w[0].1 {
                    return CheckOutcome::new(
                        name,
                        false,
                        format!("b_P increased with n: {:?} then {:?}", w[0], w[1]),
                    );
                }
            }
            CheckOutcome::new(
                name,
                true,
                format!("{} pairs sorted by n, b_P nonincreasing", pairs.len()),
            )
        }
        Err(e) => CheckOutcome::new(name, false, format!("{e}")),
    }
}

/// Property: starting Picard iteration from the true Q^pi on an
/// event-holding dataset, every iterate stays entrywise below the
/// supersolution start, and the orbit lands on the same fixed point as
/// the zero start. (Strict per-step monotonicity can fail transiently
/// because the -b_P ||V||_inf term is not monotone in Q; staying below
/// the start is the property that drives fixed-point pessimism.)
pub fn check_supersolution_descent() -> CheckOutcome {
    let name = "supersolution-descent";
    let (mdp, policy) = resampling_fixture();
    let q_true = exact_policy_evaluation(&mdp, &policy, 1e-12).unwrap();
    let mut checked = 0usize;
    for seed in 0..100u64 {
        let (counts, model) = match resampled_model(&mdp, 10_000 + seed, 0.1) {
            Ok(v) => v,
            Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
        };
        if !one_step_event_holds(&mdp, &policy, &model, &counts).unwrap_or(false) {
            continue;
        }
        checked += 1;
        let mut q = q_true.clone();
        for iter in 0..80 {
            let next = pessimistic_backup(&q, &policy, &model, &counts, mdp.discount).unwrap();
            let above_start = next
                .values
                .iter()
                .zip(q_true.values.iter())
                .any(|(n, start)| *n > *start + 1e-9);
            if above_start {
                return CheckOutcome::new(
                    name,
                    false,
                    format!("seed {seed}: iterate {iter} rose above the supersolution start"),
                );
            }
            q = next;
        }
        // Banach uniqueness: both starts reach the same fixed point.
        let solve_from = |start: QTable| {
            crate::critic::solve_pessimistic_fixed_point_from(
                start,
                &policy,
                &model,
                &counts,
                mdp.discount,
                1e-12,
                10_000,
            )
        };
        let from_super = match solve_from(q_true.clone()) {
            Ok(c) => c,
            Err(e) => return CheckOutcome::new(name, false, format!("seed {seed}: {e}")),
        };
        let from_zero = match solve_pessimistic_fixed_point(
            &policy,
            &model,
            &counts,
            mdp.discount,
            1e-12,
            10_000,
        ) {
            Ok(c) => c,
            Err(e) => return CheckOutcome::new(name, false, format!("seed {seed}: {e}")),
        };
        let gap =
            crate::mdp::sup_distance(&from_super.q_lcb.values, &from_zero.q_lcb.values);
        if gap > 1e-8 {
            return CheckOutcome::new(
                name,
                false,
                format!("seed {seed}: the two starts disagree by {gap:.3e}"),
            );
        }
    }
    CheckOutcome::new(
        name,
        checked > 0,
        format!("iterates stayed below the start and reached the unique fixed point on {checked} event-holding datasets"),
    )
}

/// Property: the pessimistic improvement inequality relating the true
/// return gap to pessimistic advantages, on event-holding datasets.
pub fn check_pessimistic_improvement() -> CheckOutcome {
    let name = "pessimistic-improvement";
    let (mdp, policy) = resampling_fixture();
    let gamma = mdp.discount;
    let mut checked = 0usize;
    for seed in 0..50u64 {
        let (counts, model) = match resampled_model(&mdp, 20_000 + seed, 0.1) {
            Ok(v) => v,
            Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
        };
        if !one_step_event_holds(&mdp, &policy, &model, &counts).unwrap_or(false) {
            continue;
        }
        checked += 1;
        let pi_prime = TabularPolicy::random(mdp.n_states, mdp.n_actions, 30_000 + seed);
        let critic = solve_pessimistic_fixed_point(
            &policy,
            &model,
            &counts,
            gamma,
            1e-12,
            10_000,
        )
        .unwrap();
        let q_true = exact_policy_evaluation(&mdp, &policy, 1e-12).unwrap();
        let v_true = state_values(&policy, &q_true);
        let (_, d_sa) = discounted_occupancy(&mdp, &pi_prime).unwrap();
        let lhs = crate::mdp::policy_return(&mdp, &pi_prime).unwrap()
            - crate::mdp::policy_return(&mdp, &policy).unwrap();
        let mut adv_term = 0.0;
        let mut gap_term = 0.0;
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let a_lcb = critic.q_lcb.values[[s, a]] - critic.v_lcb[s];
                adv_term += d_sa[[s, a]] * a_lcb;
                gap_term += d_sa[[s, a]] * (v_true[s] - critic.v_lcb[s]);
            }
        }
        let rhs = (adv_term - gap_term) / (1.0 - gamma);
        if lhs < rhs - 1e-8 {
            return CheckOutcome::new(
                name,
                false,
                format!("seed {seed}: improvement bound violated ({lhs} < {rhs})"),
            );
        }
    }
    CheckOutcome::new(
        name,
        checked > 0,
        format!("inequality held on {checked} event-holding datasets"),
    )
}

/// Property: the pessimistic return is a calibrated lower bound on the
/// true return of the optimized policy across resampled gridworld
/// datasets (failure rate at most delta + 0.05 at delta = 0.1).
pub fn check_return_lcb_calibration() -> CheckOutcome {
    let name = "return-lcb-calibration";
    let delta = 0.1;
    let n_seeds = 100u64;
    let base = ExperimentConfig::default();
    let mdp = match build_mdp(&base.grid) {
        Ok(m) => m,
        Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
    };
    let behavior = match make_behavior_policy(&mdp, &base.grid, base.behavior_epsilon) {
        Ok(b) => b,
        Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
    };
    let mut oracle = mdp.clone();
    oracle.discount = base.bcpo.gamma;
    let mut violations = 0usize;
    for seed in 0..n_seeds {
        let dataset =
            generate_dataset(&mdp, &behavior, 3_000, base.grid.max_episode_steps, 40_000 + seed);
        let counts = match count_statistics(&dataset) {
            Ok(c) => c,
            Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
        };
        let prior =
            DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, base.prior_mass).unwrap();
        let model = match fit_posterior_with_range(
            &counts,
            &prior,
            delta,
            base.effective_reward_range(),
        ) {
            Ok(m) => m,
            Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
        };
        let mut bcpo_cfg = base.bcpo.clone();
        bcpo_cfg.confidence_delta = delta;
        bcpo_cfg.n_outer_iters = 3;
        let run = match bcpo_optimize(&counts, &model, &mdp.initial_dist, &bcpo_cfg, None) {
            Ok(r) => r,
            Err(e) => return CheckOutcome::new(name, false, format!("seed {seed}: {e}")),
        };
        let j_lcb = run.logs.last().unwrap().j_lcb;
        let q = exact_policy_evaluation(&oracle, &run.policy, 1e-10).unwrap();
        let v = state_values(&run.policy, &q);
        let j_true: f64 = oracle
            .initial_dist
            .iter()
            .zip(v.iter())
            .map(|(p, v)| p * v)
            .sum();
        if j_lcb > j_true + 1e-8 {
            violations += 1;
        }
    }
    let rate = violations as f64 / n_seeds as f64;
    CheckOutcome::new(
        name,
        rate <= delta + 0.05,
        format!("J_LCB exceeded J(pi) in {violations}/{n_seeds} runs (rate {rate:.3})"),
    )
}

/// Sanity bound used by the shift certificate audit: the certificate is
/// exactly the stated closed form.
pub fn check_shift_certificate_form() -> CheckOutcome {
    let name = "shift-certificate-form";
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    for _ in 0..1_000 {
        let kl: f64 = rng.random_range(0.0..3.0);
        let dtr: f64 = rng.random_range(0.0..1.0);
        let q_max: f64 = rng.random_range(0.1..50.0);
        let gamma: f64 = rng.random_range(0.1..0.99);
        let expected =
            2.0 * q_max / (1.0 - gamma) * ((kl / 2.0).sqrt() + (dtr / 2.0).sqrt());
        let got = shift_certificate(kl, dtr, q_max, gamma);
        if (expected - got).abs() > 1e-12 {
            return CheckOutcome::new(name, false, format!("{got} vs {expected}"));
        }
    }
    CheckOutcome::new(name, true, "closed form matches on 1000 draws".into())
}

/// Property: every logged iteration satisfies the surrogate-gain
/// inequality and the trust region, straight from the logs.
pub fn check_surrogate_gain_from_logs() -> CheckOutcome {
    let name = "surrogate-gain-and-trust-region";
    let config = ExperimentConfig::default();
    let result = (|| -> Result<Vec<crate::policy::IterationLog>> {
        let mdp = build_mdp(&config.grid)?;
        let behavior = make_behavior_policy(&mdp, &config.grid, config.behavior_epsilon)?;
        let dataset = generate_dataset(
            &mdp,
            &behavior,
            config.n_transitions,
            config.grid.max_episode_steps,
            config.dataset_seed,
        );
        let counts = count_statistics(&dataset)?;
        let prior = DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, config.prior_mass)?;
        let model = fit_posterior_with_range(
            &counts,
            &prior,
            config.bcpo.confidence_delta,
            config.effective_reward_range(),
        )?;
        Ok(bcpo_optimize(&counts, &model, &mdp.initial_dist, &config.bcpo, None)?.logs)
    })();
    let logs = match result {
        Ok(l) => l,
        Err(e) => return CheckOutcome::new(name, false, format!("{e}")),
    };
    for k in 1..logs.len() {
        let row = &logs[k];
        let prev = &logs[k - 1];
        if row.kl_to_behavior < -1e-12
            || row.kl_to_previous < -1e-12
            || row.kl_to_previous > config.bcpo.trust_region_delta + 1e-9
        {
            return CheckOutcome::new(name, false, format!("iteration {k}: KL bounds violated"));
        }
        let gain_floor =
            config.bcpo.alpha * (row.kl_to_behavior - prev.kl_to_behavior) - 1e-9;
        if row.surrogate_gain < gain_floor {
            return CheckOutcome::new(
                name,
                false,
                format!(
                    "iteration {k}: surrogate gain {} below alpha * dKL {}",
                    row.surrogate_gain, gain_floor
                ),
            );
        }
    }
    CheckOutcome::new(
        name,
        logs.len() > 1,
        format!("{} logged updates satisfy the bounds", logs.len() - 1),
    )
}

/// Runs every theorem/property check, in a stable order.
pub fn theorem_checks() -> Vec<CheckOutcome> {
    let mut outcomes = Vec::new();
    outcomes.extend(check_fixed_point_pessimism());
    outcomes.push(check_contraction_and_convergence());
    outcomes.push(check_performance_difference());
    outcomes.push(check_mirror_descent_optimality());
    outcomes.push(check_pinsker_and_shift_bounds());
    outcomes.push(check_shift_certificate_form());
    outcomes.push(check_supersolution_descent());
    outcomes.push(check_pessimistic_improvement());
    outcomes.push(check_return_lcb_calibration());
    outcomes.push(check_surrogate_gain_from_logs());
    outcomes.push(check_certificate_audit());
    outcomes.push(check_coverage_monotonicity());
    outcomes
}
