//! End-to-end experiment orchestration: configuration parsing, the
//! data-generation / training / evaluation pipeline, and deterministic
//! CSV artifact emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array1;

use crate::baselines::{fqi_backup, greedy_policy, naive_fqi};
use crate::critic::solve_pessimistic_fixed_point;
use crate::data::{behavior_cloning, count_statistics, CountStatistics, TransitionDataset};
use crate::error::{BcpoError, Result};
use crate::gridworld::{
    build_mdp, generate_dataset, make_behavior_policy, rollout_evaluate, GridSpec, RolloutStats,
    SlipModel,
};
use crate::mdp::{QTable, TabularMDP, TabularPolicy};
use crate::policy::{bcpo_optimize, BcpoConfig, BcpoOutcome, IterationLog, QMaxMode};
use crate::posterior::{fit_posterior_with_range, DirichletPrior, PosteriorModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bcpo,
    Bc,
    Fqi,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bcpo => "bcpo",
            Method::Bc => "bc",
            Method::Fqi => "fqi",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        match name {
            "bcpo" => Ok(Method::Bcpo),
            "bc" => Ok(Method::Bc),
            "fqi" => Ok(Method::Fqi),
            other => Err(BcpoError::validation(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: &'static str,
    pub return_mean: f64,
    pub return_std: f64,
    pub episode_length_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub grid: GridSpec,
    pub behavior_epsilon: f64,
    pub n_transitions: usize,
    pub bcpo: BcpoConfig,
    /// Dirichlet prior row mass (spread uniformly over successors).
    pub prior_mass: f64,
    /// Reward range used to scale the Hoeffding reward radius. When
    /// absent it is derived from the grid's reward constants.
    pub reward_range: Option<f64>,
    pub fqi_iters: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    pub dataset_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            grid: GridSpec::default(),
            behavior_epsilon: 0.06,
            n_transitions: 15_000,
            bcpo: BcpoConfig::default(),
            prior_mass: 1.0,
            reward_range: None,
            fqi_iters: 500,
            eval_episodes: 2_000,
            eval_seed: 123,
            dataset_seed: 0,
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reward range implied by the grid constants: the spread of
    /// {step, goal entry, trap entry} realized rewards.
    pub fn effective_reward_range(&self) -> f64 {
        if let Some(r) = self.reward_range {
            return r;
        }
        let bonus = if self.grid.terminal_step_penalty {
            self.grid.step_penalty
        } else {
            0.0
        };
        let candidates = [
            self.grid.step_penalty,
            self.grid.goal_reward + bonus,
            self.grid.trap_reward + bonus,
        ];
        let lo = candidates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.bcpo.validate()?;
        if !(0.0..=1.0).contains(&self.behavior_epsilon) {
            return Err(BcpoError::validation("behavior_epsilon must lie in [0, 1]"));
        }
        if self.n_transitions == 0 {
            return Err(BcpoError::validation("n_transitions must be positive"));
        }
        if self.fqi_iters == 0 || self.eval_episodes == 0 {
            return Err(BcpoError::validation(
                "fqi_iters and eval_episodes must be positive",
            ));
        }
        if self.prior_mass <= 0.0 {
            return Err(BcpoError::validation("prior_mass must be positive"));
        }
        Ok(())
    }

    /// Parses the flat `key=value` format. Lines starting with `#` and
    /// blank lines are ignored; unknown keys are errors.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BcpoError::validation(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            config.apply(key, value).map_err(|e| {
                BcpoError::validation(format!("config line {}: {e}", lineno + 1))
            })?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::parse(&text)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| BcpoError::validation(format!("bad value for {key}: '{value}'")))
        }
        match key {
            "grid.width" => self.grid.width = num(key, value)?,
            "grid.height" => self.grid.height = num(key, value)?,
            "grid.goal_row" => self.grid.goal_cell.0 = num(key, value)?,
            "grid.goal_col" => self.grid.goal_cell.1 = num(key, value)?,
            "grid.trap_row" => self.grid.trap_cell.0 = num(key, value)?,
            "grid.trap_col" => self.grid.trap_cell.1 = num(key, value)?,
            "grid.start_row" => self.grid.start_cell.0 = num(key, value)?,
            "grid.start_col" => self.grid.start_cell.1 = num(key, value)?,
            "grid.slip_prob" => self.grid.slip_prob = num(key, value)?,
            "grid.step_penalty" => self.grid.step_penalty = num(key, value)?,
            "grid.goal_reward" => self.grid.goal_reward = num(key, value)?,
            "grid.trap_reward" => self.grid.trap_reward = num(key, value)?,
            "grid.gamma" => self.grid.gamma = num(key, value)?,
            "grid.max_episode_steps" => self.grid.max_episode_steps = num(key, value)?,
            "grid.slip_model" => {
                self.grid.slip_model = match value {
                    "perpendicular" => SlipModel::Perpendicular,
                    "uniform" => SlipModel::UniformAction,
                    _ => {
                        return Err(BcpoError::validation(format!(
                            "bad slip model '{value}' (perpendicular|uniform)"
                        )))
                    }
                }
            }
            "grid.terminal_step_penalty" => {
                self.grid.terminal_step_penalty = parse_bool(key, value)?
            }
            "behavior_epsilon" => self.behavior_epsilon = num(key, value)?,
            "n_transitions" => self.n_transitions = num(key, value)?,
            "dataset_seed" => self.dataset_seed = num(key, value)?,
            "prior_mass" => self.prior_mass = num(key, value)?,
            "reward_range" => self.reward_range = Some(num(key, value)?),
            "fqi_iters" => self.fqi_iters = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "eval_seed" => self.eval_seed = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "bcpo.alpha" => self.bcpo.alpha = num(key, value)?,
            "bcpo.trust_region_delta" => self.bcpo.trust_region_delta = num(key, value)?,
            "bcpo.confidence_delta" => self.bcpo.confidence_delta = num(key, value)?,
            "bcpo.gamma" => self.bcpo.gamma = num(key, value)?,
            "bcpo.n_outer_iters" => self.bcpo.n_outer_iters = num(key, value)?,
            "bcpo.critic_tol" => self.bcpo.critic_tol = num(key, value)?,
            "bcpo.critic_max_iters" => self.bcpo.critic_max_iters = num(key, value)?,
            "bcpo.eta_lo" => self.bcpo.eta_bisection.lo = num(key, value)?,
            "bcpo.eta_hi" => self.bcpo.eta_bisection.hi = num(key, value)?,
            "bcpo.eta_tol" => self.bcpo.eta_bisection.tol = num(key, value)?,
            "bcpo.q_max_mode" => {
                self.bcpo.q_max_mode = match value {
                    "reward-range-bound" => QMaxMode::RewardRangeBound,
                    "observed-max" => QMaxMode::ObservedMax,
                    _ => {
                        return Err(BcpoError::validation(format!(
                            "bad q_max mode '{value}' (reward-range-bound|observed-max)"
                        )))
                    }
                }
            }
            "bcpo.seed" => self.bcpo.seed = num(key, value)?,
            other => {
                return Err(BcpoError::validation(format!("unknown config key '{other}'")))
            }
        }
        Ok(())
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(BcpoError::validation(format!(
            "bad boolean for {key}: '{value}'"
        ))),
    }
}

/// Everything the pipeline produces, kept in memory so callers (tests,
/// the CLI) can both inspect results and re-derive the emitted files.
pub struct ExperimentArtifacts {
    pub mdp: TabularMDP,
    pub dataset: TransitionDataset,
    pub counts: CountStatistics,
    pub model: PosteriorModel,
    pub behavior_clone: TabularPolicy,
    pub bc_eval: RolloutStats,
    pub fqi_q: QTable,
    pub fqi_policy: TabularPolicy,
    pub fqi_eval: RolloutStats,
    pub fqi_curve: Vec<(usize, RolloutStats)>,
    pub bcpo: BcpoOutcome,
    pub bcpo_policy: TabularPolicy,
    pub bcpo_eval: RolloutStats,
    pub bcpo_curve: Vec<(usize, RolloutStats)>,
    pub bcpo_v_lcb: Array1<f64>,
    pub summary: Vec<SummaryRow>,
}

fn stage<T>(name: &str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        BcpoError::Io(io) => BcpoError::Io(io),
        BcpoError::Validation(msg) => BcpoError::Validation(format!("stage '{name}': {msg}")),
        other => BcpoError::Numerical(format!("stage '{name}' failed: {other}")),
    })
}

/// Runs the full pipeline without touching the filesystem.
pub fn run_pipeline(config: &ExperimentConfig) -> Result<ExperimentArtifacts> {
    config.validate()?;
    let grid = &config.grid;
    let mdp = stage("build-mdp", build_mdp(grid))?;
    let behavior = stage(
        "behavior-policy",
        make_behavior_policy(&mdp, grid, config.behavior_epsilon),
    )?;
    let dataset = generate_dataset(
        &mdp,
        &behavior,
        config.n_transitions,
        grid.max_episode_steps,
        config.dataset_seed,
    );
    let counts = stage("count-statistics", count_statistics(&dataset))?;
    let prior = stage(
        "prior",
        DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, config.prior_mass),
    )?;
    let model = stage(
        "fit-posterior",
        fit_posterior_with_range(
            &counts,
            &prior,
            config.bcpo.confidence_delta,
            config.effective_reward_range(),
        ),
    )?;

    // Behavior cloning: the stochastic clone is the evaluated policy.
    let behavior_clone = behavior_cloning(&counts);
    let bc_eval = rollout_evaluate(
        &mdp,
        &behavior_clone,
        config.eval_episodes,
        grid.max_episode_steps,
        config.eval_seed,
    );

    // Naive FQI, with rollout checkpoints every 10 iterations.
    let mut fqi_curve = Vec::new();
    let mut q = QTable::zeros(mdp.n_states, mdp.n_actions);
    for iter in 1..=config.fqi_iters {
        q = fqi_backup(&counts, &model.empirical, grid.gamma, &q);
        if q.values.iter().any(|v| !v.is_finite()) {
            return Err(BcpoError::numerical(format!(
                "stage 'fqi' failed: non-finite values at iteration {iter}"
            )));
        }
        if iter % 10 == 0 {
            let stats = rollout_evaluate(
                &mdp,
                &greedy_policy(&q),
                config.eval_episodes,
                grid.max_episode_steps,
                config.eval_seed,
            );
            fqi_curve.push((iter, stats));
        }
    }
    // the final table comes from the named entry point; it folds the
    // same backup as the checkpoint loop above
    let fqi = stage(
        "fqi",
        naive_fqi(&counts, &model.empirical, grid.gamma, config.fqi_iters),
    )?;
    let fqi_policy = greedy_policy(&fqi.q);
    let fqi_eval = rollout_evaluate(
        &mdp,
        &fqi_policy,
        config.eval_episodes,
        grid.max_episode_steps,
        config.eval_seed,
    );

    // BCPO.
    let bcpo = stage(
        "bcpo",
        bcpo_optimize(&counts, &model, &mdp.initial_dist, &config.bcpo, Some(&mdp)),
    )?;
    let bcpo_policy =
        TabularPolicy::from_actions(&bcpo.policy.mode_actions(), mdp.n_actions);
    let bcpo_eval = rollout_evaluate(
        &mdp,
        &bcpo_policy,
        config.eval_episodes,
        grid.max_episode_steps,
        config.eval_seed,
    );
    let bcpo_curve: Vec<(usize, RolloutStats)> = bcpo
        .snapshots
        .iter()
        .zip(bcpo.logs.iter())
        .map(|(snapshot, log)| {
            let mode = TabularPolicy::from_actions(&snapshot.mode_actions(), mdp.n_actions);
            let stats = rollout_evaluate(
                &mdp,
                &mode,
                config.eval_episodes,
                grid.max_episode_steps,
                config.eval_seed,
            );
            (log.iteration, stats)
        })
        .collect();
    let final_critic = stage(
        "bcpo-final-critic",
        solve_pessimistic_fixed_point(
            &bcpo.policy,
            &model,
            &counts,
            config.bcpo.gamma,
            config.bcpo.critic_tol,
            config.bcpo.critic_max_iters,
        ),
    )?;

    let summary = vec![
        SummaryRow {
            method: Method::Bcpo.name(),
            return_mean: bcpo_eval.mean_return,
            return_std: bcpo_eval.std_return,
            episode_length_mean: bcpo_eval.mean_length,
        },
        SummaryRow {
            method: Method::Bc.name(),
            return_mean: bc_eval.mean_return,
            return_std: bc_eval.std_return,
            episode_length_mean: bc_eval.mean_length,
        },
        SummaryRow {
            method: Method::Fqi.name(),
            return_mean: fqi_eval.mean_return,
            return_std: fqi_eval.std_return,
            episode_length_mean: fqi_eval.mean_length,
        },
    ];

    Ok(ExperimentArtifacts {
        mdp,
        dataset,
        counts,
        model,
        behavior_clone,
        bc_eval,
        fqi_q: fqi.q,
        fqi_policy,
        fqi_eval,
        fqi_curve,
        bcpo,
        bcpo_policy,
        bcpo_eval,
        bcpo_curve,
        bcpo_v_lcb: final_critic.v_lcb,
        summary,
    })
}

pub const EMITTED_FILES: [&str; 9] = [
    "summary.csv",
    "learning_curve.csv",
    "coverage_uncertainty.csv",
    "value_map_bcpo.csv",
    "value_map_fqi.csv",
    "policy_map_bcpo.csv",
    "policy_map_fqi.csv",
    "bcpo_iterations.csv",
    "dataset.csv",
];

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,return_mean,return_std,episode_length_mean\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            row.method, row.return_mean, row.return_std, row.episode_length_mean
        );
    }
    out
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some("method,return_mean,return_std,episode_length_mean") => {}
        other => return Err(BcpoError::validation(format!("bad summary header {other:?}"))),
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(BcpoError::validation("bad summary row"));
        }
        let method = Method::parse(fields[0])?.name();
        let parse = |f: &str| {
            f.parse::<f64>()
                .map_err(|_| BcpoError::validation("bad summary number"))
        };
        rows.push(SummaryRow {
            method,
            return_mean: parse(fields[1])?,
            return_std: parse(fields[2])?,
            episode_length_mean: parse(fields[3])?,
        });
    }
    Ok(rows)
}

fn learning_curve_csv(artifacts: &ExperimentArtifacts) -> String {
    let mut out = String::from("method,step,return_mean,return_std\n");
    for (step, stats) in &artifacts.fqi_curve {
        let _ = writeln!(out, "fqi,{},{},{}", step, stats.mean_return, stats.std_return);
    }
    for (step, stats) in &artifacts.bcpo_curve {
        let _ = writeln!(out, "bcpo,{},{},{}", step, stats.mean_return, stats.std_return);
    }
    out
}

fn coverage_csv(artifacts: &ExperimentArtifacts) -> String {
    let mut out = String::from("s,a,n,b_p,b_r\n");
    let counts = &artifacts.counts;
    for s in 0..counts.n_states {
        for a in 0..counts.n_actions {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                s,
                a,
                counts.n_sa[[s, a]],
                artifacts.model.b_p[[s, a]],
                artifacts.model.b_r[[s, a]]
            );
        }
    }
    out
}

fn value_map_csv(grid: &GridSpec, values: &dyn Fn(usize) -> f64) -> String {
    let mut out = String::from("row,col,value\n");
    for row in 0..grid.height {
        for col in 0..grid.width {
            let s = grid.cell_index(row, col);
            let _ = writeln!(out, "{},{},{}", row, col, values(s));
        }
    }
    out
}

fn policy_map_csv(grid: &GridSpec, actions: &[usize]) -> String {
    let mut out = String::from("row,col,action\n");
    for row in 0..grid.height {
        for col in 0..grid.width {
            let s = grid.cell_index(row, col);
            let _ = writeln!(out, "{},{},{}", row, col, actions[s]);
        }
    }
    out
}

pub fn iteration_log_csv(logs: &[IterationLog]) -> String {
    let mut out =
        String::from("iter,eta,surrogate_gain,kl_behavior,kl_prev,j_lcb,j_true,shift_bound\n");
    for log in logs {
        let j_true = match log.j_true {
            Some(v) => format!("{v}"),
            None => "nan".to_string(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            log.iteration,
            log.eta,
            log.surrogate_gain,
            log.kl_to_behavior,
            log.kl_to_previous,
            log.j_lcb,
            j_true,
            log.shift_bound
        );
    }
    out
}

/// Runs the pipeline and writes the nine CSV artifacts into
/// `config.output_dir`. Files are written whole; a sub-stage failure
/// aborts before its file is created.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<SummaryRow>> {
    let artifacts = run_pipeline(config)?;
    write_artifacts(config, &artifacts)?;
    Ok(artifacts.summary)
}

pub fn write_artifacts(config: &ExperimentConfig, artifacts: &ExperimentArtifacts) -> Result<()> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let grid = &config.grid;
    let fqi_v = |s: usize| -> f64 {
        let mut best = f64::NEG_INFINITY;
        for a in 0..artifacts.mdp.n_actions {
            best = best.max(artifacts.fqi_q.values[[s, a]]);
        }
        best
    };
    let bcpo_v = |s: usize| artifacts.bcpo_v_lcb[s];
    let files: Vec<(&str, String)> = vec![
        ("summary.csv", summary_csv(&artifacts.summary)),
        ("learning_curve.csv", learning_curve_csv(artifacts)),
        ("coverage_uncertainty.csv", coverage_csv(artifacts)),
        ("value_map_bcpo.csv", value_map_csv(grid, &bcpo_v)),
        ("value_map_fqi.csv", value_map_csv(grid, &fqi_v)),
        (
            "policy_map_bcpo.csv",
            policy_map_csv(grid, &artifacts.bcpo_policy.mode_actions()),
        ),
        (
            "policy_map_fqi.csv",
            policy_map_csv(grid, &artifacts.fqi_policy.mode_actions()),
        ),
        ("bcpo_iterations.csv", iteration_log_csv(&artifacts.bcpo.logs)),
        ("dataset.csv", artifacts.dataset.to_csv_string()),
    ];
    for (name, content) in files {
        std::fs::write(dir.join(name), content)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_parser() {
        let config = ExperimentConfig::parse("").unwrap();
        assert_eq!(config.n_transitions, 15_000);
        assert_eq!(config.grid.goal_cell, (5, 5));
        assert_eq!(config.bcpo.n_outer_iters, 30);
    }

    #[test]
    fn parser_applies_dotted_keys() {
        let text = "grid.slip_prob = 0.2\nbcpo.alpha=0.5\nbehavior_epsilon=0.3\n# comment\n";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.grid.slip_prob, 0.2);
        assert_eq!(config.bcpo.alpha, 0.5);
        assert_eq!(config.behavior_epsilon, 0.3);
    }

    #[test]
    fn parser_rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::parse("grid.slip=0.1").is_err());
        assert!(ExperimentConfig::parse("grid.slip_prob=fast").is_err());
        assert!(ExperimentConfig::parse("grid.slip_prob").is_err());
        assert!(ExperimentConfig::parse("bcpo.q_max_mode=softmax").is_err());
    }

    #[test]
    fn parser_validates_combined_config() {
        // trap placed on the goal cell
        assert!(ExperimentConfig::parse("grid.trap_row=5\ngrid.trap_col=5").is_err());
    }

    #[test]
    fn reward_range_is_derived_from_grid() {
        let config = ExperimentConfig::default();
        // goal entry 0.99, trap entry -1.01: range 2.0
        assert!((config.effective_reward_range() - 2.0).abs() < 1e-12);
        let override_config = ExperimentConfig {
            reward_range: Some(1.5),
            ..ExperimentConfig::default()
        };
        assert!((override_config.effective_reward_range() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn summary_csv_round_trip() {
        let rows = vec![
            SummaryRow {
                method: "bcpo",
                return_mean: 0.5,
                return_std: 0.25,
                episode_length_mean: 12.5,
            },
            SummaryRow {
                method: "bc",
                return_mean: -0.125,
                return_std: 1.0,
                episode_length_mean: 60.0,
            },
        ];
        let text = summary_csv(&rows);
        let back = parse_summary_csv(&text).unwrap();
        assert_eq!(rows, back);
    }
}
