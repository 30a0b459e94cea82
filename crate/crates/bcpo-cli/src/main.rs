//! Experiment CLI: dataset generation, per-method training, policy
//! evaluation, the full benchmark run, and the theorem verification
//! suite.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 numerical or
//! convergence failure, 3 I/O failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bcpo::baselines::greedy_policy;
use bcpo::data::{behavior_cloning, count_statistics};
use bcpo::error::BcpoError;
use bcpo::experiment::{
    iteration_log_csv, run_pipeline, write_artifacts, ExperimentConfig, Method,
};
use bcpo::gridworld::{
    build_mdp, generate_dataset, make_behavior_policy, rollout_evaluate, RolloutStats,
};
use bcpo::mdp::TabularPolicy;
use bcpo::policy::bcpo_optimize;
use bcpo::posterior::{fit_posterior_with_range, DirichletPrior};
use bcpo::verify;

#[derive(Parser)]
#[command(name = "bcpo", disable_help_subcommand = true)]
struct Cli {
    /// Experiment config file (flat key=value); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the dataset and optimizer seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (overrides the config's output_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the offline dataset and write dataset.csv.
    GenData,
    /// Train one method (bcpo | bc | fqi) and write its artifacts.
    Train { method: String },
    /// Roll out a saved greedy policy map (bcpo | fqi).
    Eval { method: String },
    /// Run the full experiment and emit every artifact.
    Run,
    /// Execute the theorem/property suite, one pass/fail line each.
    Verify,
}

fn exit_code_for(err: &BcpoError) -> u8 {
    match err {
        BcpoError::Validation(_) | BcpoError::EmptyDataset => 1,
        BcpoError::Numerical(_)
        | BcpoError::NonConvergence { .. }
        | BcpoError::InfeasibleTrustRegion { .. } => 2,
        BcpoError::Io(_) => 3,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, BcpoError> {
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                BcpoError::Io(std::io::Error::new(
                    e.kind(),
                    format!("config '{}': {e}", path.display()),
                ))
            })?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.dataset_seed = seed;
        config.bcpo.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    Ok(config)
}

fn print_stats(label: &str, stats: &RolloutStats) {
    println!(
        "{label}: return {:.4} +/- {:.4}, mean episode length {:.1}",
        stats.mean_return, stats.std_return, stats.mean_length
    );
}

fn cmd_gen_data(config: &ExperimentConfig) -> Result<(), BcpoError> {
    let mdp = build_mdp(&config.grid)?;
    let behavior = make_behavior_policy(&mdp, &config.grid, config.behavior_epsilon)?;
    let dataset = generate_dataset(
        &mdp,
        &behavior,
        config.n_transitions,
        config.grid.max_episode_steps,
        config.dataset_seed,
    );
    std::fs::create_dir_all(&config.output_dir)?;
    let path = config.output_dir.join("dataset.csv");
    dataset.write_csv(&path)?;
    println!("wrote {} transitions to {}", dataset.len(), path.display());
    Ok(())
}

fn write_map_files(
    config: &ExperimentConfig,
    tag: &str,
    values: &[f64],
    actions: &[usize],
) -> Result<(), BcpoError> {
    use std::fmt::Write as _;
    let grid = &config.grid;
    let mut value_text = String::from("row,col,value\n");
    let mut policy_text = String::from("row,col,action\n");
    for row in 0..grid.height {
        for col in 0..grid.width {
            let s = grid.cell_index(row, col);
            let _ = writeln!(value_text, "{},{},{}", row, col, values[s]);
            let _ = writeln!(policy_text, "{},{},{}", row, col, actions[s]);
        }
    }
    std::fs::create_dir_all(&config.output_dir)?;
    std::fs::write(config.output_dir.join(format!("value_map_{tag}.csv")), value_text)?;
    std::fs::write(
        config.output_dir.join(format!("policy_map_{tag}.csv")),
        policy_text,
    )?;
    Ok(())
}

fn cmd_train(config: &ExperimentConfig, method: Method) -> Result<(), BcpoError> {
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
    match method {
        Method::Bc => {
            let clone = behavior_cloning(&counts);
            let stats = rollout_evaluate(
                &mdp,
                &clone,
                config.eval_episodes,
                config.grid.max_episode_steps,
                config.eval_seed,
            );
            print_stats("bc", &stats);
        }
        Method::Fqi => {
            let empirical = bcpo::posterior::empirical_transitions(&counts);
            let fqi =
                bcpo::baselines::naive_fqi(&counts, &empirical, config.grid.gamma, config.fqi_iters)?;
            let policy = greedy_policy(&fqi.q);
            let values: Vec<f64> = (0..mdp.n_states)
                .map(|s| {
                    (0..mdp.n_actions)
                        .map(|a| fqi.q.values[[s, a]])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .collect();
            write_map_files(config, "fqi", &values, &policy.mode_actions())?;
            let stats = rollout_evaluate(
                &mdp,
                &policy,
                config.eval_episodes,
                config.grid.max_episode_steps,
                config.eval_seed,
            );
            print_stats("fqi", &stats);
        }
        Method::Bcpo => {
            let prior =
                DirichletPrior::symmetric(mdp.n_states, mdp.n_actions, config.prior_mass)?;
            let model = fit_posterior_with_range(
                &counts,
                &prior,
                config.bcpo.confidence_delta,
                config.effective_reward_range(),
            )?;
            let run = bcpo_optimize(&counts, &model, &mdp.initial_dist, &config.bcpo, Some(&mdp))?;
            std::fs::create_dir_all(&config.output_dir)?;
            std::fs::write(
                config.output_dir.join("bcpo_iterations.csv"),
                iteration_log_csv(&run.logs),
            )?;
            let critic = bcpo::critic::solve_pessimistic_fixed_point(
                &run.policy,
                &model,
                &counts,
                config.bcpo.gamma,
                config.bcpo.critic_tol,
                config.bcpo.critic_max_iters,
            )?;
            let mode = TabularPolicy::from_actions(&run.policy.mode_actions(), mdp.n_actions);
            write_map_files(
                config,
                "bcpo",
                critic.v_lcb.as_slice().unwrap(),
                &mode.mode_actions(),
            )?;
            let stats = rollout_evaluate(
                &mdp,
                &mode,
                config.eval_episodes,
                config.grid.max_episode_steps,
                config.eval_seed,
            );
            print_stats("bcpo", &stats);
        }
    }
    Ok(())
}

fn cmd_eval(config: &ExperimentConfig, method: Method) -> Result<(), BcpoError> {
    let tag = match method {
        Method::Bcpo => "bcpo",
        Method::Fqi => "fqi",
        Method::Bc => {
            return Err(BcpoError::validation(
                "bc has no saved policy map; use `train bc` to evaluate the clone",
            ))
        }
    };
    let path = config.output_dir.join(format!("policy_map_{tag}.csv"));
    let text = std::fs::read_to_string(&path).map_err(|e| {
        BcpoError::Io(std::io::Error::new(
            e.kind(),
            format!("policy map '{}': {e}", path.display()),
        ))
    })?;
    let mdp = build_mdp(&config.grid)?;
    let mut actions = vec![0usize; mdp.n_states];
    let mut lines = text.lines();
    match lines.next() {
        Some("row,col,action") => {}
        other => {
            return Err(BcpoError::validation(format!(
                "bad policy map header: {other:?}"
            )))
        }
    }
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(BcpoError::validation("bad policy map row"));
        }
        let parse = |f: &str| {
            f.parse::<usize>()
                .map_err(|_| BcpoError::validation("bad policy map number"))
        };
        let (row, col, action) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
        if row >= config.grid.height || col >= config.grid.width || action >= mdp.n_actions {
            return Err(BcpoError::validation("policy map entry out of range"));
        }
        actions[config.grid.cell_index(row, col)] = action;
    }
    let policy = TabularPolicy::from_actions(&actions, mdp.n_actions);
    let stats = rollout_evaluate(
        &mdp,
        &policy,
        config.eval_episodes,
        config.grid.max_episode_steps,
        config.eval_seed,
    );
    print_stats(tag, &stats);
    Ok(())
}

fn cmd_run(config: &ExperimentConfig) -> Result<(), BcpoError> {
    let artifacts = run_pipeline(config)?;
    write_artifacts(config, &artifacts)?;
    for row in &artifacts.summary {
        println!(
            "{}: return {:.4} +/- {:.4}, mean episode length {:.1}",
            row.method, row.return_mean, row.return_std, row.episode_length_mean
        );
    }
    println!("wrote artifacts to {}", config.output_dir.display());
    Ok(())
}

fn cmd_verify() -> u8 {
    let outcomes = verify::theorem_checks();
    let mut all_passed = true;
    for outcome in &outcomes {
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] {}: {}", outcome.name, outcome.detail);
        all_passed &= outcome.passed;
    }
    if all_passed {
        0
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let config = match load_config(&cli) {
        Ok(config) => config,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(exit_code_for(&err));
        }
    };
    let result = match &cli.command {
        Command::GenData => cmd_gen_data(&config),
        Command::Train { method } => {
            Method::parse(method).and_then(|m| cmd_train(&config, m))
        }
        Command::Eval { method } => Method::parse(method).and_then(|m| cmd_eval(&config, m)),
        Command::Run => cmd_run(&config),
        Command::Verify => return ExitCode::from(cmd_verify()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
