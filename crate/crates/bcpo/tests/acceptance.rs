//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use bcpo::experiment::{run_experiment, ExperimentConfig, EMITTED_FILES};
use bcpo::verify;

fn report(name: &str, passed: bool, detail: &str) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(passed, "{name}: {detail}");
}

/// Criterion 1: across 5 dataset seeds of the default config, BCPO
/// beats BC and FQI trails BC in at least 4, and FQI ends below zero in
/// at least 3.
#[test]
fn criterion_1_gridworld_method_ordering() {
    let mut bcpo_beats_bc = 0;
    let mut fqi_below_bc = 0;
    let mut fqi_negative = 0;
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let dir = tempfile::tempdir().unwrap();
        let config = ExperimentConfig {
            dataset_seed: seed,
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        let summary = run_experiment(&config).unwrap();
        let get = |name: &str| {
            summary
                .iter()
                .find(|row| row.method == name)
                .unwrap()
                .return_mean
        };
        let (bcpo, bc, fqi) = (get("bcpo"), get("bc"), get("fqi"));
        lines.push(format!(
            "seed {seed}: bcpo {bcpo:.3}, bc {bc:.3}, fqi {fqi:.3}"
        ));
        if bcpo > bc {
            bcpo_beats_bc += 1;
        }
        if fqi < bc {
            fqi_below_bc += 1;
        }
        if fqi < 0.0 {
            fqi_negative += 1;
        }
    }
    let detail = format!(
        "bcpo>bc {bcpo_beats_bc}/5, fqi<bc {fqi_below_bc}/5, fqi<0 {fqi_negative}/5 | {}",
        lines.join("; ")
    );
    report(
        "criterion 1 (gridworld method ordering)",
        bcpo_beats_bc >= 4 && fqi_below_bc >= 4 && fqi_negative >= 3,
        &detail,
    );
}

/// Criteria 2-8 plus the supporting theorem properties, via the shared
/// verification suite.
#[test]
fn criteria_2_through_8_theorem_suite() {
    let criterion_of = |name: &str| match name {
        "one-step-pessimism-calibration" | "fixed-point-pessimism" => "criterion 2",
        "contraction-and-convergence" => "criterion 3",
        "performance-difference-lemma" => "criterion 4",
        "mirror-descent-optimality" => "criterion 5",
        "pinsker-and-shift-bounds" => "criterion 6",
        "certificate-audit" => "criterion 7",
        "coverage-uncertainty-monotonicity" => "criterion 8",
        _ => "supporting",
    };
    let outcomes = verify::theorem_checks();
    let mut all_passed = true;
    for outcome in &outcomes {
        let tag = if outcome.passed { "PASS" } else { "FAIL" };
        println!(
            "[{tag}] ({}) {}: {}",
            criterion_of(outcome.name),
            outcome.name,
            outcome.detail
        );
        all_passed &= outcome.passed;
    }
    assert!(all_passed, "theorem suite had failures (see lines above)");
}

/// Criterion 9: identical config and seeds produce byte-identical CSVs.
#[test]
fn criterion_9_determinism() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    // a lighter run exercises the same code paths
    let mut config = ExperimentConfig {
        n_transitions: 4_000,
        eval_episodes: 300,
        fqi_iters: 100,
        ..ExperimentConfig::default()
    };
    config.bcpo.n_outer_iters = 10;

    config.output_dir = dir_a.path().to_path_buf();
    run_experiment(&config).unwrap();
    config.output_dir = dir_b.path().to_path_buf();
    run_experiment(&config).unwrap();

    for name in EMITTED_FILES {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        report(
            &format!("criterion 9 (determinism of {name})"),
            a == b,
            &format!("{} bytes", a.len()),
        );
    }
}
