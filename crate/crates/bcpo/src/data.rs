//! Logged transitions and the sufficient statistics every offline
//! estimator consumes: visit counts, empirical rewards, the behavior
//! clone, and the empirical state marginal.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{BcpoError, Result};
use crate::mdp::TabularPolicy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone)]
pub struct TransitionDataset {
    pub records: Vec<Transition>,
    pub n_states: usize,
    pub n_actions: usize,
}

impl TransitionDataset {
    pub fn new(records: Vec<Transition>, n_states: usize, n_actions: usize) -> Result<Self> {
        for (i, rec) in records.iter().enumerate() {
            if rec.state >= n_states || rec.next_state >= n_states {
                return Err(BcpoError::validation(format!(
                    "record {i}: state index out of range"
                )));
            }
            if rec.action >= n_actions {
                return Err(BcpoError::validation(format!(
                    "record {i}: action index out of range"
                )));
            }
            if !rec.reward.is_finite() {
                return Err(BcpoError::validation(format!(
                    "record {i}: non-finite reward"
                )));
            }
        }
        Ok(TransitionDataset {
            records,
            n_states,
            n_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV serialization with header `s,a,r,s_next,terminal`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("s,a,r,s_next,terminal\n");
        for rec in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                rec.state,
                rec.action,
                rec.reward,
                rec.next_state,
                if rec.terminal { 1 } else { 0 }
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_string(text: &str, n_states: usize, n_actions: usize) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("s,a,r,s_next,terminal") => {}
            other => {
                return Err(BcpoError::validation(format!(
                    "bad dataset header: {other:?}"
                )))
            }
        }
        let mut records = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(BcpoError::validation(format!(
                    "dataset line {}: expected 5 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_err = |what: &str| {
                BcpoError::validation(format!("dataset line {}: bad {what}", lineno + 2))
            };
            let terminal = match fields[4] {
                "0" => false,
                "1" => true,
                _ => return Err(parse_err("terminal flag")),
            };
            records.push(Transition {
                state: fields[0].parse().map_err(|_| parse_err("state"))?,
                action: fields[1].parse().map_err(|_| parse_err("action"))?,
                reward: fields[2].parse().map_err(|_| parse_err("reward"))?,
                next_state: fields[3].parse().map_err(|_| parse_err("next state"))?,
                terminal,
            });
        }
        TransitionDataset::new(records, n_states, n_actions)
    }

    pub fn read_csv(path: &Path, n_states: usize, n_actions: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_string(&text, n_states, n_actions)
    }
}

/// Visit counts and empirical reward means. Counts are exact integers so
/// that every bonus and posterior update is bit-reproducible.
#[derive(Debug, Clone)]
pub struct CountStatistics {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_sa: Array2<u64>,
    pub n_sas: Array3<u64>,
    pub reward_sum: Array2<f64>,
    pub reward_mean: Array2<f64>,
    pub total: u64,
    /// Observed per-record reward extremes (0 for an empty dataset).
    pub reward_min: f64,
    pub reward_max: f64,
    /// States observed as terminal next-states in the dataset.
    pub terminal_observed: Vec<bool>,
}

pub fn count_statistics(dataset: &TransitionDataset) -> Result<CountStatistics> {
    let (s, a) = (dataset.n_states, dataset.n_actions);
    let mut n_sa = Array2::<u64>::zeros((s, a));
    let mut n_sas = Array3::<u64>::zeros((s, a, s));
    let mut reward_sum = Array2::<f64>::zeros((s, a));
    let mut terminal_observed = vec![false; s];
    let mut reward_min = f64::INFINITY;
    let mut reward_max = f64::NEG_INFINITY;
    for rec in &dataset.records {
        if rec.state >= s || rec.action >= a || rec.next_state >= s {
            return Err(BcpoError::validation("record index out of range"));
        }
        n_sa[[rec.state, rec.action]] += 1;
        n_sas[[rec.state, rec.action, rec.next_state]] += 1;
        reward_sum[[rec.state, rec.action]] += rec.reward;
        reward_min = reward_min.min(rec.reward);
        reward_max = reward_max.max(rec.reward);
        if rec.terminal {
            terminal_observed[rec.next_state] = true;
        }
    }
    if dataset.records.is_empty() {
        reward_min = 0.0;
        reward_max = 0.0;
    }
    let mut reward_mean = Array2::<f64>::zeros((s, a));
    for i in 0..s {
        for j in 0..a {
            if n_sa[[i, j]] > 0 {
                reward_mean[[i, j]] = reward_sum[[i, j]] / n_sa[[i, j]] as f64;
            }
        }
    }
    Ok(CountStatistics {
        n_states: s,
        n_actions: a,
        n_sa,
        n_sas,
        reward_sum,
        reward_mean,
        total: dataset.records.len() as u64,
        reward_min,
        reward_max,
        terminal_observed,
    })
}

/// Maximum-likelihood behavior clone: empirical action frequencies per
/// state, uniform on states never visited.
pub fn behavior_cloning(counts: &CountStatistics) -> TabularPolicy {
    let (s, a) = (counts.n_states, counts.n_actions);
    let mut probs = Array2::zeros((s, a));
    for state in 0..s {
        let visits: u64 = (0..a).map(|act| counts.n_sa[[state, act]]).sum();
        if visits == 0 {
            for act in 0..a {
                probs[[state, act]] = 1.0 / a as f64;
            }
        } else {
            for act in 0..a {
                probs[[state, act]] = counts.n_sa[[state, act]] as f64 / visits as f64;
            }
        }
    }
    TabularPolicy { probs }
}

/// Empirical state marginal nu_hat(s) = sum_a n(s,a) / N.
pub fn state_marginal(counts: &CountStatistics) -> Result<Array1<f64>> {
    if counts.total == 0 {
        return Err(BcpoError::EmptyDataset);
    }
    let mut nu = Array1::zeros(counts.n_states);
    for s in 0..counts.n_states {
        let visits: u64 = (0..counts.n_actions).map(|a| counts.n_sa[[s, a]]).sum();
        nu[s] = visits as f64 / counts.total as f64;
    }
    Ok(nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(s: usize, a: usize, r: f64, sn: usize, t: bool) -> Transition {
        Transition {
            state: s,
            action: a,
            reward: r,
            next_state: sn,
            terminal: t,
        }
    }

    #[test]
    fn empty_dataset_gives_zero_counts() {
        let ds = TransitionDataset::new(vec![], 3, 2).unwrap();
        let counts = count_statistics(&ds).unwrap();
        assert_eq!(counts.total, 0);
        assert!(counts.n_sa.iter().all(|&n| n == 0));
        assert!(counts.reward_mean.iter().all(|&r| r == 0.0));
        assert!(state_marginal(&counts).is_err());
    }

    #[test]
    fn repeated_record_counts() {
        let recs = vec![record(1, 0, 0.5, 2, false); 3];
        let ds = TransitionDataset::new(recs, 3, 2).unwrap();
        let counts = count_statistics(&ds).unwrap();
        assert_eq!(counts.n_sa[[1, 0]], 3);
        assert_eq!(counts.n_sas[[1, 0, 2]], 3);
        assert!((counts.reward_mean[[1, 0]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn counts_match_naive_recount() {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let (s, a) = (6, 3);
        let recs: Vec<Transition> = (0..1000)
            .map(|_| {
                record(
                    rng.random_range(0..s),
                    rng.random_range(0..a),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0..s),
                    rng.random_range(0.0..1.0) < 0.05,
                )
            })
            .collect();
        let ds = TransitionDataset::new(recs.clone(), s, a).unwrap();
        let counts = count_statistics(&ds).unwrap();
        for si in 0..s {
            for ai in 0..a {
                let expected = recs
                    .iter()
                    .filter(|r| r.state == si && r.action == ai)
                    .count() as u64;
                assert_eq!(counts.n_sa[[si, ai]], expected);
                for sj in 0..s {
                    let expected3 = recs
                        .iter()
                        .filter(|r| r.state == si && r.action == ai && r.next_state == sj)
                        .count() as u64;
                    assert_eq!(counts.n_sas[[si, ai, sj]], expected3);
                }
            }
        }
        assert_eq!(counts.total, 1000);
        // count consistency: sum over s' recovers n(s,a)
        for si in 0..s {
            for ai in 0..a {
                let marg: u64 = (0..s).map(|sj| counts.n_sas[[si, ai, sj]]).sum();
                assert_eq!(marg, counts.n_sa[[si, ai]]);
            }
        }
    }

    #[test]
    fn behavior_cloning_frequencies() {
        let mut recs = vec![record(0, 0, 0.0, 1, false); 3];
        recs.push(record(0, 1, 0.0, 1, false));
        let ds = TransitionDataset::new(recs, 2, 2).unwrap();
        let bc = behavior_cloning(&count_statistics(&ds).unwrap());
        assert!((bc.probs[[0, 0]] - 0.75).abs() < 1e-15);
        assert!((bc.probs[[0, 1]] - 0.25).abs() < 1e-15);
        // unvisited state falls back to uniform
        assert!((bc.probs[[1, 0]] - 0.5).abs() < 1e-15);
        assert!((bc.probs[[1, 1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn behavior_cloning_uniform_fallback_four_actions() {
        let ds = TransitionDataset::new(vec![record(0, 0, 0.0, 0, false)], 2, 4).unwrap();
        let bc = behavior_cloning(&count_statistics(&ds).unwrap());
        for a in 0..4 {
            assert!((bc.probs[[1, a]] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn behavior_cloning_maximizes_likelihood_on_grid() {
        // counts (3, 1) over two actions; scan the simplex
        let mut recs = vec![record(0, 0, 0.0, 0, false); 3];
        recs.push(record(0, 1, 0.0, 0, false));
        let ds = TransitionDataset::new(recs, 1, 2).unwrap();
        let counts = count_statistics(&ds).unwrap();
        let bc = behavior_cloning(&counts);
        let loglik = |p: f64| 3.0 * p.ln() + (1.0 - p).ln();
        let bc_ll = loglik(bc.probs[[0, 0]]);
        for i in 1..1000 {
            let p = i as f64 / 1000.0;
            assert!(loglik(p) <= bc_ll + 1e-12, "p={p} beats BC row");
        }
    }

    #[test]
    fn state_marginal_ratios() {
        let mut recs = vec![record(0, 0, 0.0, 1, false); 30];
        recs.extend(vec![record(1, 0, 0.0, 0, false); 70]);
        let ds = TransitionDataset::new(recs, 2, 1).unwrap();
        let nu = state_marginal(&count_statistics(&ds).unwrap()).unwrap();
        assert!((nu[0] - 0.3).abs() < 1e-12);
        assert!((nu[1] - 0.7).abs() < 1e-12);
        assert!((nu.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_marginal_point_mass() {
        let ds =
            TransitionDataset::new(vec![record(2, 0, 1.0, 2, false); 5], 4, 1).unwrap();
        let nu = state_marginal(&count_statistics(&ds).unwrap()).unwrap();
        assert_eq!(nu[2], 1.0);
        assert_eq!(nu[0], 0.0);
    }

    #[test]
    fn out_of_range_record_rejected() {
        assert!(TransitionDataset::new(vec![record(5, 0, 0.0, 0, false)], 3, 2).is_err());
        assert!(TransitionDataset::new(vec![record(0, 3, 0.0, 0, false)], 3, 2).is_err());
    }

    #[test]
    fn csv_round_trip_exact() {
        let recs = vec![
            record(0, 1, -0.01, 2, false),
            record(2, 0, 0.99, 3, true),
            record(1, 1, -1.01, 0, true),
        ];
        let ds = TransitionDataset::new(recs.clone(), 4, 2).unwrap();
        let text = ds.to_csv_string();
        let back = TransitionDataset::from_csv_string(&text, 4, 2).unwrap();
        assert_eq!(back.records, recs);
    }

    proptest! {
        #[test]
        fn counting_is_permutation_invariant(seed in 0u64..500) {
            use rand::seq::SliceRandom;
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let recs: Vec<Transition> = (0..200)
                .map(|_| record(
                    rng.random_range(0..4),
                    rng.random_range(0..3),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0..4),
                    false,
                ))
                .collect();
            let mut shuffled = recs.clone();
            shuffled.shuffle(&mut rng);
            let c1 = count_statistics(&TransitionDataset::new(recs, 4, 3).unwrap()).unwrap();
            let c2 = count_statistics(&TransitionDataset::new(shuffled, 4, 3).unwrap()).unwrap();
            prop_assert_eq!(c1.n_sa, c2.n_sa);
            prop_assert_eq!(c1.n_sas, c2.n_sas);
            // reward sums agree up to float reassociation
            for (a, b) in c1.reward_sum.iter().zip(c2.reward_sum.iter()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn csv_round_trip_preserves_counts(seed in 0u64..200) {
            use rand::Rng;
            use rand_chacha::rand_core::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let recs: Vec<Transition> = (0..50)
                .map(|_| record(
                    rng.random_range(0..5),
                    rng.random_range(0..2),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0..5),
                    rng.random_range(0.0..1.0) < 0.1,
                ))
                .collect();
            let ds = TransitionDataset::new(recs, 5, 2).unwrap();
            let back = TransitionDataset::from_csv_string(&ds.to_csv_string(), 5, 2).unwrap();
            prop_assert_eq!(ds.records, back.records);
        }
    }
}
