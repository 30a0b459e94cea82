//! Dirichlet posterior over transitions, the empirical and posterior-mean
//! transition estimators, and the confidence radii that drive pessimism.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::CountStatistics;
use crate::error::{BcpoError, Result};

/// Independent Dirichlet prior per (s, a) row.
#[derive(Debug, Clone)]
pub struct DirichletPrior {
    pub alpha0: Array3<f64>,
    /// Row totals alpha0(s,a) = sum_{s'} alpha0(s,a,s').
    pub alpha0_sum: Array2<f64>,
}

impl DirichletPrior {
    pub fn new(alpha0: Array3<f64>) -> Result<Self> {
        let (s, a, _) = alpha0.dim();
        if alpha0.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(BcpoError::validation("prior concentrations must be >= 0"));
        }
        let mut alpha0_sum = Array2::zeros((s, a));
        for i in 0..s {
            for j in 0..a {
                let total: f64 = (0..s).map(|k| alpha0[[i, j, k]]).sum();
                if total <= 0.0 {
                    return Err(BcpoError::validation(format!(
                        "improper prior: alpha0({i},{j}) sums to {total}"
                    )));
                }
                alpha0_sum[[i, j]] = total;
            }
        }
        Ok(DirichletPrior { alpha0, alpha0_sum })
    }

    /// Symmetric prior with row mass `total_mass` spread over successors,
    /// i.e. alpha0(s,a,s') = total_mass / |S|.
    pub fn symmetric(n_states: usize, n_actions: usize, total_mass: f64) -> Result<Self> {
        if total_mass <= 0.0 || !total_mass.is_finite() {
            return Err(BcpoError::validation("prior mass must be positive"));
        }
        let per_cell = total_mass / n_states as f64;
        DirichletPrior::new(Array3::from_elem((n_states, n_actions, n_states), per_cell))
    }
}

/// Fitted posterior summary: estimators plus bonus tables.
#[derive(Debug, Clone)]
pub struct PosteriorModel {
    /// Posterior-mean transitions (alpha0 + n) / (alpha0_sum + n_sa).
    pub posterior_mean: Array3<f64>,
    /// Empirical transitions, uniform on unvisited rows.
    pub empirical: Array3<f64>,
    pub b_r: Array2<f64>,
    pub b_p: Array2<f64>,
    pub delta: f64,
    pub reward_range: f64,
}

/// Empirical transition tensor: n(s,a,s')/n(s,a), uniform when n(s,a) = 0.
pub fn empirical_transitions(counts: &CountStatistics) -> Array3<f64> {
    let (s, a) = (counts.n_states, counts.n_actions);
    let mut out = Array3::zeros((s, a, s));
    for i in 0..s {
        for j in 0..a {
            let n = counts.n_sa[[i, j]];
            if n == 0 {
                for k in 0..s {
                    out[[i, j, k]] = 1.0 / s as f64;
                }
            } else {
                for k in 0..s {
                    out[[i, j, k]] = counts.n_sas[[i, j, k]] as f64 / n as f64;
                }
            }
        }
    }
    out
}

/// Fits the posterior with rewards assumed to span a unit range.
pub fn fit_posterior(
    counts: &CountStatistics,
    prior: &DirichletPrior,
    delta: f64,
) -> Result<PosteriorModel> {
    fit_posterior_with_range(counts, prior, delta, 1.0)
}

/// Fits the posterior, scaling the Hoeffding reward radius by
/// `reward_range` so it stays valid for rewards outside [0, 1].
pub fn fit_posterior_with_range(
    counts: &CountStatistics,
    prior: &DirichletPrior,
    delta: f64,
    reward_range: f64,
) -> Result<PosteriorModel> {
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(BcpoError::validation(format!(
            "confidence delta must lie in (0, 1), got {delta}"
        )));
    }
    if reward_range <= 0.0 || !reward_range.is_finite() {
        return Err(BcpoError::validation("reward range must be positive"));
    }
    let (s, a) = (counts.n_states, counts.n_actions);
    if prior.alpha0.dim() != (s, a, s) {
        return Err(BcpoError::validation("prior shape does not match counts"));
    }
    let log_term = (2.0 * s as f64 * a as f64 / delta).ln();
    let mut posterior_mean = Array3::zeros((s, a, s));
    let mut b_r = Array2::zeros((s, a));
    let mut b_p = Array2::zeros((s, a));
    for i in 0..s {
        for j in 0..a {
            let n = counts.n_sa[[i, j]] as f64;
            let row_mass = prior.alpha0_sum[[i, j]] + n;
            for k in 0..s {
                posterior_mean[[i, j, k]] =
                    (prior.alpha0[[i, j, k]] + counts.n_sas[[i, j, k]] as f64) / row_mass;
            }
            b_r[[i, j]] = reward_range * (log_term / (2.0 * n.max(1.0))).sqrt();
            b_p[[i, j]] = (2.0 * log_term / row_mass).sqrt().min(1.0);
        }
    }
    Ok(PosteriorModel {
        posterior_mean,
        empirical: empirical_transitions(counts),
        b_r,
        b_p,
        delta,
        reward_range,
    })
}

/// Draws one transition model from the posterior: each row sampled
/// independently from Dirichlet(alpha0 + n), via normalized Gamma draws.
pub fn sample_transition_model(
    prior: &DirichletPrior,
    counts: &CountStatistics,
    seed: u64,
) -> Result<Array3<f64>> {
    let (s, a) = (counts.n_states, counts.n_actions);
    if prior.alpha0.dim() != (s, a, s) {
        return Err(BcpoError::validation("prior shape does not match counts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array3::zeros((s, a, s));
    for i in 0..s {
        for j in 0..a {
            let mut row = vec![0.0; s];
            let mut total = 0.0;
            for (k, slot) in row.iter_mut().enumerate() {
                let shape = prior.alpha0[[i, j, k]] + counts.n_sas[[i, j, k]] as f64;
                if shape > 0.0 {
                    let gamma = Gamma::new(shape, 1.0)
                        .map_err(|e| BcpoError::numerical(format!("gamma sampler: {e}")))?;
                    *slot = gamma.sample(&mut rng);
                }
                total += *slot;
            }
            if total <= 0.0 {
                // all-zero concentrations cannot happen under a proper prior
                return Err(BcpoError::numerical("degenerate Dirichlet draw"));
            }
            for k in 0..s {
                out[[i, j, k]] = row[k] / total;
            }
        }
    }
    Ok(out)
}

/// Seeded random counts table, for bonus/posterior property tests.
pub fn random_counts(n_states: usize, n_actions: usize, n_records: usize, seed: u64) -> CountStatistics {
    use crate::data::{count_statistics, Transition, TransitionDataset};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<Transition> = (0..n_records)
        .map(|_| Transition {
            state: rng.random_range(0..n_states),
            action: rng.random_range(0..n_actions),
            reward: rng.random_range(0.0..1.0),
            next_state: rng.random_range(0..n_states),
            terminal: false,
        })
        .collect();
    count_statistics(&TransitionDataset::new(records, n_states, n_actions).unwrap()).unwrap()
}
