//! Differential evolution (DE/rand/1/bin) over a box, with inequality
//! constraints handled by feasibility rules:
//!
//! 1. a feasible point beats an infeasible one,
//! 2. two infeasible points compare by total violation,
//! 3. two feasible points compare by objective.
//!
//! Trial vectors for a whole generation are built first from the seeded
//! generator and then evaluated, possibly in parallel. Selection reads only
//! stored values, so results do not depend on evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("bad bounds: {0}")]
    BadBounds(String),
    #[error("bad parameter: {0}")]
    BadParams(String),
    #[error("objective returned {value} at {vector:?}")]
    NonFiniteObjective { vector: Vec<f64>, value: f64 },
    #[error("violation returned {value} at {vector:?}")]
    BadViolation { vector: Vec<f64>, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeParams {
    pub population_size: usize,
    /// Differential weight F.
    pub mutation_factor: f64,
    /// Crossover probability CR.
    pub crossover_rate: f64,
    pub max_generations: usize,
    /// Early stop once the population is all feasible and its objective
    /// spread falls below this.
    pub tolerance: f64,
    pub seed: u64,
}

impl DeParams {
    /// Storn–Price style defaults for a problem of the given dimension.
    pub fn for_dimension(dim: usize, seed: u64) -> Self {
        Self {
            population_size: (10 * dim).max(4),
            mutation_factor: 0.7,
            crossover_rate: 0.9,
            max_generations: 200,
            tolerance: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if self.population_size < 4 {
            return Err(OptimizerError::BadParams(format!(
                "population_size {} < 4",
                self.population_size
            )));
        }
        if !(self.mutation_factor > 0.0 && self.mutation_factor <= 2.0) {
            return Err(OptimizerError::BadParams(format!(
                "mutation_factor {} outside (0, 2]",
                self.mutation_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(OptimizerError::BadParams(format!(
                "crossover_rate {} outside [0, 1]",
                self.crossover_rate
            )));
        }
        if self.max_generations < 1 {
            return Err(OptimizerError::BadParams("max_generations < 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(OptimizerError::BadParams(format!(
                "tolerance {} < 0",
                self.tolerance
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeResult {
    pub best_vector: Vec<f64>,
    pub best_objective: f64,
    pub best_violation: f64,
    pub generations_used: usize,
    pub feasible: bool,
    /// Number of objective/violation evaluations.
    pub evaluations: usize,
}

/// Objective and total violation of one evaluated point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fitness {
    pub objective: f64,
    pub violation: f64,
}

impl Fitness {
    pub fn feasible(&self) -> bool {
        self.violation == 0.0
    }

    /// Feasibility-rule ordering; `Less` means `self` is better.
    pub fn compare(&self, other: &Fitness) -> Ordering {
        match (self.feasible(), other.feasible()) {
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            (true, true) => self.objective.total_cmp(&other.objective),
            (false, false) => self
                .violation
                .total_cmp(&other.violation)
                .then(self.objective.total_cmp(&other.objective)),
        }
    }
}

/// Minimizes `objective` subject to `violation == 0` inside `[lower, upper]`.
pub fn de_minimize<F, G>(
    objective: F,
    violation: G,
    lower: &[f64],
    upper: &[f64],
    params: &DeParams,
) -> Result<DeResult, OptimizerError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    de_minimize_observed(objective, violation, lower, upper, params, |_, _| {})
}

/// As [`de_minimize`], calling `observe(generation, best)` after the initial
/// population (generation 0) and after every completed generation.
pub fn de_minimize_observed<F, G, O>(
    objective: F,
    violation: G,
    lower: &[f64],
    upper: &[f64],
    params: &DeParams,
    mut observe: O,
) -> Result<DeResult, OptimizerError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
    O: FnMut(usize, Fitness),
{
    check_bounds(lower, upper)?;
    params.validate()?;
    let dim = lower.len();
    let np = params.population_size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let mut population: Vec<Vec<f64>> = (0..np)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(&lo, &hi)| (lo + rng.random::<f64>() * (hi - lo)).clamp(lo, hi))
                .collect()
        })
        .collect();
    let mut fitness = evaluate_all(&objective, &violation, &population)?;
    let mut evaluations = np;
    let mut best = best_index(&fitness);
    observe(0, fitness[best]);

    let mut generations_used = 0;
    for generation in 1..=params.max_generations {
        if converged(&fitness, params.tolerance) {
            break;
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let [a, b, c] = distinct_three(&mut rng, np, i);
                let j_rand = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        let take_mutant = j == j_rand || rng.random::<f64>() < params.crossover_rate;
                        if take_mutant {
                            let v = population[a][j]
                                + params.mutation_factor * (population[b][j] - population[c][j]);
                            v.clamp(lower[j], upper[j])
                        } else {
                            population[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fitness = evaluate_all(&objective, &violation, &trials)?;
        evaluations += np;
        for (i, (trial, tf)) in trials.into_iter().zip(trial_fitness).enumerate() {
            if tf.compare(&fitness[i]) != Ordering::Greater {
                population[i] = trial;
                fitness[i] = tf;
            }
        }
        best = best_index(&fitness);
        generations_used = generation;
        observe(generation, fitness[best]);
    }

    let f = fitness[best];
    Ok(DeResult {
        best_vector: population[best].clone(),
        best_objective: f.objective,
        best_violation: f.violation,
        generations_used,
        feasible: f.feasible(),
        evaluations,
    })
}

fn check_bounds(lower: &[f64], upper: &[f64]) -> Result<(), OptimizerError> {
    if lower.is_empty() {
        return Err(OptimizerError::BadBounds("empty bounds".into()));
    }
    if lower.len() != upper.len() {
        return Err(OptimizerError::BadBounds(format!(
            "lower has {} entries, upper {}",
            lower.len(),
            upper.len()
        )));
    }
    for (j, (&lo, &hi)) in lower.iter().zip(upper).enumerate() {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(OptimizerError::BadBounds(format!(
                "dimension {j}: [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

fn distinct_three(rng: &mut ChaCha8Rng, np: usize, exclude: usize) -> [usize; 3] {
    let mut picked = [usize::MAX; 3];
    for k in 0..3 {
        loop {
            let r = rng.random_range(0..np);
            if r != exclude && !picked[..k].contains(&r) {
                picked[k] = r;
                break;
            }
        }
    }
    picked
}

fn evaluate_one<F, G>(objective: &F, violation: &G, x: &[f64]) -> Result<Fitness, OptimizerError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let o = objective(x);
    if !o.is_finite() {
        return Err(OptimizerError::NonFiniteObjective {
            vector: x.to_vec(),
            value: o,
        });
    }
    let v = violation(x);
    if !(v >= 0.0) || !v.is_finite() {
        return Err(OptimizerError::BadViolation {
            vector: x.to_vec(),
            value: v,
        });
    }
    Ok(Fitness {
        objective: o,
        violation: v,
    })
}

#[cfg(feature = "parallel")]
fn evaluate_all<F, G>(
    objective: &F,
    violation: &G,
    points: &[Vec<f64>],
) -> Result<Vec<Fitness>, OptimizerError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    points
        .par_iter()
        .map(|x| evaluate_one(objective, violation, x))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_all<F, G>(
    objective: &F,
    violation: &G,
    points: &[Vec<f64>],
) -> Result<Vec<Fitness>, OptimizerError>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    points
        .iter()
        .map(|x| evaluate_one(objective, violation, x))
        .collect()
}

fn best_index(fitness: &[Fitness]) -> usize {
    // First index wins ties, keeping the result independent of scheduling.
    let mut best = 0;
    for (i, f) in fitness.iter().enumerate().skip(1) {
        if f.compare(&fitness[best]) == Ordering::Less {
            best = i;
        }
    }
    best
}

fn converged(fitness: &[Fitness], tolerance: f64) -> bool {
    if !fitness.iter().all(Fitness::feasible) {
        return false;
    }
    let (lo, hi) = fitness.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| {
        (lo.min(f.objective), hi.max(f.objective))
    });
    hi - lo < tolerance
}
