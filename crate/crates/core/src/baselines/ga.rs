//! Genetic search over normalized configurations, scored on the surrogate.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::{argmax, fitness, CalibrationResult};
use crate::domain::{RomTable, N_PARAMS};
use crate::error::{Error, Result};
use crate::nn::SurrogateNet;
use crate::sampling::{derive_seed, seeded_rng, PipelineRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub n_select: usize,
    pub n_crossover: usize,
    pub n_mutation: usize,
    pub n_immigration: usize,
    pub max_generations: usize,
    pub r2_stop: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 20,
            n_select: 6,
            n_crossover: 4,
            n_mutation: 4,
            n_immigration: 6,
            max_generations: 100,
            r2_stop: 1.0,
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_select + self.n_crossover + self.n_mutation + self.n_immigration != self.population {
            return Err(Error::InvalidConfig(format!(
                "selection {} + crossover {} + mutation {} + immigration {} must equal population {}",
                self.n_select, self.n_crossover, self.n_mutation, self.n_immigration, self.population
            )));
        }
        if self.n_select == 0 || (self.n_crossover > 0 && self.n_select < 2) {
            return Err(Error::InvalidConfig("crossover needs at least two selected parents".into()));
        }
        Ok(())
    }
}

pub type Individual = [f64; N_PARAMS];

fn random_individual(rng: &mut PipelineRng) -> Individual {
    let mut out = [0.0; N_PARAMS];
    for v in &mut out {
        *v = rng.random();
    }
    out
}

/// Generation 0: `population` uniform individuals drawn from the seed.
pub fn initial_population(config: &GaConfig) -> Vec<Individual> {
    let mut rng = seeded_rng(derive_seed(config.seed, 0));
    (0..config.population).map(|_| random_individual(&mut rng)).collect()
}

/// Breeds the next population from `elites`, best first.
///
/// Elites survive unchanged, followed by uniform-crossover children of
/// distinct elite pairs, single-gene mutants and fresh immigrants.
pub fn next_generation(elites: &[Individual], config: &GaConfig, rng: &mut PipelineRng) -> Vec<Individual> {
    let mut next = Vec::with_capacity(config.population);
    next.extend_from_slice(elites);
    for _ in 0..config.n_crossover {
        let a = rng.random_range(0..elites.len());
        let mut b = rng.random_range(0..elites.len() - 1);
        if b >= a {
            b += 1;
        }
        let mut child = elites[a];
        for (j, gene) in child.iter_mut().enumerate() {
            if rng.random::<bool>() {
                *gene = elites[b][j];
            }
        }
        next.push(child);
    }
    for _ in 0..config.n_mutation {
        let mut child = elites[rng.random_range(0..elites.len())];
        child[rng.random_range(0..N_PARAMS)] = rng.random();
        next.push(child);
    }
    for _ in 0..config.n_immigration {
        next.push(random_individual(rng));
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutcome {
    pub best: Individual,
    /// Generations bred after the initial population.
    pub generations_run: usize,
    /// Best (mean R², -MAE) of each evaluated generation.
    pub best_history: Vec<(f64, f64)>,
    pub final_population: Vec<Individual>,
}

/// Runs the search until the best mean R² reaches `r2_stop` or
/// `max_generations` generations have been bred.
pub fn ga_search(net: &SurrogateNet, targets: &RomTable, config: &GaConfig) -> Result<GaOutcome> {
    config.validate()?;
    let mut rng = seeded_rng(derive_seed(config.seed, 1));
    let mut population = initial_population(config);
    let mut history = Vec::new();
    let mut generation = 0;
    loop {
        let tables = net.predict_raw(&population, targets.grid());
        let scores = tables.iter().map(|t| fitness(targets, t)).collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..population.len()).collect();
        // Stable sort keeps the lower index first among equal scores.
        order.sort_by(|&i, &j| {
            let (a, b) = (scores[i], scores[j]);
            b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1))
        });
        let best = order[0];
        debug_assert_eq!(best, argmax(&scores));
        history.push(scores[best]);
        if scores[best].0 >= config.r2_stop || generation >= config.max_generations {
            return Ok(GaOutcome {
                best: population[best],
                generations_run: generation,
                best_history: history,
                final_population: population,
            });
        }
        let elites: Vec<Individual> = order[..config.n_select].iter().map(|&i| population[i]).collect();
        population = next_generation(&elites, config, &mut rng);
        generation += 1;
    }
}

pub fn ga_calibrate(net: &SurrogateNet, targets: &RomTable, config: &GaConfig) -> Result<CalibrationResult> {
    let start = Instant::now();
    let outcome = ga_search(net, targets, config)?;
    let mut result = CalibrationResult::evaluate("ga", net, outcome.best, targets)?;
    result.restarts_run = 1;
    result.generations_run = Some(outcome.generations_run);
    result.wall_time_secs = start.elapsed().as_secs_f64();
    log::debug!(
        "ga: {} generations, R2 {:.4}, MAE {:.4} deg",
        outcome.generations_run,
        result.r2_mean,
        result.mae_deg
    );
    Ok(result)
}
