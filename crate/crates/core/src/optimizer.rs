//! Search for the `(t, μ)` that maximizes the conference key rate.
//!
//! [`optimize`] runs a real-coded genetic algorithm; [`grid_oracle`] is an
//! exhaustive grid scan used to check it. Both maximize the *unclamped* rate
//! so that the search still has a slope to follow beyond the cutoff distance,
//! and both are deterministic for a fixed configuration regardless of how
//! many rayon workers are available.
//!
//! Each GA offspring draws from its own ChaCha stream, addressed by
//! `(generation, index)`, so evaluation order never touches the random state.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::keyrate::{conference_key_rate, eta_lim_bound, repeaterless_bound};
use crate::model::{ExperimentParams, FreeParams, ModelError, RateBreakdown};

const TOURNAMENT_SIZE: usize = 2;
const MUTATION_RATE: f64 = 0.35;
const INITIAL_MUTATION_SCALE: f64 = 0.15;
const FINAL_MUTATION_SCALE: f64 = 5e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizerError {
    #[error("invalid optimizer config: {0}")]
    Config(String),
    #[error("distances must be non-empty and strictly increasing")]
    Distances,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// Closed search interval for `t`, strictly inside (0, 1).
    pub t_range: (f64, f64),
    /// Closed search interval for `μ`, lower end strictly positive.
    pub mu_range: (f64, f64),
    pub population: usize,
    pub generations: usize,
    pub seed: u64,
    /// Points per axis of the grid oracle.
    pub grid_resolution: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            t_range: (1e-3, 0.999),
            mu_range: (1e-3, 1.0),
            population: 40,
            generations: 160,
            seed: 20_210_521,
            grid_resolution: 200,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let (tl, th) = self.t_range;
        if !(tl > 0.0 && th < 1.0 && tl <= th) {
            return Err(OptimizerError::Config(format!(
                "t_range ({tl}, {th}) must satisfy 0 < lo <= hi < 1"
            )));
        }
        let (ml, mh) = self.mu_range;
        if !(ml > 0.0 && ml <= mh && mh.is_finite()) {
            return Err(OptimizerError::Config(format!(
                "mu_range ({ml}, {mh}) must satisfy 0 < lo <= hi < inf"
            )));
        }
        if self.population < 2 {
            return Err(OptimizerError::Config("population must be >= 2".into()));
        }
        if self.generations < 1 {
            return Err(OptimizerError::Config("generations must be >= 1".into()));
        }
        if self.grid_resolution < 2 {
            return Err(OptimizerError::Config(
                "grid_resolution must be >= 2".into(),
            ));
        }
        Ok(())
    }
}

/// Best point found by a search over an arbitrary objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub params: FreeParams,
    pub fitness: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimumStatus {
    Positive,
    /// No evaluated candidate had a positive rate; the parameters are the
    /// least-negative point found.
    ZeroRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub params: FreeParams,
    pub breakdown: RateBreakdown,
    pub status: OptimumStatus,
    pub evaluations: usize,
}

impl Optimum {
    fn from_candidate(c: Candidate, ep: &ExperimentParams) -> Self {
        let breakdown = conference_key_rate(&c.params, ep);
        let status = if breakdown.rate > 0.0 {
            OptimumStatus::Positive
        } else {
            OptimumStatus::ZeroRate
        };
        Self {
            params: c.params,
            breakdown,
            status,
            evaluations: c.evaluations,
        }
    }
}

fn key(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

fn rate_objective(ep: &ExperimentParams) -> impl Fn(FreeParams) -> f64 + Sync + '_ {
    move |fp| conference_key_rate(&fp, ep).rate_unclamped
}

/// GA-optimized rate at the distance stored in `ep`.
pub fn optimize(ep: &ExperimentParams, cfg: &OptimizerConfig) -> Result<Optimum, OptimizerError> {
    let best = genetic_search(cfg, rate_objective(ep))?;
    Ok(Optimum::from_candidate(best, ep))
}

/// Exhaustive grid argmax at the distance stored in `ep`.
pub fn grid_oracle(
    ep: &ExperimentParams,
    cfg: &OptimizerConfig,
) -> Result<Optimum, OptimizerError> {
    let best = grid_search(cfg, rate_objective(ep))?;
    Ok(Optimum::from_candidate(best, ep))
}

fn axis(range: (f64, f64), n: usize, i: usize) -> f64 {
    if i + 1 == n {
        return range.1;
    }
    range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
}

/// Evaluates `objective` on every cell of a `grid_resolution²` grid (end
/// points included). Ties go to the smaller `t`, then the smaller `μ`.
pub fn grid_search<F>(cfg: &OptimizerConfig, objective: F) -> Result<Candidate, OptimizerError>
where
    F: Fn(FreeParams) -> f64 + Sync,
{
    cfg.validate()?;
    let n = cfg.grid_resolution;
    let values: Vec<(FreeParams, f64)> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let t = axis(cfg.t_range, n, cell / n);
            let mu = axis(cfg.mu_range, n, cell % n);
            let fp = FreeParams::new(t, mu).expect("grid inside validated ranges");
            (fp, key(objective(fp)))
        })
        .collect();
    // Row-major order is (t asc, μ asc); strict `>` keeps the first maximum.
    let mut best = values[0];
    for &(fp, v) in &values[1..] {
        if v > best.1 {
            best = (fp, v);
        }
    }
    Ok(Candidate {
        params: best.0,
        fitness: best.1,
        evaluations: values.len(),
    })
}

#[derive(Debug, Clone, Copy)]
struct Individual {
    genes: [f64; 2],
    fitness: f64,
}

fn stream(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | index as u64);
    rng
}

fn tournament<'a>(pop: &'a [Individual], rng: &mut ChaCha8Rng) -> &'a Individual {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..TOURNAMENT_SIZE {
        let other = &pop[rng.random_range(0..pop.len())];
        if other.fitness > best.fitness {
            best = other;
        }
    }
    best
}

/// Real-coded genetic algorithm over `(t, μ)`.
///
/// Tournament selection (size 2), blend crossover with a fresh mixing
/// factor per gene, Gaussian mutation whose scale decays geometrically from
/// 15 % to 0.05 % of each range, and a single elite carried over unchanged.
pub fn genetic_search<F>(cfg: &OptimizerConfig, objective: F) -> Result<Candidate, OptimizerError>
where
    F: Fn(FreeParams) -> f64 + Sync,
{
    cfg.validate()?;
    let ranges = [cfg.t_range, cfg.mu_range];
    let evaluate = |genes: [f64; 2]| {
        let fp = FreeParams::new(genes[0], genes[1]).expect("genes clamped into ranges");
        key(objective(fp))
    };

    let mut population: Vec<Individual> = (0..cfg.population)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(cfg.seed, 0, i);
            let genes = ranges.map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>());
            Individual {
                genes,
                fitness: evaluate(genes),
            }
        })
        .collect();
    let mut evaluations = cfg.population;

    let decay = if cfg.generations > 1 {
        (FINAL_MUTATION_SCALE / INITIAL_MUTATION_SCALE).powf(1.0 / (cfg.generations - 1) as f64)
    } else {
        1.0
    };

    for generation in 1..cfg.generations {
        let scale = INITIAL_MUTATION_SCALE * decay.powi(generation as i32);
        let elite = *fittest(&population);
        let parents = &population;
        let next: Vec<Individual> = (0..cfg.population)
            .into_par_iter()
            .map(|i| {
                if i == 0 {
                    return elite;
                }
                let mut rng = stream(cfg.seed, generation, i);
                let a = tournament(parents, &mut rng);
                let b = tournament(parents, &mut rng);
                let mut genes = [0.0; 2];
                for (g, gene) in genes.iter_mut().enumerate() {
                    let (lo, hi) = ranges[g];
                    let w: f64 = rng.random();
                    let mut x = w * a.genes[g] + (1.0 - w) * b.genes[g];
                    if rng.random::<f64>() < MUTATION_RATE {
                        let noise = Normal::new(0.0, scale * (hi - lo)).expect("positive scale");
                        x += noise.sample(&mut rng);
                    }
                    *gene = x.clamp(lo, hi);
                }
                Individual {
                    genes,
                    fitness: evaluate(genes),
                }
            })
            .collect();
        evaluations += cfg.population - 1;
        population = next;
    }

    let best = fittest(&population);
    Ok(Candidate {
        params: FreeParams::new(best.genes[0], best.genes[1])?,
        fitness: best.fitness,
        evaluations,
    })
}

// First maximum by index, so the result does not depend on reduction order.
fn fittest(pop: &[Individual]) -> &Individual {
    let mut best = &pop[0];
    for ind in &pop[1..] {
        if ind.fitness > best.fitness {
            best = ind;
        }
    }
    best
}

/// One distance point of a rate-versus-distance sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub distance_km: f64,
    pub best_t: f64,
    pub best_mu: f64,
    pub rate: f64,
    pub rate_unclamped: f64,
    pub eta_lim: f64,
    pub repeaterless: f64,
}

/// Re-optimizes `(t, μ)` independently at every distance.
pub fn sweep(
    template: &ExperimentParams,
    distances: &[f64],
    cfg: &OptimizerConfig,
) -> Result<Vec<SweepRow>, OptimizerError> {
    cfg.validate()?;
    if distances.is_empty()
        || distances
            .windows(2)
            .any(|w| w[1].partial_cmp(&w[0]) != Some(Ordering::Greater))
    {
        return Err(OptimizerError::Distances);
    }
    let params = distances
        .iter()
        .map(|&d| template.with_distance(d))
        .collect::<Result<Vec<_>, _>>()?;
    params
        .par_iter()
        .map(|ep| {
            let best = optimize(ep, cfg)?;
            Ok(SweepRow {
                distance_km: ep.total_distance_km(),
                best_t: best.params.send_probability(),
                best_mu: best.params.intensity(),
                rate: best.breakdown.rate,
                rate_unclamped: best.breakdown.rate_unclamped,
                eta_lim: eta_lim_bound(ep),
                repeaterless: repeaterless_bound(ep),
            })
        })
        .collect()
}
