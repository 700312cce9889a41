//! Antithetic evolution strategies over the flat genome.
//!
//! Each generation draws `n_offspring / 2` Gaussian directions `ε`, builds
//! the children `w + σε` and `w − σε`, ranks their rewards, converts ranks
//! to shaped returns and moves the parent along the return-weighted sum of
//! signed directions:
//!
//! ```text
//! w' = w + lr / (σ · N_c) · Σ_c sign_c · R_c · ε_pair(c)
//! ```
//!
//! Shaped returns use the first-occurrence rank `ind` of each reward in the
//! descending list:
//!
//! ```text
//! R_c ∝ max(0, log2(N_c/2 − 1) − log2(max(1, ind_c − 1)))
//! ```
//!
//! `max(1, ·)` removes the `log2(0)` at the top rank, so ranks 1 and 2 share
//! the largest utility. Ranks `N_c/2` and below get exactly zero.

use std::borrow::Cow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::executor::{map_children, EvalJob};
use crate::model::Genome;
use crate::rng::{pair_seed, Gaussian};

pub const MIN_OFFSPRING: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsConfig {
    pub n_offspring: usize,
    pub sigma: f64,
    pub lr: f64,
    pub master_seed: u64,
    pub max_generations: u64,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            n_offspring: 40,
            sigma: 0.1,
            lr: 0.1,
            master_seed: 0,
            max_generations: 2000,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| {
            Err(Error::InvalidConfig {
                field: field.into(),
                reason,
            })
        };
        if self.n_offspring % 2 != 0 {
            return bad("n_offspring", format!("must be even, got {}", self.n_offspring));
        }
        if self.n_offspring < MIN_OFFSPRING {
            return bad(
                "n_offspring",
                format!("must be >= {MIN_OFFSPRING} (smaller populations never update), got {}", self.n_offspring),
            );
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad("sigma", format!("must be positive and finite, got {}", self.sigma));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be positive and finite, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Directions {
    Seeded(Vec<u64>),
    Explicit(Vec<Vec<f32>>),
}

/// One generation's perturbation directions. Child `k` uses pair `k / 2`
/// with sign `+1` for even `k` and `−1` for odd `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    generation: u64,
    sigma: f64,
    dim: usize,
    directions: Directions,
}

impl PerturbationSet {
    /// Directions given verbatim, one vector per pair.
    pub fn from_epsilons(epsilons: Vec<Vec<f32>>, sigma: f64, generation: u64) -> Result<Self> {
        let dim = epsilons.first().map_or(0, Vec::len);
        if let Some(bad) = epsilons.iter().find(|e| e.len() != dim) {
            return Err(Error::GenomeLength {
                expected: dim,
                found: bad.len(),
            });
        }
        Ok(PerturbationSet {
            generation,
            sigma,
            dim,
            directions: Directions::Explicit(epsilons),
        })
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_pairs(&self) -> usize {
        match &self.directions {
            Directions::Seeded(s) => s.len(),
            Directions::Explicit(e) => e.len(),
        }
    }

    pub fn n_children(&self) -> usize {
        2 * self.n_pairs()
    }

    /// Per-pair stream seeds, when the directions are generated.
    pub fn seeds(&self) -> Option<&[u64]> {
        match &self.directions {
            Directions::Seeded(s) => Some(s),
            Directions::Explicit(_) => None,
        }
    }

    pub fn sign(child: usize) -> i8 {
        if child % 2 == 0 {
            1
        } else {
            -1
        }
    }

    /// Direction of `pair`, regenerated from its seed when needed.
    pub fn epsilon(&self, pair: usize) -> Cow<'_, [f32]> {
        match &self.directions {
            Directions::Explicit(e) => Cow::Borrowed(&e[pair]),
            Directions::Seeded(seeds) => {
                let mut buf = vec![0.0; self.dim];
                Gaussian::new(seeds[pair]).fill_f32(&mut buf);
                Cow::Owned(buf)
            }
        }
    }

    /// All directions, materialized.
    pub fn epsilons(&self) -> Vec<Vec<f32>> {
        (0..self.n_pairs()).map(|p| self.epsilon(p).into_owned()).collect()
    }

    fn epsilon_into<'a>(&'a self, pair: usize, buf: &'a mut Vec<f32>) -> &'a [f32] {
        match &self.directions {
            Directions::Explicit(e) => &e[pair],
            Directions::Seeded(seeds) => {
                buf.resize(self.dim, 0.0);
                Gaussian::new(seeds[pair]).fill_f32(buf);
                buf
            }
        }
    }

    /// Weights of child `k`: `parent ± σ·ε`.
    pub fn child(&self, parent: &Genome, k: usize) -> Result<Genome> {
        self.child_with_buffer(parent, k, &mut Vec::new())
    }

    pub(crate) fn child_with_buffer(&self, parent: &Genome, k: usize, scratch: &mut Vec<f32>) -> Result<Genome> {
        if parent.len() != self.dim {
            return Err(Error::GenomeLength {
                expected: self.dim,
                found: parent.len(),
            });
        }
        if k >= self.n_children() {
            return Err(Error::InvalidConfig {
                field: "child".into(),
                reason: format!("index {k} out of range for {} children", self.n_children()),
            });
        }
        if self.sigma == 0.0 {
            return Ok(parent.clone());
        }
        let scale = (Self::sign(k) as f64 * self.sigma) as f32;
        let eps = self.epsilon_into(k / 2, scratch);
        let values = parent.values().iter().zip(eps).map(|(&w, &e)| w + scale * e).collect();
        parent.with_values(values)
    }
}

/// Directions for `generation`, reproducible from `(master_seed, generation)`.
pub fn generate_perturbations(parent: &Genome, config: &EsConfig, generation: u64) -> PerturbationSet {
    let seeds = (0..config.n_offspring / 2)
        .map(|pair| pair_seed(config.master_seed, generation, pair as u64))
        .collect();
    PerturbationSet {
        generation,
        sigma: config.sigma,
        dim: parent.len(),
        directions: Directions::Seeded(seeds),
    }
}

/// Rank-derived, normalized child weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedReturns {
    values: Vec<f64>,
}

impl ShapedReturns {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    /// Bitwise equality.
    pub fn bit_eq(&self, other: &ShapedReturns) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// 1-based position of the first occurrence of each reward in the
/// descending-sorted reward list.
pub fn first_occurrence_ranks(rewards: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = rewards.iter().position(|r| r.is_nan()) {
        return Err(Error::NonFiniteReward(i));
    }
    Ok(rewards
        .iter()
        .map(|&r| 1 + rewards.iter().filter(|&&other| other > r).count())
        .collect())
}

/// Utility of a child at 1-based rank `ind` among `n` children.
pub fn rank_utility(ind: usize, n: usize) -> f64 {
    let half = n as f64 / 2.0 - 1.0;
    if half <= 0.0 {
        return 0.0;
    }
    let rank_term = (ind.saturating_sub(1).max(1)) as f64;
    (half.log2() - rank_term.log2()).max(0.0)
}

/// Shaped returns of a reward vector of any length.
pub fn shape_rewards(rewards: &[f64]) -> Result<ShapedReturns> {
    let n = rewards.len();
    let numerators: Vec<f64> = first_occurrence_ranks(rewards)?
        .into_iter()
        .map(|ind| rank_utility(ind, n))
        .collect();
    let total: f64 = numerators.iter().sum();
    let values = if total > 0.0 {
        numerators.iter().map(|&u| u / total).collect()
    } else {
        vec![0.0; n]
    };
    Ok(ShapedReturns { values })
}

/// Shaped returns for one generation; `rewards.len()` must equal `n_offspring`.
pub fn shaped_returns(rewards: &[f64], config: &EsConfig) -> Result<ShapedReturns> {
    if rewards.len() != config.n_offspring {
        return Err(Error::shape("reward vector", config.n_offspring, rewards.len()));
    }
    shape_rewards(rewards)
}

/// Moves the parent along the return-weighted antithetic directions.
/// Pairs whose two children have equal shaped returns contribute nothing;
/// when every pair cancels, the parent is returned unchanged.
pub fn parent_update(
    parent: &Genome,
    perturbations: &PerturbationSet,
    shaped: &ShapedReturns,
    config: &EsConfig,
) -> Result<Genome> {
    if perturbations.dim() != parent.len() {
        return Err(Error::GenomeLength {
            expected: parent.len(),
            found: perturbations.dim(),
        });
    }
    let n_c = perturbations.n_children();
    if shaped.values.len() != n_c {
        return Err(Error::shape("shaped returns", n_c, shaped.values.len()));
    }
    let coefficients: Vec<(usize, f64)> = shaped
        .values
        .chunks_exact(2)
        .map(|pair| pair[0] - pair[1])
        .enumerate()
        .filter(|&(_, c)| c != 0.0)
        .collect();
    if coefficients.is_empty() {
        return Ok(parent.clone());
    }

    let mut step = vec![0.0f64; parent.len()];
    for &(pair, coefficient) in &coefficients {
        for (s, &e) in step.iter_mut().zip(perturbations.epsilon(pair).iter()) {
            *s += coefficient * e as f64;
        }
    }
    let scale = config.lr / (config.sigma * n_c as f64);
    let values = parent
        .values()
        .iter()
        .zip(&step)
        .map(|(&w, &s)| (w as f64 + scale * s) as f32)
        .collect();
    parent.with_values(values)
}

/// A reward function over genomes. Implementations must be pure.
pub trait FitnessFn: Sync {
    fn reward(&self, genome: &Genome) -> Result<usize>;

    /// Highest attainable reward, if known.
    fn max_reward(&self) -> Option<usize> {
        None
    }

    /// Held-out accuracy, if a test split is attached.
    fn test_accuracy(&self, _genome: &Genome) -> Result<Option<f64>> {
        Ok(None)
    }
}

impl<F> FitnessFn for F
where
    F: Fn(&Genome) -> Result<usize> + Sync,
{
    fn reward(&self, genome: &Genome) -> Result<usize> {
        self(genome)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: u64,
    pub child_rewards: Vec<usize>,
    pub best: usize,
    pub mean: f64,
    pub worst: usize,
    pub parent_reward: usize,
    /// Maximum over children and parent; present only on generations where
    /// the test split was evaluated.
    pub test_accuracy_max: Option<f64>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationOptions {
    pub workers: usize,
    /// Evaluate the test split for every child and the parent. The split is
    /// also evaluated whenever a child reaches the maximum reward.
    pub evaluate_test: bool,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            workers: 1,
            evaluate_test: false,
        }
    }
}

/// Perturb, evaluate, shape, update.
pub fn run_generation<F: FitnessFn + ?Sized>(
    parent: &Genome,
    config: &EsConfig,
    generation: u64,
    fitness: &F,
    options: GenerationOptions,
) -> Result<(Genome, GenerationReport)> {
    let started = Instant::now();
    let perturbations = generate_perturbations(parent, config, generation);
    let child_rewards = map_children(parent, &perturbations, options.workers, None, |_, child| fitness.reward(child))?;
    let parent_reward = fitness.reward(parent)?;

    let best = *child_rewards.iter().max().expect("n_offspring > 0");
    let worst = *child_rewards.iter().min().expect("n_offspring > 0");
    let mean = child_rewards.iter().sum::<usize>() as f64 / child_rewards.len() as f64;

    let solved = fitness.max_reward().is_some_and(|m| best >= m);
    let test_accuracy_max = if options.evaluate_test || solved {
        let children = map_children(parent, &perturbations, options.workers, None, |_: EvalJob, child| {
            fitness.test_accuracy(child)
        })?;
        children
            .into_iter()
            .chain(std::iter::once(fitness.test_accuracy(parent)?))
            .flatten()
            .reduce(f64::max)
    } else {
        None
    };

    let rewards: Vec<f64> = child_rewards.iter().map(|&r| r as f64).collect();
    let shaped = shaped_returns(&rewards, config)?;
    let next = parent_update(parent, &perturbations, &shaped, config)?;

    let report = GenerationReport {
        generation,
        child_rewards,
        best,
        mean,
        worst,
        parent_reward,
        test_accuracy_max,
        wall_time_ms: started.elapsed().as_millis() as u64,
    };
    Ok((next, report))
}

/// Receives every generation's report and the parent it produced.
pub trait GenerationSink {
    fn record(&mut self, report: &GenerationReport, next_parent: &Genome) -> Result<()>;

    fn finish(&mut self, _final_parent: &Genome, _generations_done: u64) -> Result<()> {
        Ok(())
    }
}

impl<S: GenerationSink + ?Sized> GenerationSink for &mut S {
    fn record(&mut self, report: &GenerationReport, next_parent: &Genome) -> Result<()> {
        (**self).record(report, next_parent)
    }

    fn finish(&mut self, final_parent: &Genome, generations_done: u64) -> Result<()> {
        (**self).finish(final_parent, generations_done)
    }
}

/// Collects reports in memory.
#[derive(Debug, Default)]
pub struct ReportLog {
    pub reports: Vec<GenerationReport>,
}

impl GenerationSink for ReportLog {
    fn record(&mut self, report: &GenerationReport, _next_parent: &Genome) -> Result<()> {
        self.reports.push(report.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvolveOptions {
    pub workers: usize,
    /// Evaluate the test split every this many generations; 0 disables.
    pub eval_interval: u64,
    /// Stop once the best child has held the maximum reward this many
    /// consecutive generations.
    pub early_stop_patience: Option<u64>,
    /// First generation index to run (non-zero when resuming).
    pub start_generation: u64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            workers: 1,
            eval_interval: 0,
            early_stop_patience: None,
            start_generation: 0,
        }
    }
}

/// Result of a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolveOutcome {
    pub parent: Genome,
    /// Generations completed, counting those before `start_generation`.
    pub generations_done: u64,
    pub early_stopped: bool,
}

/// Runs generations `start_generation..max_generations`.
pub fn evolve<F: FitnessFn + ?Sized>(
    initial: Genome,
    config: &EsConfig,
    fitness: &F,
    options: EvolveOptions,
    sinks: &mut [&mut dyn GenerationSink],
) -> Result<EvolveOutcome> {
    config.validate()?;
    let mut parent = initial;
    let mut streak = 0;
    let mut generation = options.start_generation;
    let mut early_stopped = false;
    while generation < config.max_generations {
        let evaluate_test = options.eval_interval > 0
            && ((generation + 1) % options.eval_interval == 0 || generation + 1 == config.max_generations);
        let (next, report) = run_generation(
            &parent,
            config,
            generation,
            fitness,
            GenerationOptions {
                workers: options.workers,
                evaluate_test,
            },
        )?;
        for sink in sinks.iter_mut() {
            sink.record(&report, &next)?;
        }
        parent = next;
        generation += 1;

        if let (Some(patience), Some(max)) = (options.early_stop_patience, fitness.max_reward()) {
            streak = if report.best >= max { streak + 1 } else { 0 };
            if streak >= patience {
                early_stopped = true;
                break;
            }
        }
    }
    for sink in sinks.iter_mut() {
        sink.finish(&parent, generation)?;
    }
    Ok(EvolveOutcome {
        parent,
        generations_done: generation,
        early_stopped,
    })
}
