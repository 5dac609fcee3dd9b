//! Gradient-free population optimizers over backbone genomes.
//!
//! Three algorithms share one generational loop: a genetic algorithm on the
//! scalarized objective sum, a firefly variant that pulls genomes toward
//! brighter partners, and NSGA-2 with (μ+λ) environmental selection. Every
//! source of randomness is drawn from the state's [`GenomeRng`], and each
//! candidate is evaluated under a seed derived from its id, so a run is a
//! pure function of its configuration and can resume from a serialized
//! [`EvolutionState`].

mod pareto;
mod select;

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::genome::{
    self, crossover, is_valid, mutate_with, repair, seed_population, BackboneGenome, GenomeError,
    MutationMode, OptionPool,
};
use crate::rng::{derive_seed, GenomeRng};

pub use pareto::{
    crowding_distance, dominates, front_ranks, hypervolume, non_dominated_sort, rank_and_crowding,
};
pub use select::{fa_attraction, fa_intensity, normalize, scalarize, tournament_select};

const SELECTION_STREAM: u64 = 0x5e1e;

/// Objective values of one candidate, all minimized.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector {
    pub objectives: Vec<f64>,
    pub diverged: bool,
}

impl ScoreVector {
    pub fn new(objectives: Vec<f64>) -> Self {
        let diverged = objectives.iter().any(|v| !v.is_finite());
        Self { objectives, diverged }
    }

    /// The worst possible score of the given arity.
    pub fn sentinel(arity: usize) -> Self {
        Self { objectives: vec![f64::INFINITY; arity], diverged: true }
    }

    pub fn arity(&self) -> usize {
        self.objectives.len()
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreRepr {
    objectives: Vec<Option<f64>>,
    diverged: bool,
}

impl Serialize for ScoreVector {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScoreRepr {
            objectives: self
                .objectives
                .iter()
                .map(|v| v.is_finite().then_some(*v))
                .collect(),
            diverged: self.diverged,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ScoreRepr::deserialize(d)?;
        Ok(Self {
            objectives: r.objectives.into_iter().map(|v| v.unwrap_or(f64::INFINITY)).collect(),
            diverged: r.diverged,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ga,
    Fa,
    #[default]
    Nsga2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub algorithm: Algorithm,
    pub population: usize,
    pub generations: usize,
    pub tournament: usize,
    pub crossover_points: usize,
    pub mutation_rate: f64,
    pub mutation_mode: MutationMode,
    pub elites: usize,
    pub fa_beta0: f64,
    pub fa_gamma: f64,
    pub depth: usize,
    /// Fraction of the initial population seeded with striped hybrids.
    pub hybrid_fraction: f64,
    /// Whether genomes carry the sixth residual-source entry.
    pub residual: bool,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Nsga2,
            population: 16,
            generations: 18,
            tournament: 2,
            crossover_points: 2,
            mutation_rate: 0.1,
            mutation_mode: MutationMode::PerInteger,
            elites: 2,
            fa_beta0: 1.0,
            fa_gamma: 1.0,
            depth: 6,
            hybrid_fraction: 0.25,
            residual: false,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let fail = |field: &str, msg: String| Err(EvolveError::Config { field: field.into(), msg });
        if self.population < 2 {
            return fail("population", format!("must be at least 2, got {}", self.population));
        }
        if self.elites >= self.population {
            return fail(
                "elites",
                format!("must be below population {}, got {}", self.population, self.elites),
            );
        }
        if self.tournament == 0 || self.tournament > self.population {
            return fail(
                "tournament",
                format!("must lie in 1..={}, got {}", self.population, self.tournament),
            );
        }
        if self.depth == 0 {
            return fail("depth", "must be positive".into());
        }
        if self.crossover_points > 0 && self.crossover_points >= self.depth {
            return fail(
                "crossover_points",
                format!("must be below depth {}, got {}", self.depth, self.crossover_points),
            );
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail("mutation_rate", format!("must lie in [0, 1], got {}", self.mutation_rate));
        }
        if !(0.0..=1.0).contains(&self.hybrid_fraction) {
            return fail(
                "hybrid_fraction",
                format!("must lie in [0, 1], got {}", self.hybrid_fraction),
            );
        }
        if !(0.0..=1.0).contains(&self.fa_beta0) {
            return fail("fa_beta0", format!("must lie in [0, 1], got {}", self.fa_beta0));
        }
        if !(self.fa_gamma >= 0.0 && self.fa_gamma.is_finite()) {
            return fail("fa_gamma", format!("must be finite and nonnegative, got {}", self.fa_gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolveError {
    #[error("invalid evolution config field `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("seed population has {got} genomes, expected {expected}")]
    SeedCount { got: usize, expected: usize },
    #[error("seed genome {index} has depth {got}, expected {expected}")]
    SeedDepth { index: usize, got: usize, expected: usize },
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("evaluator returned {got} objectives, expected {expected}")]
    Arity { got: usize, expected: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("evaluation failed: {0}")]
pub struct EvalError(pub String);

/// Maps a genome to its objective values. Implementations must be pure in
/// `(genome, seed)` and safe to call from several threads at once.
pub trait Evaluator: Sync {
    fn arity(&self) -> usize;
    fn evaluate(&self, genome: &BackboneGenome, seed: u64) -> Result<ScoreVector, EvalError>;
}

/// Adapts a closure into an [`Evaluator`].
pub struct FnEvaluator<F> {
    arity: usize,
    f: F,
}

impl<F> FnEvaluator<F>
where
    F: Fn(&BackboneGenome, u64) -> Result<ScoreVector, EvalError> + Sync,
{
    pub fn new(arity: usize, f: F) -> Self {
        Self { arity, f }
    }
}

impl<F> Evaluator for FnEvaluator<F>
where
    F: Fn(&BackboneGenome, u64) -> Result<ScoreVector, EvalError> + Sync,
{
    fn arity(&self) -> usize {
        self.arity
    }

    fn evaluate(&self, genome: &BackboneGenome, seed: u64) -> Result<ScoreVector, EvalError> {
        (self.f)(genome, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Crossover,
    Firefly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: u64,
    pub genome: BackboneGenome,
    pub score: ScoreVector,
    /// Generation in which the candidate was created and evaluated.
    pub generation: usize,
    pub origin: Origin,
    pub parents: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub candidate: Candidate,
    pub rank: usize,
    /// Infinite for front boundaries; serialized as `null`.
    #[serde(with = "infinite_as_null")]
    pub crowding: f64,
}

/// Outcome of one generation: the population after selection and any
/// candidates evaluated in this generation but not retained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub population: Vec<Member>,
    pub discarded: Vec<Candidate>,
}

impl GenerationRecord {
    /// Every candidate evaluated during this generation, in id order.
    pub fn evaluated(&self) -> Vec<&Candidate> {
        let mut out: Vec<&Candidate> = self
            .population
            .iter()
            .map(|m| &m.candidate)
            .chain(&self.discarded)
            .filter(|c| c.generation == self.generation)
            .collect();
        out.sort_by_key(|c| c.id);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionState {
    pub config: EvolutionConfig,
    pub arity: usize,
    pub generation: usize,
    pub population: Vec<Candidate>,
    pub history: Vec<GenerationRecord>,
    pub rng: GenomeRng,
    pub next_id: u64,
}

impl EvolutionState {
    pub fn is_finished(&self) -> bool {
        self.generation >= self.config.generations
    }

    pub fn scores(&self) -> Vec<ScoreVector> {
        self.population.iter().map(|c| c.score.clone()).collect()
    }

    /// Best value of each objective over the current population.
    pub fn best_per_objective(&self) -> Vec<f64> {
        (0..self.arity)
            .map(|k| {
                self.population
                    .iter()
                    .map(|c| c.score.objectives[k])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }
}

fn evaluate_all(
    genomes: Vec<(BackboneGenome, Origin, Vec<u64>)>,
    first_id: u64,
    generation: usize,
    seed: u64,
    evaluator: &dyn Evaluator,
) -> Result<Vec<Candidate>, EvolveError> {
    let arity = evaluator.arity();
    genomes
        .into_par_iter()
        .enumerate()
        .map(|(k, (genome, origin, parents))| {
            let id = first_id + k as u64;
            let score = match evaluator.evaluate(&genome, derive_seed(seed, id)) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("candidate {id}: {e}; scored as diverged");
                    ScoreVector::sentinel(arity)
                }
            };
            if score.arity() != arity {
                return Err(EvolveError::Arity { got: score.arity(), expected: arity });
            }
            Ok(Candidate { id, genome, score, generation, origin, parents })
        })
        .collect()
}

fn members(pop: &[Candidate]) -> Vec<Member> {
    let scores: Vec<ScoreVector> = pop.iter().map(|c| c.score.clone()).collect();
    let (ranks, crowd) = rank_and_crowding(&scores);
    pop.iter()
        .zip(ranks.into_iter().zip(crowd))
        .map(|(c, (rank, crowding))| Member { candidate: c.clone(), rank, crowding })
        .collect()
}

/// Indices ordered best first under `cmp`, with ties in random order.
fn ordered(n: usize, rng: &mut GenomeRng, cmp: impl Fn(usize, usize) -> Ordering) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.sort_by(|&a, &b| cmp(a, b));
    idx
}

fn crowded_cmp<'a>(ranks: &'a [usize], crowd: &'a [f64]) -> impl Fn(usize, usize) -> Ordering + 'a {
    move |a, b| {
        ranks[a]
            .cmp(&ranks[b])
            .then_with(|| crowd[b].partial_cmp(&crowd[a]).unwrap_or(Ordering::Equal))
    }
}

fn scalar_cmp(s: &[f64]) -> impl Fn(usize, usize) -> Ordering + '_ {
    move |a, b| s[a].partial_cmp(&s[b]).unwrap_or(Ordering::Equal)
}

fn population_scalar(pop: &[Candidate]) -> Vec<f64> {
    let objs: Vec<Vec<f64>> = pop.iter().map(|c| c.score.objectives.clone()).collect();
    let div: Vec<bool> = pop.iter().map(|c| c.score.diverged).collect();
    scalarize(&objs, &div)
}

/// Scores the initial population. With `seeds = None` the population is
/// drawn by [`seed_population`]; supplied seeds are repaired if invalid.
pub fn initialize(
    config: &EvolutionConfig,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
    seeds: Option<Vec<BackboneGenome>>,
) -> Result<EvolutionState, EvolveError> {
    config.validate()?;
    let mut rng = GenomeRng::new(config.seed, SELECTION_STREAM);
    let genomes = match seeds {
        None => seed_population(
            config.population,
            config.depth,
            pool,
            config.hybrid_fraction,
            config.residual,
            &mut rng,
        ),
        Some(seeds) => {
            if seeds.len() != config.population {
                return Err(EvolveError::SeedCount {
                    got: seeds.len(),
                    expected: config.population,
                });
            }
            let mut out = Vec::with_capacity(seeds.len());
            for (index, g) in seeds.into_iter().enumerate() {
                if g.depth() != config.depth {
                    return Err(EvolveError::SeedDepth {
                        index,
                        got: g.depth(),
                        expected: config.depth,
                    });
                }
                out.push(if is_valid(&g, pool) { g } else { repair(&g, pool, &mut rng) });
            }
            out
        }
    };
    let n = genomes.len() as u64;
    let tagged = genomes.into_iter().map(|g| (g, Origin::Seed, Vec::new())).collect();
    let population = evaluate_all(tagged, 0, 0, config.seed, evaluator)?;
    let record =
        GenerationRecord { generation: 0, population: members(&population), discarded: Vec::new() };
    Ok(EvolutionState {
        config: config.clone(),
        arity: evaluator.arity(),
        generation: 0,
        population,
        history: vec![record],
        rng,
        next_id: n,
    })
}

/// Advances one generation with the configured algorithm.
pub fn step(
    state: &mut EvolutionState,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
) -> Result<(), EvolveError> {
    match state.config.algorithm {
        Algorithm::Ga => step_ga(state, pool, evaluator),
        Algorithm::Fa => step_fa(state, pool, evaluator),
        Algorithm::Nsga2 => step_nsga2(state, pool, evaluator),
    }
}

/// Steps until the configured generation count is reached.
pub fn resume(
    state: &mut EvolutionState,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
) -> Result<(), EvolveError> {
    while !state.is_finished() {
        step(state, pool, evaluator)?;
    }
    Ok(())
}

pub fn run(
    config: &EvolutionConfig,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
    seeds: Option<Vec<BackboneGenome>>,
) -> Result<EvolutionState, EvolveError> {
    let mut state = initialize(config, pool, evaluator, seeds)?;
    resume(&mut state, pool, evaluator)?;
    Ok(state)
}

/// Tournament pairing, k-point crossover and mutation until `count`
/// children exist.
fn breed(
    state: &mut EvolutionState,
    pool: &OptionPool,
    count: usize,
    better: &dyn Fn(usize, usize) -> bool,
) -> Result<Vec<(BackboneGenome, Origin, Vec<u64>)>, EvolveError> {
    let cfg = state.config.clone();
    let n = state.population.len();
    let mut children = Vec::with_capacity(count);
    while children.len() < count {
        let a = tournament_select(n, cfg.tournament, &mut state.rng, better);
        let b = tournament_select(n, cfg.tournament, &mut state.rng, better);
        let (pa, pb) = (&state.population[a], &state.population[b]);
        let parents = vec![pa.id, pb.id];
        let (c1, c2) =
            crossover(&pa.genome, &pb.genome, cfg.crossover_points, pool, &mut state.rng)?;
        for child in [c1, c2] {
            if children.len() == count {
                break;
            }
            let child =
                mutate_with(&child, cfg.mutation_rate, cfg.mutation_mode, pool, &mut state.rng);
            children.push((child, Origin::Crossover, parents.clone()));
        }
    }
    Ok(children)
}

fn finish_generation(
    state: &mut EvolutionState,
    population: Vec<Candidate>,
    discarded: Vec<Candidate>,
) {
    state.generation += 1;
    state.history.push(GenerationRecord {
        generation: state.generation,
        population: members(&population),
        discarded,
    });
    state.population = population;
}

fn evaluate_children(
    state: &mut EvolutionState,
    children: Vec<(BackboneGenome, Origin, Vec<u64>)>,
    evaluator: &dyn Evaluator,
) -> Result<Vec<Candidate>, EvolveError> {
    let first = state.next_id;
    state.next_id += children.len() as u64;
    evaluate_all(children, first, state.generation + 1, state.config.seed, evaluator)
}

/// Generational GA on the scalarized sum of normalized objectives.
pub fn step_ga(
    state: &mut EvolutionState,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
) -> Result<(), EvolveError> {
    let s = population_scalar(&state.population);
    let n = state.population.len();
    let order = ordered(n, &mut state.rng, scalar_cmp(&s));
    let elites: Vec<Candidate> =
        order[..state.config.elites].iter().map(|&i| state.population[i].clone()).collect();
    let better = |a: usize, b: usize| s[a] < s[b];
    let children = breed(state, pool, n - elites.len(), &better)?;
    let offspring = evaluate_children(state, children, evaluator)?;
    let mut next = elites;
    next.extend(offspring);
    finish_generation(state, next, Vec::new());
    Ok(())
}

/// Fraction of positions whose LIV classes agree.
pub fn class_similarity(a: &BackboneGenome, b: &BackboneGenome) -> f64 {
    let n = a.depth().max(b.depth());
    if n == 0 {
        return 1.0;
    }
    let same = a.genes().iter().zip(b.genes()).filter(|(x, y)| x.liv_class == y.liv_class).count();
    same as f64 / n as f64
}

/// Replaces each gene of `gi` by the corresponding gene of `gj` with
/// probability `beta`. With `beta == 0` no randomness is consumed and `gi`
/// is returned as is; the result is not repaired.
pub fn fa_move(
    gi: &BackboneGenome,
    gj: &BackboneGenome,
    beta: f64,
    rng: &mut GenomeRng,
) -> BackboneGenome {
    let mut out = gi.clone();
    if beta <= 0.0 {
        return out;
    }
    let beta = beta.min(1.0);
    for (g, src) in out.genes_mut().iter_mut().zip(gj.genes()) {
        if rng.random_bool(beta) {
            *g = src.clone();
        }
    }
    out
}

/// Firefly step: every non-elite genome picks a partner by tournament,
/// moves toward it if the partner is brighter, and is then mutated.
pub fn step_fa(
    state: &mut EvolutionState,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
) -> Result<(), EvolveError> {
    let cfg = state.config.clone();
    let s = population_scalar(&state.population);
    let light: Vec<f64> = s.iter().map(|&v| fa_intensity(v)).collect();
    let n = state.population.len();
    let order = ordered(n, &mut state.rng, scalar_cmp(&s));
    let (elite_idx, rest) = order.split_at(cfg.elites);
    let elites: Vec<Candidate> = elite_idx.iter().map(|&i| state.population[i].clone()).collect();
    let mut rest = rest.to_vec();
    rest.sort_unstable();
    let better = |a: usize, b: usize| s[a] < s[b];
    let mut children = Vec::with_capacity(rest.len());
    for i in rest {
        let j = tournament_select(n, cfg.tournament, &mut state.rng, &better);
        let (ci, cj) = (&state.population[i], &state.population[j]);
        let r = class_similarity(&ci.genome, &cj.genome);
        let beta = fa_attraction(light[i], light[j], r, cfg.fa_beta0, cfg.fa_gamma);
        let moved = fa_move(&ci.genome, &cj.genome, beta, &mut state.rng);
        let moved = repair(&moved, pool, &mut state.rng);
        let child = mutate_with(&moved, cfg.mutation_rate, cfg.mutation_mode, pool, &mut state.rng);
        children.push((child, Origin::Firefly, vec![ci.id, cj.id]));
    }
    let offspring = evaluate_children(state, children, evaluator)?;
    let mut next = elites;
    next.extend(offspring);
    finish_generation(state, next, Vec::new());
    Ok(())
}

/// NSGA-2 step: elites by crowded comparison, offspring by tournament on
/// (front, crowding), then the best of parents and offspring by the same
/// order fill the remaining slots.
pub fn step_nsga2(
    state: &mut EvolutionState,
    pool: &OptionPool,
    evaluator: &dyn Evaluator,
) -> Result<(), EvolveError> {
    let cfg = state.config.clone();
    let n = state.population.len();
    let (ranks, crowd) = rank_and_crowding(&state.scores());
    let order = ordered(n, &mut state.rng, crowded_cmp(&ranks, &crowd));
    let elite_idx: Vec<usize> = order[..cfg.elites].to_vec();
    let better = |a: usize, b: usize| crowded_cmp(&ranks, &crowd)(a, b) == Ordering::Less;
    let children = breed(state, pool, n - cfg.elites, &better)?;
    let offspring = evaluate_children(state, children, evaluator)?;

    let mut combined: Vec<Candidate> = state.population.clone();
    combined.extend(offspring);
    let scores: Vec<ScoreVector> = combined.iter().map(|c| c.score.clone()).collect();
    let (r2, c2) = rank_and_crowding(&scores);
    let mut pool_order = ordered(combined.len(), &mut state.rng, crowded_cmp(&r2, &c2));
    pool_order.retain(|i| !elite_idx.contains(i));
    let mut keep: Vec<usize> = elite_idx;
    keep.extend(pool_order.iter().take(n - cfg.elites));
    let discarded: Vec<Candidate> = pool_order[n - cfg.elites..]
        .iter()
        .filter(|&&i| i >= n)
        .map(|&i| combined[i].clone())
        .collect();
    let next: Vec<Candidate> = keep.into_iter().map(|i| combined[i].clone()).collect();
    finish_generation(state, next, discarded);
    Ok(())
}

/// Genomes of the current population in canonical text form.
pub fn population_text(state: &EvolutionState) -> Vec<String> {
    state.population.iter().map(|c| genome::format(&c.genome)).collect()
}

#[cfg(test)]
mod tests;
