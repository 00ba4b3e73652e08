//! Genetic algorithm shared by both stages.
//!
//! Each generation: evaluate every member, keep the two fittest unchanged,
//! and fill the rest with offspring that are either the midpoint crossover of
//! the two elites or a copy of one of them, then mutated. Every offspring
//! draws from its own RNG stream keyed by (seed, generation, slot), so
//! parallel and sequential runs are bit-identical.

use std::collections::HashMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusIndex, NoteKey};
use crate::exec::{self, Exec};
use crate::fitness::{ga1_objective, ga2_fitness, CompositeConfig, FitnessBreakdown, RuleConfig};
use crate::listener::{ListenerNet, ModelError};
use crate::pianoroll::{chromosome_to_matrix, Chromosome, RollError};

/// Attempts at drawing a pitch that is not already sounding in the column.
const RESAMPLE_ATTEMPTS: usize = 32;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("invalid GA config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Shape(#[from] RollError),
    #[error("listener model: {0}")]
    Model(#[from] ModelError),
    #[error("evaluator failed: {0}")]
    Evaluator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ga1,
    Ga2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GAConfig {
    pub iterations: usize,
    pub population: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub channels: usize,
    pub steps: usize,
    pub seed: u64,
    pub mode: Stage,
    pub exec: Exec,
}

impl Default for GAConfig {
    fn default() -> Self {
        GAConfig {
            iterations: 3600,
            population: 15,
            crossover_rate: 0.5,
            mutation_rate: 0.1,
            channels: 2,
            steps: 64,
            seed: 0,
            mode: Stage::Ga1,
            exec: Exec::default(),
        }
    }
}

impl GAConfig {
    pub fn validate(&self) -> Result<(), EvolveError> {
        let fail = |m: &str| Err(EvolveError::InvalidConfig(m.to_string()));
        if self.population < 2 {
            return fail("population must be >= 2");
        }
        if self.iterations < 1 {
            return fail("iterations must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail("rates must lie in [0, 1]");
        }
        if self.steps < 1 {
            return fail("steps must be >= 1");
        }
        if !(1..=88).contains(&self.channels) {
            return fail("channels must be in 1..=88");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ListenerScores {
    pub expert: f64,
    pub regular: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub breakdown: Option<FitnessBreakdown>,
    pub listener: Option<ListenerScores>,
}

impl Evaluation {
    pub fn scalar(fitness: f64) -> Self {
        Evaluation {
            fitness,
            breakdown: None,
            listener: None,
        }
    }
}

pub trait Evaluator: Sync {
    fn evaluate(&self, chrom: &Chromosome) -> Result<Evaluation, EvolveError>;
}

/// Wraps a plain scoring function.
pub struct FnEvaluator<F>(pub F);

impl<F: Fn(&Chromosome) -> f64 + Sync> Evaluator for FnEvaluator<F> {
    fn evaluate(&self, chrom: &Chromosome) -> Result<Evaluation, EvolveError> {
        Ok(Evaluation::scalar((self.0)(chrom)))
    }
}

/// Stage-one objective: corpus similarity plus the zero-violation bonus.
#[derive(Clone, Copy)]
pub struct Ga1Evaluator<'a> {
    pub index: &'a CorpusIndex,
    pub rules: &'a RuleConfig,
    pub epsilon: f64,
}

impl Evaluator for Ga1Evaluator<'_> {
    fn evaluate(&self, chrom: &Chromosome) -> Result<Evaluation, EvolveError> {
        let b = ga1_objective(chrom, self.index, self.rules, self.epsilon);
        Ok(Evaluation {
            fitness: b.objective,
            breakdown: Some(b),
            listener: None,
        })
    }
}

/// Stage-two objective: weighted grammar, expert and regular listener scores.
pub struct Ga2Evaluator<'a> {
    pub grammar: Ga1Evaluator<'a>,
    pub expert: &'a ListenerNet,
    pub regular: &'a ListenerNet,
    pub composite: CompositeConfig,
}

impl Evaluator for Ga2Evaluator<'_> {
    fn evaluate(&self, chrom: &Chromosome) -> Result<Evaluation, EvolveError> {
        let b = ga1_objective(chrom, self.grammar.index, self.grammar.rules, self.grammar.epsilon);
        let m = chromosome_to_matrix(chrom);
        let expert = self.expert.forward(&m)?;
        let regular = self.regular.forward(&m)?;
        Ok(Evaluation {
            fitness: ga2_fitness(b.objective, expert, regular, &self.composite),
            breakdown: Some(b),
            listener: Some(ListenerScores { expert, regular }),
        })
    }
}

fn member_rng(seed: u64, generation: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | slot as u64);
    rng
}

fn distinct_pitch<R: Rng>(
    chrom: &Chromosome,
    channel: usize,
    step: usize,
    mut draw: impl FnMut(&mut R) -> u8,
    rng: &mut R,
) -> u8 {
    for _ in 0..RESAMPLE_ATTEMPTS {
        let g = draw(rng);
        if !chrom.collides(channel, step, g) {
            return g;
        }
    }
    0
}

/// One random chromosome with genes drawn from the corpus note distribution.
pub fn random_chromosome<R: Rng>(channels: usize, steps: usize, index: &CorpusIndex, rng: &mut R) -> Chromosome {
    let mut c = Chromosome::silent(channels, steps);
    let draw = |r: &mut R| match index.sample_note(r) {
        NoteKey::Rest => 0,
        NoteKey::Pitch(k) => k + 1,
    };
    for ch in 0..channels {
        for t in 0..steps {
            let g = distinct_pitch(&c, ch, t, draw, rng);
            c.set_gene(ch, t, g);
        }
    }
    c
}

pub fn init_population(cfg: &GAConfig, index: &CorpusIndex) -> Vec<Chromosome> {
    exec::map_range(cfg.exec, cfg.population, |i| {
        let mut rng = member_rng(cfg.seed, 0, i);
        random_chromosome(cfg.channels, cfg.steps, index, &mut rng)
    })
}

/// First half of the steps from `best1`, the rest from `best2`, on every channel.
pub fn crossover(best1: &Chromosome, best2: &Chromosome) -> Result<Chromosome, RollError> {
    if best1.shape() != best2.shape() {
        return Err(RollError::ShapeMismatch(best1.shape(), best2.shape()));
    }
    let half = best1.steps() / 2;
    let mut child = best2.clone();
    for ch in 0..best1.channels() {
        for t in 0..half {
            child.set_gene(ch, t, best1.gene(ch, t));
        }
    }
    // Every column comes whole from one parent, so no column gains a duplicate.
    Ok(child)
}

/// Independently flips each gene with probability `rate`: sounding genes fall
/// silent, silent genes take a corpus-sampled pitch.
pub fn mutate<R: Rng>(mut child: Chromosome, rate: f64, index: &CorpusIndex, rng: &mut R) -> Chromosome {
    for ch in 0..child.channels() {
        for t in 0..child.steps() {
            if rng.gen::<f64>() < rate {
                let g = if child.gene(ch, t) != 0 {
                    0
                } else {
                    distinct_pitch(&child, ch, t, |r: &mut R| index.sample_pitch(r) + 1, rng)
                };
                child.set_gene(ch, t, g);
            }
        }
    }
    child
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best: Evaluation,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<IterationRecord>,
    pub final_population: Vec<Chromosome>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str = "iteration,best_fitness,mean_fitness,cost,score,elapsed_ms";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let (cost, score) = match &r.best.breakdown {
                Some(b) => (b.cost.to_string(), b.score.to_string()),
                None => (String::new(), String::new()),
            };
            writeln!(
                w,
                "{},{},{},{},{},{:.3}",
                r.iteration, r.best_fitness, r.mean_fitness, cost, score, r.elapsed_ms
            )?;
        }
        Ok(())
    }

    pub fn total_ms(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.elapsed_ms)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub best: Chromosome,
    pub best_eval: Evaluation,
    pub log: RunLog,
}

/// Indices of the two fittest members; ties go to the lower index.
fn top_two(evals: &[Evaluation]) -> (usize, usize) {
    let mut order: Vec<usize> = (0..evals.len()).collect();
    order.sort_by(|&a, &b| evals[b].fitness.total_cmp(&evals[a].fitness).then(a.cmp(&b)));
    (order[0], order[1])
}

fn evaluate_population<E: Evaluator>(
    exec: Exec,
    population: &[Chromosome],
    known: Vec<Option<Evaluation>>,
    evaluator: &E,
) -> Result<Vec<Evaluation>, EvolveError> {
    // Identical chromosomes within a generation are scored once.
    let mut slot_of: HashMap<&Chromosome, usize> = HashMap::new();
    let mut pending: Vec<&Chromosome> = Vec::new();
    for (c, k) in population.iter().zip(&known) {
        if k.is_none() && !slot_of.contains_key(c) {
            slot_of.insert(c, pending.len());
            pending.push(c);
        }
    }
    let fresh: Vec<Evaluation> = exec::map(exec, &pending, |c| evaluator.evaluate(c))
        .into_iter()
        .collect::<Result<_, _>>()?;
    Ok(population
        .iter()
        .zip(known)
        .map(|(c, k)| k.unwrap_or_else(|| fresh[slot_of[c]]))
        .collect())
}

pub fn run<E: Evaluator>(cfg: &GAConfig, evaluator: &E, index: &CorpusIndex) -> Result<RunOutcome, EvolveError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut population = init_population(cfg, index);
    let mut known: Vec<Option<Evaluation>> = vec![None; cfg.population];
    let mut log = RunLog::default();

    for it in 0..cfg.iterations {
        let evals = evaluate_population(cfg.exec, &population, known, evaluator)?;
        let (b1, b2) = top_two(&evals);
        let mean = evals.iter().map(|e| e.fitness).sum::<f64>() / evals.len() as f64;
        log.records.push(IterationRecord {
            iteration: it,
            best_fitness: evals[b1].fitness,
            mean_fitness: mean,
            best: evals[b1],
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        });

        if it + 1 == cfg.iterations {
            let best = population[b1].clone();
            log.final_population = population;
            return Ok(RunOutcome {
                best,
                best_eval: evals[b1],
                log,
            });
        }

        let elites = [&population[b1], &population[b2]];
        let offspring = exec::map_range(cfg.exec, cfg.population - 2, |k| {
            let mut rng = member_rng(cfg.seed, it + 1, k + 2);
            let child = if rng.gen::<f64>() < cfg.crossover_rate {
                crossover(elites[0], elites[1]).expect("population shares one shape")
            } else {
                elites[rng.gen_range(0..2)].clone()
            };
            mutate(child, cfg.mutation_rate, index, &mut rng)
        });
        let mut next = vec![elites[0].clone(), elites[1].clone()];
        next.extend(offspring);
        known = vec![None; cfg.population];
        known[0] = Some(evals[b1]);
        known[1] = Some(evals[b2]);
        for (k, c) in known.iter_mut().zip(&next).skip(2) {
            if c == elites[0] {
                *k = Some(evals[b1]);
            } else if c == elites[1] {
                *k = Some(evals[b2]);
            }
        }
        population = next;
    }
    unreachable!("iterations >= 1 returns inside the loop")
}
