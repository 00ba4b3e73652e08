use std::io::Write;

use super::{PipelineConfig, PipelineError};
use crate::corpus::CorpusIndex;
use crate::evolve::{self, GAConfig, Ga1Evaluator, Ga2Evaluator, Stage};
use crate::fitness::CompositeConfig;
use crate::listener::ListenerNet;

pub const TIMING_HEADER: &str = "stage,steps,channels,iterations,population,total_ms,ms_per_iteration,best_fitness";

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub stage: Stage,
    pub steps: usize,
    pub channels: usize,
    pub iterations: usize,
    pub population: usize,
    pub total_ms: f64,
    pub ms_per_iteration: f64,
    pub best_fitness: f64,
}

/// Wall-clock cost of both stages at each piece length, using the GA settings
/// of `cfg` with `steps` replaced.
pub fn timing_sweep(
    cfg: &PipelineConfig,
    index: &CorpusIndex,
    expert: &ListenerNet,
    regular: &ListenerNet,
    composite: CompositeConfig,
    lengths: &[usize],
) -> Result<Vec<TimingRow>, PipelineError> {
    let grammar = Ga1Evaluator {
        index,
        rules: &cfg.rules,
        epsilon: cfg.epsilon,
    };
    let ga2 = Ga2Evaluator {
        grammar,
        expert,
        regular,
        composite,
    };
    let mut rows = Vec::new();
    for &steps in lengths {
        for base in [&cfg.ga1, &cfg.ga2] {
            let ga = GAConfig { steps, ..base.clone() };
            let out = match ga.mode {
                Stage::Ga1 => evolve::run(&ga, &grammar, index)?,
                Stage::Ga2 => evolve::run(&ga, &ga2, index)?,
            };
            let total_ms = out.log.total_ms();
            rows.push(TimingRow {
                stage: ga.mode,
                steps,
                channels: ga.channels,
                iterations: ga.iterations,
                population: ga.population,
                total_ms,
                ms_per_iteration: total_ms / ga.iterations as f64,
                best_fitness: out.best_eval.fitness,
            });
        }
    }
    Ok(rows)
}

pub fn write_timing_csv<W: Write>(rows: &[TimingRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TIMING_HEADER}")?;
    for r in rows {
        let stage = match r.stage {
            Stage::Ga1 => "ga1",
            Stage::Ga2 => "ga2",
        };
        writeln!(
            w,
            "{stage},{},{},{},{},{:.3},{:.6},{}",
            r.steps, r.channels, r.iterations, r.population, r.total_ms, r.ms_per_iteration, r.best_fitness
        )?;
    }
    Ok(())
}
