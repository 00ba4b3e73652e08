use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::manifest::{Manifest, ManifestEntry};
use super::{create_dir, layout, read_text, write_file, PipelineConfig, PipelineError};
use crate::abc::{emit_abc, parse_abc, split_tunes, Piece};
use crate::corpus::CorpusIndex;
use crate::evolve::{self, Evaluation, GAConfig, Ga1Evaluator, Ga2Evaluator, RunLog, RunOutcome};
use crate::exec::{self, Exec};
use crate::fitness::{ga1_objective, ga2_fitness, CompositeConfig, FitnessBreakdown, RuleConfig};
use crate::listener::{train, ListenerGroup, ListenerNet, RatingDataset, TrainConfig, TrainError};
use crate::pianoroll::{
    chromosome_to_matrix, matrix_to_chromosome, piece_to_matrix, voices_to_chromosome, Chromosome, PianoMatrix,
    RollError,
};

#[derive(Debug, Clone)]
pub struct IndexReport {
    pub pieces: usize,
    pub notes: u64,
    /// Files or tunes that failed to parse, with the reason.
    pub skipped: Vec<Skipped>,
    pub index_path: PathBuf,
    pub histogram_path: PathBuf,
}

/// A tune that failed to parse: its file and the reason.
pub type Skipped = (PathBuf, String);

/// Parses every `.abc` file under `dir` (sorted by name, one or more tunes per
/// file). Unparseable tunes are skipped and reported unless `strict`.
pub fn load_corpus(dir: &Path, strict: bool, exec: Exec) -> Result<(Vec<Piece>, Vec<Skipped>), PipelineError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| PipelineError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("abc")))
        .collect();
    files.sort();
    let texts = files
        .iter()
        .map(|f| read_text(f).map(|t| (f.clone(), t)))
        .collect::<Result<Vec<_>, _>>()?;
    let parsed = exec::map(exec, &texts, |(f, text)| {
        split_tunes(text)
            .into_iter()
            .map(|tune| parse_abc(tune).map_err(|e| (f.clone(), e)))
            .collect::<Vec<_>>()
    });
    let mut pieces = Vec::new();
    let mut skipped = Vec::new();
    for (f, tunes) in texts.iter().map(|(f, _)| f).zip(parsed) {
        for r in tunes {
            match r {
                Ok(p) => pieces.push(p),
                Err((file, source)) if strict => return Err(PipelineError::Abc { file, source }),
                Err((_, e)) => skipped.push((f.clone(), e.to_string())),
            }
        }
    }
    Ok((pieces, skipped))
}

pub fn cmd_index(corpus_dir: &Path, work_dir: &Path, strict: bool, exec: Exec) -> Result<IndexReport, PipelineError> {
    let (pieces, skipped) = load_corpus(corpus_dir, strict, exec)?;
    let index = CorpusIndex::build_with(&pieces, exec)?;
    let index_path = layout::index(work_dir);
    let histogram_path = layout::histogram(work_dir);
    write_file(&index_path, index.to_text())?;
    let mut hist = Vec::new();
    index.write_histogram(&mut hist).expect("in-memory write");
    write_file(&histogram_path, hist)?;
    Ok(IndexReport {
        pieces: pieces.len(),
        notes: index.total_notes(),
        skipped,
        index_path,
        histogram_path,
    })
}

pub fn load_index(path: &Path) -> Result<CorpusIndex, PipelineError> {
    let f = fs::File::open(path).map_err(|e| PipelineError::io(path, e))?;
    CorpusIndex::read(BufReader::new(f)).map_err(|source| PipelineError::IndexFile {
        file: path.to_path_buf(),
        source,
    })
}

fn piece_for_export(chrom: &Chromosome, reference: u32, title: &str) -> Piece {
    let mut piece = chrom.to_piece();
    piece.reference = reference;
    piece.title = title.to_string();
    piece
}

fn run_log_csv(log: &RunLog) -> Vec<u8> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf).expect("in-memory write");
    buf
}

/// Runs stage one `collection_size` times with seeds `ga1.seed + i` and exports
/// each best piece with its breakdown, run log and a manifest entry.
pub fn cmd_ga1(cfg: &PipelineConfig, index: &CorpusIndex, out_dir: &Path) -> Result<Manifest, PipelineError> {
    let evaluator = Ga1Evaluator {
        index,
        rules: &cfg.rules,
        epsilon: cfg.epsilon,
    };
    create_dir(out_dir)?;
    let mut manifest = Manifest::default();
    let mut breakdowns = format!("id,{}\n", FitnessBreakdown::CSV_HEADER);
    for i in 0..cfg.collection_size {
        let seed = cfg.ga1.seed.wrapping_add(i as u64);
        let ga = GAConfig {
            seed,
            ..cfg.ga1.clone()
        };
        let out = evolve::run(&ga, &evaluator, index)?;
        let id = format!("piece-{i:03}");
        let file = format!("{id}.abc");
        write_file(
            &out_dir.join(&file),
            emit_abc(&piece_for_export(&out.best, i as u32 + 1, &id)),
        )?;
        write_file(
            &out_dir.join(format!("{id}.csv")),
            chromosome_to_matrix(&out.best).to_csv_string(),
        )?;
        write_file(
            &out_dir.join("logs").join(format!("{id}.runlog.csv")),
            run_log_csv(&out.log),
        )?;
        let b = out
            .best_eval
            .breakdown
            .expect("stage-one evaluations carry a breakdown");
        breakdowns.push_str(&format!("{id},{}\n", b.csv_row()));
        manifest.entries.push(ManifestEntry {
            id,
            file,
            objective: b.objective,
            seed,
        });
    }
    write_file(&out_dir.join("breakdowns.csv"), breakdowns)?;
    manifest.write(&out_dir.join("manifest.csv"))?;
    Ok(manifest)
}

/// Re-parses every exported piece and recomputes its stage-one objective.
/// Returns `(id, manifest objective, recomputed objective)` per entry.
pub fn verify_collection(
    manifest_path: &Path,
    channels: usize,
    index: &CorpusIndex,
    rules: &RuleConfig,
    epsilon: f64,
) -> Result<Vec<(String, f64, f64)>, PipelineError> {
    let manifest = Manifest::read(manifest_path)?;
    manifest
        .entries
        .iter()
        .map(|e| {
            let file = Manifest::piece_path(manifest_path, e);
            let piece = parse_abc(&read_text(&file)?).map_err(|source| PipelineError::Abc {
                file: file.clone(),
                source,
            })?;
            let chrom =
                voices_to_chromosome(&piece, channels).map_err(|source| PipelineError::Roll { file, source })?;
            Ok((
                e.id.clone(),
                e.objective,
                ga1_objective(&chrom, index, rules, epsilon).objective,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub group: ListenerGroup,
    /// Best stage-one objective in the rated collection.
    pub grammar_norm: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub final_rmse: f64,
    pub fingerprint: String,
}

impl ModelMeta {
    pub fn path_for(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("meta.toml")
    }

    pub fn read(path: &Path) -> Result<Self, PipelineError> {
        toml::from_str(&read_text(path)?).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub losses: Vec<f64>,
    pub meta: ModelMeta,
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,rmse\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, l));
    }
    out
}

/// Trains one listener model. On divergence the last finite parameters and
/// the partial loss curve are still written, as `<group>.diverged.ckpt`.
pub fn cmd_train(
    dataset_path: &Path,
    grammar_norm: f64,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport, PipelineError> {
    let f = fs::File::open(dataset_path).map_err(|e| PipelineError::io(dataset_path, e))?;
    let data = RatingDataset::read(BufReader::new(f))?;
    if cfg.hidden < 1 {
        return Err(PipelineError::Config("train.hidden must be >= 1".into()));
    }
    let group = data.group.as_str();
    let checkpoint = out_dir.join(format!("{group}.ckpt"));
    let loss_path = out_dir.join(format!("{group}.loss.csv"));
    let save = |net: &ListenerNet, path: &Path| {
        create_dir(out_dir)?;
        net.save(path).map_err(|source| PipelineError::Checkpoint {
            file: path.to_path_buf(),
            source,
        })
    };
    match train(ListenerNet::new(cfg.hidden, cfg.seed), &data, cfg) {
        Ok((net, losses)) => {
            save(&net, &checkpoint)?;
            write_file(&loss_path, loss_csv(&losses))?;
            let meta = ModelMeta {
                group: data.group,
                grammar_norm,
                hidden: cfg.hidden,
                epochs: cfg.epochs,
                final_rmse: *losses.last().expect("epochs >= 1"),
                fingerprint: net.fingerprint(),
            };
            write_file(
                &ModelMeta::path_for(&checkpoint),
                toml::to_string(&meta).expect("meta serializes"),
            )?;
            Ok(TrainReport {
                checkpoint,
                losses,
                meta,
            })
        }
        Err(TrainError::DivergenceDetected {
            epoch,
            last_finite,
            losses,
        }) => {
            save(&last_finite, &out_dir.join(format!("{group}.diverged.ckpt")))?;
            write_file(&loss_path, loss_csv(&losses))?;
            Err(TrainError::DivergenceDetected {
                epoch,
                last_finite,
                losses,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn load_model(path: &Path, hidden: usize) -> Result<ListenerNet, PipelineError> {
    ListenerNet::load_expecting(path, hidden).map_err(|source| PipelineError::Checkpoint {
        file: path.to_path_buf(),
        source,
    })
}

/// Header of the stage-two breakdown: the stage-one columns, then the listener
/// scores, the weights and the composite fitness.
pub const GA2_BREAKDOWN_HEADER: &str =
    "score,cost,rhythm,melodic_interval,harmony,transition,objective,n2,n3,n4,s2,s3,s4,m,l,epsilon,\
x1,x2,x3,w1,w2,w3,grammar_norm,composite";

fn ga2_row(e: &Evaluation, c: &CompositeConfig) -> String {
    let b = e.breakdown.expect("stage-two evaluations carry a breakdown");
    let l = e.listener.expect("stage-two evaluations carry listener scores");
    format!(
        "{},{},{},{},{},{},{},{},{}",
        b.csv_row(),
        b.objective,
        l.expert,
        l.regular,
        c.w1,
        c.w2,
        c.w3,
        c.grammar_norm,
        e.fitness
    )
}

#[derive(Debug, Clone)]
pub struct Ga2Report {
    pub outcome: RunOutcome,
    pub composite: CompositeConfig,
    pub out_dir: PathBuf,
}

/// Runs stage two against two stored listener models. The grammar normalizer
/// comes from `cfg.grammar_norm`, else from the expert model's sidecar.
pub fn cmd_ga2(
    cfg: &PipelineConfig,
    index: &CorpusIndex,
    expert_path: &Path,
    regular_path: &Path,
    out_dir: &Path,
) -> Result<Ga2Report, PipelineError> {
    let expert = load_model(expert_path, cfg.train.hidden)?;
    let regular = load_model(regular_path, cfg.train.hidden)?;
    let grammar_norm = match cfg.grammar_norm {
        Some(g) => g,
        None => ModelMeta::read(&ModelMeta::path_for(expert_path))?.grammar_norm,
    };
    let composite = CompositeConfig {
        grammar_norm,
        ..cfg.composite
    };
    composite.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let evaluator = Ga2Evaluator {
        grammar: Ga1Evaluator {
            index,
            rules: &cfg.rules,
            epsilon: cfg.epsilon,
        },
        expert: &expert,
        regular: &regular,
        composite,
    };
    let outcome = evolve::run(&cfg.ga2, &evaluator, index)?;

    write_file(
        &out_dir.join("best.abc"),
        emit_abc(&piece_for_export(&outcome.best, 1, "ga2-best")),
    )?;
    write_file(
        &out_dir.join("best.csv"),
        chromosome_to_matrix(&outcome.best).to_csv_string(),
    )?;
    write_file(
        &out_dir.join("breakdown.csv"),
        format!("{GA2_BREAKDOWN_HEADER}\n{}\n", ga2_row(&outcome.best_eval, &composite)),
    )?;
    write_file(&out_dir.join("runlog.csv"), run_log_csv(&outcome.log))?;
    let mut trace = format!("iteration,{GA2_BREAKDOWN_HEADER}\n");
    for r in &outcome.log.records {
        trace.push_str(&format!("{},{}\n", r.iteration, ga2_row(&r.best, &composite)));
    }
    write_file(&out_dir.join("trace.csv"), trace)?;
    Ok(Ga2Report {
        outcome,
        composite,
        out_dir: out_dir.to_path_buf(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub channels: usize,
    pub steps: usize,
    pub breakdown: FitnessBreakdown,
    /// `(expert, regular, composite)` when models were supplied.
    pub listener: Option<(f64, f64, f64)>,
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.breakdown;
        let v = &b.violations;
        writeln!(f, "channels={} steps={}", self.channels, self.steps)?;
        writeln!(f, "score={} cost={} objective={}", b.score, b.cost, b.objective)?;
        writeln!(
            f,
            "violations rhythm={} melodic_interval={} harmony={} transition={}",
            v.rhythm, v.melodic_interval, v.harmony, v.transition
        )?;
        writeln!(
            f,
            "n2={} n3={} n4={} s2={} s3={} s4={} m={} l={}",
            b.n2, b.n3, b.n4, b.s2, b.s3, b.s4, b.m, b.l
        )?;
        if let Some((x2, x3, c)) = self.listener {
            writeln!(f, "expert={x2} regular={x3} composite={c}")?;
        }
        Ok(())
    }
}

/// Genotype of an arbitrary piece: one channel per voice lane. A pitch that
/// doubles one already sounding in a lower-numbered voice is dropped.
fn piece_genotype(piece: &Piece) -> Chromosome {
    let mut chrom = Chromosome::silent(piece.channels.max(1), piece.span as usize);
    for e in &piece.events {
        for t in e.onset as usize..e.end() as usize {
            if !chrom.collides(e.voice as usize, t, e.pitch + 1) {
                chrom.set_gene(e.voice as usize, t, e.pitch + 1);
            }
        }
    }
    chrom
}

/// The genotype of a piece file, plus the bar length when the file declares a meter.
fn read_piece_file(path: &Path) -> Result<(Chromosome, Option<u32>), PipelineError> {
    let text = read_text(path)?;
    if is_csv(path) {
        let m = PianoMatrix::read_csv(text.as_bytes()).map_err(|source| PipelineError::Roll {
            file: path.to_path_buf(),
            source,
        })?;
        let channels = max_polyphony(&m);
        let chrom = matrix_to_chromosome(&m, channels).map_err(|source| PipelineError::Roll {
            file: path.to_path_buf(),
            source,
        })?;
        Ok((chrom, None))
    } else {
        // Multi-tune files are scored by their first tune.
        let tune = split_tunes(&text).first().copied().unwrap_or(&text);
        let piece = parse_abc(tune).map_err(|source| PipelineError::Abc {
            file: path.to_path_buf(),
            source,
        })?;
        Ok((piece_genotype(&piece), Some(piece.bar_ticks())))
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv"))
}

fn max_polyphony(m: &PianoMatrix) -> usize {
    m.columns()
        .iter()
        .map(|c| c.count_ones() as usize)
        .max()
        .unwrap_or(0)
        .max(1)
}

/// Scores an ABC or piano-roll CSV file; adds the composite when models are
/// given. ABC input is checked against its own meter.
pub fn cmd_score(
    piece_path: &Path,
    index: &CorpusIndex,
    rules: &RuleConfig,
    epsilon: f64,
    models: Option<(&ListenerNet, &ListenerNet, &CompositeConfig)>,
) -> Result<ScoreReport, PipelineError> {
    let (chrom, bar) = read_piece_file(piece_path)?;
    let rules = RuleConfig {
        meter_ticks: bar.unwrap_or(rules.meter_ticks).max(1),
        ..rules.clone()
    };
    let breakdown = ga1_objective(&chrom, index, &rules, epsilon);
    let listener = match models {
        Some((e, r, c)) if chrom.steps() > 0 => {
            let m = chromosome_to_matrix(&chrom);
            let x2 = e.forward(&m).map_err(|err| PipelineError::Data(err.to_string()))?;
            let x3 = r.forward(&m).map_err(|err| PipelineError::Data(err.to_string()))?;
            Some((x2, x3, ga2_fitness(breakdown.objective, x2, x3, c)))
        }
        _ => None,
    };
    Ok(ScoreReport {
        channels: chrom.channels(),
        steps: chrom.steps(),
        breakdown,
        listener,
    })
}

/// ABC to piano-roll CSV or back, chosen by the input extension. CSV input is
/// split into `channels` voices (default: the widest column).
pub fn convert(input: &Path, output: &Path, channels: Option<usize>) -> Result<(), PipelineError> {
    let text = read_text(input)?;
    let roll_err = |source: RollError| PipelineError::Roll {
        file: input.to_path_buf(),
        source,
    };
    if is_csv(input) {
        let m = PianoMatrix::read_csv(text.as_bytes()).map_err(roll_err)?;
        let channels = channels.unwrap_or_else(|| max_polyphony(&m));
        if channels < 1 {
            return Err(PipelineError::Config("channels must be >= 1".into()));
        }
        let chrom = matrix_to_chromosome(&m, channels).map_err(roll_err)?;
        write_file(output, emit_abc(&chrom.to_piece()))
    } else {
        let piece = parse_abc(&text).map_err(|source| PipelineError::Abc {
            file: input.to_path_buf(),
            source,
        })?;
        write_file(output, piece_to_matrix(&piece).to_csv_string())
    }
}
