use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harmogen::listener::{ListenerGroup, ListenerNet};
use harmogen::pipeline::{
    cmd_ga1, cmd_ga2, cmd_index, cmd_ratings_import, cmd_score, cmd_train, convert, layout, load_index, Manifest,
    ModelMeta, PipelineConfig, PipelineError, WorkLock,
};

#[derive(Parser)]
#[command(name = "harmogen", version, about = "Evolve short polyphonic piano pieces")]
struct Cli {
    /// TOML config file; every field is optional.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set ga1.iterations=300`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index an ABC corpus and write the note histogram.
    Index {
        /// Corpus directory (default: corpus_dir from the config).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Fail on the first unparseable tune instead of skipping it.
        #[arg(long)]
        strict: bool,
    },
    /// Generate the rating collection with the stage-one objective.
    Ga1 {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a ratings CSV and write one dataset per listener group.
    RatingsImport {
        /// CSV with header piece_id,group,rater_id,score.
        ratings: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the listener model of one group.
    Train {
        #[arg(long)]
        group: ListenerGroup,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Manifest whose best objective becomes the grammar normalizer.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compose with the stage-two objective using both listener models.
    Ga2 {
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        expert: Option<PathBuf>,
        #[arg(long)]
        regular: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the fitness breakdown of an ABC or piano-roll CSV file.
    Score {
        piece: PathBuf,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long, requires = "regular")]
        expert: Option<PathBuf>,
        #[arg(long, requires = "expert")]
        regular: Option<PathBuf>,
    },
    /// Convert ABC to piano-roll CSV, or piano-roll CSV to ABC.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Voices for CSV input (default: the widest column).
        #[arg(long)]
        channels: Option<usize>,
    },
}

macro_rules! say {
    ($out:ident, $($arg:tt)*) => {
        let _ = writeln!($out, $($arg)*);
    };
}

fn or_default(p: Option<PathBuf>, default: PathBuf) -> PathBuf {
    p.unwrap_or(default)
}

fn load_model(path: &Path, hidden: usize) -> Result<ListenerNet, PipelineError> {
    ListenerNet::load_expecting(path, hidden).map_err(|source| PipelineError::Checkpoint {
        file: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    let mut text = String::new();
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let work = cfg.work_dir.clone();
    match cli.command {
        Command::Index { corpus, strict } => {
            let _lock = WorkLock::acquire(&work)?;
            let corpus = or_default(corpus, cfg.corpus_dir.clone());
            let report = cmd_index(&corpus, &work, strict, cfg.ga1.exec)?;
            for (file, reason) in &report.skipped {
                eprintln!("skipped {}: {reason}", file.display());
            }
            say!(text, "pieces={} notes={}", report.pieces, report.notes);
            say!(text, "index={}", report.index_path.display());
            say!(text, "histogram={}", report.histogram_path.display());
        }
        Command::Ga1 { index, out } => {
            let _lock = WorkLock::acquire(&work)?;
            let index = load_index(&or_default(index, layout::index(&work)))?;
            let out = or_default(out, layout::collection(&work));
            let manifest = cmd_ga1(&cfg, &index, &out)?;
            for e in &manifest.entries {
                say!(text, "{} seed={} objective={}", e.id, e.seed, e.objective);
            }
            say!(text, "manifest={}", out.join("manifest.csv").display());
        }
        Command::RatingsImport { ratings, manifest } => {
            let _lock = WorkLock::acquire(&work)?;
            let manifest = or_default(manifest, layout::manifest(&work));
            let report = cmd_ratings_import(&ratings, &manifest, &work)?;
            say!(text, "piece_id,expert_raters,regular_raters");
            for (id, e, r) in &report.rater_counts {
                say!(text, "{id},{e},{r}");
            }
            for d in &report.datasets {
                say!(text, "dataset={}", d.display());
            }
        }
        Command::Train {
            group,
            dataset,
            manifest,
            out,
        } => {
            let _lock = WorkLock::acquire(&work)?;
            let dataset = or_default(dataset, layout::dataset(&work, group));
            let grammar_norm = match cfg.grammar_norm {
                Some(g) => g,
                None => {
                    let path = or_default(manifest, layout::manifest(&work));
                    Manifest::read(&path)?
                        .best_objective()
                        .ok_or_else(|| PipelineError::Data(format!("{}: manifest is empty", path.display())))?
                }
            };
            let out = or_default(out, layout::models(&work));
            let report = cmd_train(&dataset, grammar_norm, &cfg.train, &out)?;
            say!(
                text,
                "group={} epochs={} initial_rmse={} final_rmse={}",
                group.as_str(),
                report.losses.len(),
                report.losses[0],
                report.meta.final_rmse
            );
            say!(
                text,
                "checkpoint={} sha256={}",
                report.checkpoint.display(),
                report.meta.fingerprint
            );
        }
        Command::Ga2 {
            index,
            expert,
            regular,
            out,
        } => {
            let _lock = WorkLock::acquire(&work)?;
            let index = load_index(&or_default(index, layout::index(&work)))?;
            let expert = or_default(expert, layout::checkpoint(&work, ListenerGroup::Expert));
            let regular = or_default(regular, layout::checkpoint(&work, ListenerGroup::Regular));
            let out = or_default(out, layout::ga2(&work));
            let report = cmd_ga2(&cfg, &index, &expert, &regular, &out)?;
            let e = &report.outcome.best_eval;
            let l = e.listener.expect("stage-two evaluations carry listener scores");
            say!(
                text,
                "fitness={} x1={} x2={} x3={} elapsed_ms={:.1}",
                e.fitness,
                e.breakdown.map_or(0.0, |b| b.objective),
                l.expert,
                l.regular,
                report.outcome.log.total_ms()
            );
            say!(text, "best={}", out.join("best.abc").display());
        }
        Command::Score {
            piece,
            index,
            expert,
            regular,
        } => {
            let index = load_index(&or_default(index, layout::index(&work)))?;
            let models = match (expert, regular) {
                (Some(e), Some(r)) => {
                    let grammar_norm = match cfg.grammar_norm {
                        Some(g) => g,
                        None => ModelMeta::read(&ModelMeta::path_for(&e))?.grammar_norm,
                    };
                    Some((
                        load_model(&e, cfg.train.hidden)?,
                        load_model(&r, cfg.train.hidden)?,
                        harmogen::CompositeConfig {
                            grammar_norm,
                            ..cfg.composite
                        },
                    ))
                }
                _ => None,
            };
            let report = cmd_score(
                &piece,
                &index,
                &cfg.rules,
                cfg.epsilon,
                models.as_ref().map(|(e, r, c)| (e, r, c)),
            )?;
            let _ = write!(text, "{report}");
        }
        Command::Convert {
            input,
            output,
            channels,
        } => {
            convert(&input, &output, channels)?;
            say!(text, "wrote {}", output.display());
        }
    }
    Ok(text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(text) => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = std::io::stdout().write_all(text.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
