//! Two-stage evolutionary composition of short polyphonic piano pieces.
//!
//! Stage one evolves chromosomes against a rule-and-corpus objective; stage
//! two adds learned listener ratings to that objective.

pub mod abc;
pub mod corpus;
pub mod evolve;
pub mod exec;
pub mod fitness;
pub mod listener;
pub mod pianoroll;
pub mod pipeline;

pub use abc::{emit_abc, parse_abc, AbcError, NoteEvent, Piece};
pub use corpus::{CorpusError, CorpusIndex, NoteKey};
pub use evolve::{Evaluation, Evaluator, EvolveError, GAConfig, RunLog, Stage};
pub use exec::Exec;
pub use fitness::{CompositeConfig, FitnessBreakdown, RuleConfig, Violations};
pub use listener::ListenerNet;
pub use pianoroll::{Chromosome, PianoMatrix, RollError};
