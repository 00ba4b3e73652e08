//! A pragmatic subset of ABC notation, quantized to a 1/64-whole-note grid.
//!
//! Supported body tokens: notes `A`–`G`/`a`–`g` with accidentals (`^`, `_`,
//! `=`, doubled forms), octave marks (`'` and `,`), length multipliers and
//! divisors, rests (`z`), bar lines (`|`, `||`, `|]`, `[|`), bracketed chords
//! and `V:` voice switches. Anything else (ties, tuplets, slurs, grace notes,
//! decorations, repeats, inline fields) is rejected.

mod emit;
mod parse;
pub mod pitch;

pub use emit::emit_abc;
pub use parse::{parse_abc, split_tunes};

use thiserror::Error;

/// Grid ticks per whole note.
pub const TICKS_PER_WHOLE: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NoteEvent {
    /// Piano key index, 0 = A0 .. 87 = C8.
    pub pitch: u8,
    pub onset: u32,
    pub duration: u32,
    pub voice: u16,
}

impl NoteEvent {
    pub fn end(&self) -> u32 {
        self.onset + self.duration
    }
}

/// A fraction of a whole note, e.g. `1/8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fraction {
    pub num: u32,
    pub den: u32,
}

impl Fraction {
    pub const fn new(num: u32, den: u32) -> Self {
        Fraction { num, den }
    }

    /// Length in grid ticks, if it lands exactly on the grid.
    pub fn ticks(&self) -> Option<u32> {
        let scaled = TICKS_PER_WHOLE as u64 * self.num as u64;
        (self.den != 0 && scaled.is_multiple_of(self.den as u64)).then(|| (scaled / self.den as u64) as u32)
    }
}

impl std::fmt::Display for Fraction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// A parsed tune. Events are kept sorted by `(onset, voice, pitch)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Piece {
    pub reference: u32,
    pub title: String,
    pub meter: Fraction,
    pub unit_length: Fraction,
    pub key: String,
    /// Header lines other than X, T, M, L, K, kept verbatim.
    pub extra_headers: Vec<String>,
    pub events: Vec<NoteEvent>,
    pub channels: usize,
    /// Total length in ticks, including trailing rests.
    pub span: u32,
}

impl Piece {
    /// An empty 4/4 piece in C with `L:1/64`, used for exporting generated material.
    pub fn blank(channels: usize, span: u32) -> Self {
        Piece {
            reference: 1,
            title: String::new(),
            meter: Fraction::new(4, 4),
            unit_length: Fraction::new(1, 64),
            key: "C".to_string(),
            extra_headers: Vec::new(),
            events: Vec::new(),
            channels: channels.max(1),
            span,
        }
    }

    /// Ticks per bar under the piece's meter.
    pub fn bar_ticks(&self) -> u32 {
        self.meter.ticks().unwrap_or(TICKS_PER_WHOLE).max(1)
    }

    /// Events of one voice ordered by onset.
    pub fn voice_events(&self, voice: u16) -> impl Iterator<Item = &NoteEvent> {
        self.events.iter().filter(move |e| e.voice == voice)
    }

    pub(crate) fn normalize(&mut self) {
        self.events
            .sort_by_key(|e| (e.onset, e.voice, std::cmp::Reverse(e.pitch), e.duration));
        let max_voice = self.events.iter().map(|e| e.voice as usize + 1).max().unwrap_or(1);
        self.channels = self.channels.max(max_voice);
        let end = self.events.iter().map(NoteEvent::end).max().unwrap_or(0);
        self.span = self.span.max(end);
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AbcError {
    #[error("unsupported token {token:?} at byte {position}")]
    UnsupportedToken { position: usize, token: String },
    #[error("pitch at byte {position} (MIDI {midi}) is outside A0..C8")]
    PitchOutOfRange { position: usize, midi: i32 },
    #[error("duration at byte {position} ({length} of a whole note) does not fall on the 1/64 grid")]
    OffGridDuration { position: usize, length: String },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
}
