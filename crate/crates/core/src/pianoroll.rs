//! The 88-row binary piano matrix and the channel-by-step genotype.
//!
//! Columns of a [`PianoMatrix`] are stored as 128-bit masks; bit `k` is key `k`.
//! A [`Chromosome`] gene is 0 for silence or `key + 1` for a sounding key.
//! Runs of equal consecutive genes in a channel are one held note.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::abc::pitch::PIANO_KEYS;
use crate::abc::{NoteEvent, Piece};

const KEY_MASK: u128 = (1u128 << PIANO_KEYS) - 1;

#[derive(Debug, Error)]
pub enum RollError {
    #[error("column {column} has more sounding keys than {channels} channels")]
    TooManyVoices { column: usize, channels: usize },
    #[error("chromosome shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("invalid gene {gene} at channel {channel}, step {step}")]
    InvalidGene { channel: usize, step: usize, gene: u8 },
    #[error("duplicate pitch {gene} at step {step}")]
    DuplicatePitch { step: usize, gene: u8 },
    #[error("piano-roll CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PianoMatrix {
    cols: Vec<u128>,
}

impl PianoMatrix {
    pub const ROWS: usize = PIANO_KEYS;

    pub fn zeros(ticks: usize) -> Self {
        PianoMatrix { cols: vec![0; ticks] }
    }

    pub fn from_columns(cols: Vec<u128>) -> Self {
        PianoMatrix {
            cols: cols.into_iter().map(|c| c & KEY_MASK).collect(),
        }
    }

    pub fn ticks(&self) -> usize {
        self.cols.len()
    }

    pub fn get(&self, key: usize, tick: usize) -> bool {
        self.cols[tick] >> key & 1 == 1
    }

    pub fn set(&mut self, key: usize, tick: usize, on: bool) {
        assert!(key < PIANO_KEYS, "key {key} is off the keyboard");
        if on {
            self.cols[tick] |= 1 << key;
        } else {
            self.cols[tick] &= !(1 << key);
        }
    }

    /// Column bitmask: bit `k` set iff key `k` sounds.
    pub fn column(&self, tick: usize) -> u128 {
        self.cols[tick]
    }

    pub fn columns(&self) -> &[u128] {
        &self.cols
    }

    /// Keys sounding at `tick`, ascending.
    pub fn keys_at(&self, tick: usize) -> impl Iterator<Item = u8> + '_ {
        let col = self.cols[tick];
        (0..PIANO_KEYS as u8).filter(move |&k| col >> k & 1 == 1)
    }

    pub fn count_ones(&self) -> usize {
        self.cols.iter().map(|c| c.count_ones() as usize).sum()
    }

    /// Fraction of the 88×T cells that are on (0 for an empty matrix).
    pub fn density(&self) -> f64 {
        if self.cols.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / (PIANO_KEYS * self.cols.len()) as f64
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut line = String::with_capacity(8 + 2 * PIANO_KEYS);
        line.push_str("tick");
        for k in 0..PIANO_KEYS {
            let _ = write!(line, ",k{k}");
        }
        writeln!(w, "{line}")?;
        for (t, col) in self.cols.iter().enumerate() {
            line.clear();
            let _ = write!(line, "{t}");
            for k in 0..PIANO_KEYS {
                line.push(',');
                line.push(if col >> k & 1 == 1 { '1' } else { '0' });
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, RollError> {
        let mut lines = r.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        let expected: Vec<String> = std::iter::once("tick".to_string())
            .chain((0..PIANO_KEYS).map(|k| format!("k{k}")))
            .collect();
        if header.trim_end().split(',').ne(expected.iter().map(String::as_str)) {
            return Err(RollError::Csv {
                line: 1,
                reason: "expected header tick,k0..k87".into(),
            });
        }
        let mut cols = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 2;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let tick: usize = fields
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| RollError::Csv {
                    line: line_no,
                    reason: "bad tick".into(),
                })?;
            if tick != cols.len() {
                return Err(RollError::Csv {
                    line: line_no,
                    reason: format!("expected tick {}, found {tick}", cols.len()),
                });
            }
            let mut col = 0u128;
            let mut n = 0;
            for (k, f) in fields.enumerate() {
                match f {
                    "0" => {}
                    "1" if k < PIANO_KEYS => col |= 1 << k,
                    _ => {
                        return Err(RollError::Csv {
                            line: line_no,
                            reason: format!("cell {f:?} is not binary"),
                        })
                    }
                }
                n += 1;
            }
            if n != PIANO_KEYS {
                return Err(RollError::Csv {
                    line: line_no,
                    reason: format!("expected {PIANO_KEYS} cells, found {n}"),
                });
            }
            cols.push(col);
        }
        Ok(PianoMatrix { cols })
    }
}

/// Renders a piece onto the grid: a cell is on iff some event sounds there.
pub fn piece_to_matrix(piece: &Piece) -> PianoMatrix {
    let mut m = PianoMatrix::zeros(piece.span as usize);
    for e in &piece.events {
        for t in e.onset..e.end() {
            m.cols[t as usize] |= 1 << e.pitch;
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chromosome {
    channels: usize,
    steps: usize,
    /// Channel-major: gene (c, t) lives at `c * steps + t`.
    genes: Vec<u8>,
}

impl Chromosome {
    pub fn silent(channels: usize, steps: usize) -> Self {
        assert!(channels >= 1, "a chromosome needs at least one channel");
        Chromosome {
            channels,
            steps,
            genes: vec![0; channels * steps],
        }
    }

    /// Builds a chromosome from per-channel gene rows, validating the genotype invariants.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, RollError> {
        let channels = rows.len();
        assert!(channels >= 1, "a chromosome needs at least one channel");
        let steps = rows[0].len();
        if let Some(r) = rows.iter().find(|r| r.len() != steps) {
            return Err(RollError::ShapeMismatch((channels, steps), (channels, r.len())));
        }
        let c = Chromosome {
            channels,
            steps,
            genes: rows.concat(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), RollError> {
        for step in 0..self.steps {
            for channel in 0..self.channels {
                let gene = self.gene(channel, step);
                if gene as usize > PIANO_KEYS {
                    return Err(RollError::InvalidGene { channel, step, gene });
                }
                if gene != 0 && (0..channel).any(|o| self.gene(o, step) == gene) {
                    return Err(RollError::DuplicatePitch { step, gene });
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.channels, self.steps)
    }

    pub fn gene(&self, channel: usize, step: usize) -> u8 {
        self.genes[channel * self.steps + step]
    }

    pub fn set_gene(&mut self, channel: usize, step: usize, gene: u8) {
        debug_assert!(gene as usize <= PIANO_KEYS);
        self.genes[channel * self.steps + step] = gene;
    }

    pub fn channel(&self, channel: usize) -> &[u8] {
        &self.genes[channel * self.steps..(channel + 1) * self.steps]
    }

    /// True when `gene` already sounds on another channel at `step`.
    pub fn collides(&self, channel: usize, step: usize, gene: u8) -> bool {
        gene != 0 && (0..self.channels).any(|c| c != channel && self.gene(c, step) == gene)
    }

    /// Notes of one channel as `(key, onset, duration)`, one per run of equal genes.
    pub fn runs(&self, channel: usize) -> Vec<(u8, usize, usize)> {
        let lane = self.channel(channel);
        let mut out = Vec::new();
        let mut t = 0;
        while t < lane.len() {
            let g = lane[t];
            let start = t;
            while t < lane.len() && lane[t] == g {
                t += 1;
            }
            if g != 0 {
                out.push((g - 1, start, t - start));
            }
        }
        out
    }

    /// Melody keys (channel 0), one per note, rests skipped.
    pub fn melody(&self) -> Vec<u8> {
        self.runs(0).into_iter().map(|(k, _, _)| k).collect()
    }

    /// Total note count across all channels.
    pub fn note_count(&self) -> usize {
        (0..self.channels).map(|c| self.runs(c).len()).sum()
    }

    /// Converts to a [`Piece`] with one voice per channel, on a blank 4/4 C-major template.
    pub fn to_piece(&self) -> Piece {
        let mut piece = Piece::blank(self.channels, self.steps as u32);
        for c in 0..self.channels {
            for (key, onset, duration) in self.runs(c) {
                piece.events.push(NoteEvent {
                    pitch: key,
                    onset: onset as u32,
                    duration: duration as u32,
                    voice: c as u16,
                });
            }
        }
        piece.normalize();
        piece.channels = self.channels;
        // Coarsest unit length, up to an eighth, that divides every boundary.
        let grid = piece
            .events
            .iter()
            .flat_map(|e| [e.onset, e.duration])
            .chain([piece.span])
            .fold(8u32, |g, x| if x == 0 { g } else { g.min(1 << x.trailing_zeros()) });
        piece.unit_length = crate::abc::Fraction::new(1, 64 / grid);
        piece
    }
}

pub fn chromosome_to_matrix(chrom: &Chromosome) -> PianoMatrix {
    let mut m = PianoMatrix::zeros(chrom.steps);
    for c in 0..chrom.channels {
        for (t, &g) in chrom.channel(c).iter().enumerate() {
            if g != 0 {
                m.cols[t] |= 1 << (g - 1);
            }
        }
    }
    m
}

/// Assigns each column's keys to channels in descending pitch order (channel 0 highest).
pub fn matrix_to_chromosome(m: &PianoMatrix, channels: usize) -> Result<Chromosome, RollError> {
    let mut chrom = Chromosome::silent(channels, m.ticks());
    for (t, &col) in m.cols.iter().enumerate() {
        if col.count_ones() as usize > channels {
            return Err(RollError::TooManyVoices { column: t, channels });
        }
        let mut bits = col;
        let mut c = 0;
        while bits != 0 {
            let key = 127 - bits.leading_zeros() as usize;
            chrom.set_gene(c, t, key as u8 + 1);
            bits &= !(1 << key);
            c += 1;
        }
    }
    Ok(chrom)
}

/// Genotype of a parsed piece: render to the grid, then re-assign voices by pitch.
pub fn piece_to_chromosome(piece: &Piece, channels: usize) -> Result<Chromosome, RollError> {
    matrix_to_chromosome(&piece_to_matrix(piece), channels)
}

/// Genotype keeping each voice on its own channel, so `chrom.to_piece()` maps back exactly.
pub fn voices_to_chromosome(piece: &Piece, channels: usize) -> Result<Chromosome, RollError> {
    let mut chrom = Chromosome::silent(channels, piece.span as usize);
    for e in &piece.events {
        let c = e.voice as usize;
        if c >= channels {
            return Err(RollError::TooManyVoices {
                column: e.onset as usize,
                channels,
            });
        }
        for t in e.onset as usize..e.end() as usize {
            if chrom.collides(c, t, e.pitch + 1) {
                return Err(RollError::DuplicatePitch {
                    step: t,
                    gene: e.pitch + 1,
                });
            }
            chrom.set_gene(c, t, e.pitch + 1);
        }
    }
    Ok(chrom)
}
