//! Statistical reference built from a corpus of human-made pieces.
//!
//! Holds the note-occurrence distribution (pitch keys plus a rest bucket),
//! melodic n-grams of orders 2–4 taken from each piece's melody voice, and
//! vertical pitch-class combinations of sizes 2–4 taken from every column.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

use crate::abc::pitch::{pitch_class, PIANO_KEYS};
use crate::abc::Piece;
use crate::exec::{self, Exec};
use crate::pianoroll::piece_to_matrix;

pub const INDEX_MAGIC: &str = "HARMOGEN-INDEX";
pub const INDEX_VERSION: u32 = 1;

/// Smallest and largest melodic n-gram / vertical-set order indexed.
pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 4;
const ORDERS: usize = MAX_ORDER - MIN_ORDER + 1;

/// Bucket index of the rest symbol in [`NoteDistribution`].
pub const REST: usize = PIANO_KEYS;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty (no pieces or no notes)")]
    EmptyCorpus,
    #[error("index file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("index file version {found} is not supported (expected {INDEX_VERSION})")]
    Version { found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A pitch key or the rest symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NoteKey {
    Pitch(u8),
    Rest,
}

impl NoteKey {
    fn bucket(self) -> usize {
        match self {
            NoteKey::Pitch(k) => k as usize,
            NoteKey::Rest => REST,
        }
    }

    fn from_bucket(b: usize) -> Self {
        if b == REST {
            NoteKey::Rest
        } else {
            NoteKey::Pitch(b as u8)
        }
    }
}

impl std::fmt::Display for NoteKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NoteKey::Pitch(k) => write!(f, "{k}"),
            NoteKey::Rest => f.write_str("rest"),
        }
    }
}

impl std::str::FromStr for NoteKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "rest" {
            return Ok(NoteKey::Rest);
        }
        match s.parse::<u8>() {
            Ok(k) if (k as usize) < PIANO_KEYS => Ok(NoteKey::Pitch(k)),
            _ => Err(format!("bad note key {s:?}")),
        }
    }
}

/// Occurrence counts per key; probabilities are `count / total`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoteDistribution {
    counts: [u64; PIANO_KEYS + 1],
    total: u64,
    probs: [f64; PIANO_KEYS + 1],
}

impl NoteDistribution {
    fn from_counts(counts: [u64; PIANO_KEYS + 1]) -> Self {
        let total: u64 = counts.iter().sum();
        let mut probs = [0.0; PIANO_KEYS + 1];
        if total > 0 {
            for (p, &c) in probs.iter_mut().zip(&counts) {
                *p = c as f64 / total as f64;
            }
        }
        NoteDistribution { counts, total, probs }
    }

    pub fn count(&self, key: NoteKey) -> u64 {
        self.counts[key.bucket()]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn probability(&self, key: NoteKey) -> f64 {
        self.probs[key.bucket()]
    }

    /// Keys with nonzero count, pitches ascending then rest.
    pub fn support(&self) -> impl Iterator<Item = (NoteKey, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, &c)| (NoteKey::from_bucket(b), c))
    }

    fn pitch_total(&self) -> u64 {
        self.total - self.counts[REST]
    }

    fn draw(&self, mut r: u64, buckets: std::ops::Range<usize>) -> usize {
        for b in buckets {
            let c = self.counts[b];
            if r < c {
                return b;
            }
            r -= c;
        }
        unreachable!("draw exceeded total count")
    }
}

/// Bitmask of pitch classes, bit 0 = C.
pub type PcMask = u16;

pub fn pc_mask<I: IntoIterator<Item = u8>>(keys: I) -> PcMask {
    keys.into_iter().fold(0, |m, k| m | 1 << pitch_class(k))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusIndex {
    note_dist: NoteDistribution,
    /// Orders 2, 3, 4 at positions 0, 1, 2.
    melodic_ngrams: [BTreeSet<Vec<u8>>; ORDERS],
    vertical_sets: [BTreeSet<PcMask>; ORDERS],
    durations: BTreeMap<u32, u64>,
    total_notes: u64,
    piece_count: u64,
    /// For every pitch-class mask, bit `k - 2` is set when some size-`k`
    /// subset of it is a corpus vertical set.
    vertical_hits: Vec<u8>,
}

#[derive(Default)]
struct Partial {
    counts: Vec<u64>,
    melodic: [BTreeSet<Vec<u8>>; ORDERS],
    vertical: [BTreeSet<PcMask>; ORDERS],
    durations: BTreeMap<u32, u64>,
    notes: u64,
}

fn submasks_of_size(mask: PcMask, k: u32) -> impl Iterator<Item = PcMask> {
    // Walks every submask of `mask` (including 0) in decreasing order.
    let mut sub = Some(mask);
    std::iter::from_fn(move || {
        let s = sub?;
        sub = if s == 0 { None } else { Some((s - 1) & mask) };
        Some(s)
    })
    .filter(move |s| s.count_ones() == k)
}

fn scan_piece(piece: &Piece) -> Partial {
    let mut p = Partial {
        counts: vec![0; PIANO_KEYS + 1],
        ..Partial::default()
    };
    for e in &piece.events {
        p.counts[e.pitch as usize] += 1;
        *p.durations.entry(e.duration).or_default() += 1;
        p.notes += 1;
    }
    // Each maximal silent stretch of a voice counts as one rest.
    for v in 0..piece.channels {
        let mut cursor = 0;
        for e in piece.voice_events(v as u16) {
            if e.onset > cursor {
                p.counts[REST] += 1;
            }
            cursor = cursor.max(e.end());
        }
        if piece.span > cursor {
            p.counts[REST] += 1;
        }
    }

    let mut melody: Vec<_> = piece.voice_events(0).collect();
    melody.sort_by_key(|e| e.onset);
    let melody: Vec<u8> = melody.iter().map(|e| e.pitch).collect();
    for order in MIN_ORDER..=MAX_ORDER {
        for w in melody.windows(order) {
            p.melodic[order - MIN_ORDER].insert(w.to_vec());
        }
    }

    let matrix = piece_to_matrix(piece);
    let mut columns = BTreeSet::new();
    for t in 0..matrix.ticks() {
        if matrix.column(t).count_ones() >= 2 {
            columns.insert(pc_mask(matrix.keys_at(t)));
        }
    }
    for mask in columns {
        for k in MIN_ORDER..=MAX_ORDER {
            p.vertical[k - MIN_ORDER].extend(submasks_of_size(mask, k as u32));
        }
    }
    p
}

impl CorpusIndex {
    /// Indexes a corpus. Pieces are scanned independently (in parallel when
    /// enabled) and merged in input order, so the result is deterministic.
    pub fn build(pieces: &[Piece]) -> Result<Self, CorpusError> {
        Self::build_with(pieces, Exec::default())
    }

    pub fn build_with(pieces: &[Piece], exec: Exec) -> Result<Self, CorpusError> {
        if pieces.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let partials = exec::map(exec, pieces, scan_piece);
        let mut counts = [0u64; PIANO_KEYS + 1];
        let mut melodic: [BTreeSet<Vec<u8>>; ORDERS] = Default::default();
        let mut vertical: [BTreeSet<PcMask>; ORDERS] = Default::default();
        let mut durations = BTreeMap::new();
        let mut total_notes = 0;
        for p in partials {
            for (c, n) in counts.iter_mut().zip(&p.counts) {
                *c += n;
            }
            for (dst, src) in melodic.iter_mut().zip(p.melodic) {
                dst.extend(src);
            }
            for (dst, src) in vertical.iter_mut().zip(p.vertical) {
                dst.extend(src);
            }
            for (d, n) in p.durations {
                *durations.entry(d).or_default() += n;
            }
            total_notes += p.notes;
        }
        if total_notes == 0 {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self::assemble(
            counts,
            melodic,
            vertical,
            durations,
            total_notes,
            pieces.len() as u64,
        ))
    }

    fn assemble(
        counts: [u64; PIANO_KEYS + 1],
        melodic_ngrams: [BTreeSet<Vec<u8>>; ORDERS],
        vertical_sets: [BTreeSet<PcMask>; ORDERS],
        durations: BTreeMap<u32, u64>,
        total_notes: u64,
        piece_count: u64,
    ) -> Self {
        let mut vertical_hits = vec![0u8; 1 << 12];
        for (order_idx, set) in vertical_sets.iter().enumerate() {
            for &v in set {
                // Mark every superset of v.
                let free = !v & 0x0fff;
                let mut extra = free;
                loop {
                    vertical_hits[(v | extra) as usize] |= 1 << order_idx;
                    if extra == 0 {
                        break;
                    }
                    extra = (extra - 1) & free;
                }
            }
        }
        CorpusIndex {
            note_dist: NoteDistribution::from_counts(counts),
            melodic_ngrams,
            vertical_sets,
            durations,
            total_notes,
            piece_count,
            vertical_hits,
        }
    }

    pub fn note_distribution(&self) -> &NoteDistribution {
        &self.note_dist
    }

    /// `n_i / n_total` for `key`; 0 for unseen keys.
    pub fn note_probability(&self, key: NoteKey) -> f64 {
        self.note_dist.probability(key)
    }

    /// Draws a key proportionally to its corpus count.
    pub fn sample_note<R: Rng + ?Sized>(&self, rng: &mut R) -> NoteKey {
        let r = rng.gen_range(0..self.note_dist.total);
        NoteKey::from_bucket(self.note_dist.draw(r, 0..PIANO_KEYS + 1))
    }

    /// Draws a pitch key proportionally to its count, excluding rests.
    pub fn sample_pitch<R: Rng + ?Sized>(&self, rng: &mut R) -> u8 {
        let r = rng.gen_range(0..self.note_dist.pitch_total());
        self.note_dist.draw(r, 0..PIANO_KEYS) as u8
    }

    pub fn ngrams(&self, order: usize) -> &BTreeSet<Vec<u8>> {
        &self.melodic_ngrams[order - MIN_ORDER]
    }

    pub fn has_ngram(&self, window: &[u8]) -> bool {
        (MIN_ORDER..=MAX_ORDER).contains(&window.len())
            && self.melodic_ngrams[window.len() - MIN_ORDER].contains(window)
    }

    pub fn vertical_sets(&self, size: usize) -> &BTreeSet<PcMask> {
        &self.vertical_sets[size - MIN_ORDER]
    }

    pub fn has_vertical(&self, mask: PcMask) -> bool {
        let k = mask.count_ones() as usize;
        (MIN_ORDER..=MAX_ORDER).contains(&k) && self.vertical_sets[k - MIN_ORDER].contains(&mask)
    }

    /// Whether some size-`size` subset of `mask` is a corpus vertical set.
    pub fn has_vertical_subset(&self, mask: PcMask, size: usize) -> bool {
        self.vertical_hits[(mask & 0x0fff) as usize] >> (size - MIN_ORDER) & 1 == 1
    }

    pub fn durations(&self) -> &BTreeMap<u32, u64> {
        &self.durations
    }

    pub fn duration_probability(&self, ticks: u32) -> f64 {
        self.durations
            .get(&ticks)
            .map_or(0.0, |&c| c as f64 / self.total_notes as f64)
    }

    /// M: number of notes in the corpus.
    pub fn total_notes(&self) -> u64 {
        self.total_notes
    }

    pub fn piece_count(&self) -> u64 {
        self.piece_count
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{INDEX_MAGIC} {INDEX_VERSION} total_notes={} piece_count={}",
            self.total_notes, self.piece_count
        )?;
        writeln!(w, "NOTES")?;
        for (key, count) in self.note_dist.support() {
            writeln!(w, "{key},{count}")?;
        }
        for (i, set) in self.melodic_ngrams.iter().enumerate() {
            writeln!(w, "NGRAMS{}", i + MIN_ORDER)?;
            for g in set {
                writeln!(w, "{}", join(g.iter()))?;
            }
        }
        for (i, set) in self.vertical_sets.iter().enumerate() {
            writeln!(w, "VERT{}", i + MIN_ORDER)?;
            for &m in set {
                writeln!(w, "{}", join((0..12u8).filter(|pc| m >> pc & 1 == 1)))?;
            }
        }
        writeln!(w, "DURS")?;
        for (d, c) in &self.durations {
            writeln!(w, "{d},{c}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("index text is ASCII")
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        let bad = |line: usize, reason: String| CorpusError::Format { line, reason };
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let header = header?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(INDEX_MAGIC) {
            return Err(bad(1, "missing index magic".into()));
        }
        let version: u32 = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(1, "missing version".into()))?;
        if version != INDEX_VERSION {
            return Err(CorpusError::Version { found: version });
        }
        let mut total_notes = None;
        let mut piece_count = None;
        for f in fields {
            match f.split_once('=') {
                Some(("total_notes", v)) => total_notes = v.parse().ok(),
                Some(("piece_count", v)) => piece_count = v.parse().ok(),
                _ => return Err(bad(1, format!("unknown header field {f:?}"))),
            }
        }
        let total_notes: u64 = total_notes.ok_or_else(|| bad(1, "missing total_notes".into()))?;
        let piece_count = piece_count.ok_or_else(|| bad(1, "missing piece_count".into()))?;

        let mut counts = [0u64; PIANO_KEYS + 1];
        let mut melodic: [BTreeSet<Vec<u8>>; ORDERS] = Default::default();
        let mut vertical: [BTreeSet<PcMask>; ORDERS] = Default::default();
        let mut durations = BTreeMap::new();
        let mut section = String::new();
        for (i, line) in lines {
            let line = line?;
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.chars().next().is_some_and(|c| c.is_ascii_uppercase()) {
                section = line.to_string();
                continue;
            }
            let nums = || -> Result<Vec<u64>, CorpusError> {
                line.split(',')
                    .map(|v| v.parse().map_err(|_| bad(n, format!("bad number {v:?}"))))
                    .collect()
            };
            match section.as_str() {
                "NOTES" => {
                    let (k, c) = line
                        .split_once(',')
                        .ok_or_else(|| bad(n, "expected key,count".into()))?;
                    let key: NoteKey = k.parse().map_err(|e| bad(n, e))?;
                    counts[key.bucket()] = c.parse().map_err(|_| bad(n, "bad count".into()))?;
                }
                s if s.starts_with("NGRAMS") || s.starts_with("VERT") => {
                    let order: usize = s.trim_start_matches(char::is_alphabetic).parse().unwrap_or(0);
                    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
                        return Err(bad(n, format!("unknown section {s}")));
                    }
                    let v = nums()?;
                    if v.len() != order {
                        return Err(bad(n, format!("expected {order} values")));
                    }
                    if s.starts_with("NGRAMS") {
                        if v.iter().any(|&k| k as usize >= PIANO_KEYS) {
                            return Err(bad(n, "pitch out of range".into()));
                        }
                        melodic[order - MIN_ORDER].insert(v.iter().map(|&k| k as u8).collect());
                    } else {
                        if v.iter().any(|&pc| pc >= 12) {
                            return Err(bad(n, "pitch class out of range".into()));
                        }
                        let mask = v.iter().fold(0u16, |m, &pc| m | 1 << pc);
                        if mask.count_ones() as usize != order {
                            return Err(bad(n, "repeated pitch class".into()));
                        }
                        vertical[order - MIN_ORDER].insert(mask);
                    }
                }
                "DURS" => {
                    let v = nums()?;
                    if v.len() != 2 {
                        return Err(bad(n, "expected ticks,count".into()));
                    }
                    durations.insert(v[0] as u32, v[1]);
                }
                s => return Err(bad(n, format!("data outside a known section ({s:?})"))),
            }
        }
        if total_notes == 0 {
            return Err(CorpusError::EmptyCorpus);
        }
        Ok(Self::assemble(
            counts,
            melodic,
            vertical,
            durations,
            total_notes,
            piece_count,
        ))
    }

    /// Note-probability histogram as `key,probability` CSV rows.
    pub fn write_histogram<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "key,probability")?;
        for (key, _) in self.note_dist.support() {
            writeln!(w, "{key},{}", self.note_dist.probability(key))?;
        }
        Ok(())
    }
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
