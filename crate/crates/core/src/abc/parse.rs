use std::collections::HashMap;

use super::pitch::{letter_index, midi_of, midi_to_key, KeySignature};
use super::{AbcError, Fraction, NoteEvent, Piece};

/// One timed slot of a voice part: a single note or a chord.
struct Slot {
    onset: u32,
    duration: u32,
    /// Pitches sorted descending; empty slots are never stored.
    pitches: Vec<u8>,
}

#[derive(Default)]
struct Part {
    cursor: u32,
    slots: Vec<Slot>,
    /// Accidentals written earlier in the current bar, keyed by (letter, octave).
    bar_accidentals: HashMap<(usize, i32), i32>,
}

impl Part {
    fn lanes(&self) -> usize {
        self.slots.iter().map(|s| s.pitches.len()).max().unwrap_or(0).max(1)
    }
}

struct Header {
    reference: Option<u32>,
    title: Option<String>,
    meter: Option<Fraction>,
    unit_length: Option<Fraction>,
    key: Option<String>,
    extra: Vec<String>,
}

/// Parses one ABC tune into a [`Piece`] on the 1/64-whole-note grid.
pub fn parse_abc(text: &str) -> Result<Piece, AbcError> {
    let (header, body_start) = parse_header(text)?;
    let reference = header
        .reference
        .ok_or_else(|| AbcError::MalformedHeader("missing X: field".into()))?;
    let key_text = header
        .key
        .ok_or_else(|| AbcError::MalformedHeader("missing K: field".into()))?;
    let key = KeySignature::parse(&key_text)
        .ok_or_else(|| AbcError::MalformedHeader(format!("unrecognized key {key_text:?}")))?;
    let meter = header.meter.unwrap_or(Fraction::new(4, 4));
    if meter.ticks().is_none() {
        return Err(AbcError::MalformedHeader(format!("meter {meter} is off the 1/64 grid")));
    }
    let unit_length = header.unit_length.unwrap_or_else(|| {
        if (meter.num as f64) / (meter.den as f64) < 0.75 {
            Fraction::new(1, 16)
        } else {
            Fraction::new(1, 8)
        }
    });
    if unit_length.ticks().is_none_or(|t| t == 0) {
        return Err(AbcError::MalformedHeader(format!(
            "unit length {unit_length} is off the 1/64 grid"
        )));
    }

    let mut body = BodyParser {
        text,
        pos: body_start,
        key,
        unit_length,
        parts: Vec::new(),
        part_names: Vec::new(),
        current: 0,
    };
    body.run()?;

    let mut events = Vec::new();
    let mut lane = 0usize;
    let mut span = 0;
    for part in &body.parts {
        for slot in &part.slots {
            for (i, &pitch) in slot.pitches.iter().enumerate() {
                events.push(NoteEvent {
                    pitch,
                    onset: slot.onset,
                    duration: slot.duration,
                    voice: (lane + i) as u16,
                });
            }
        }
        lane += part.lanes();
        span = span.max(part.cursor);
    }

    let mut piece = Piece {
        reference,
        title: header.title.unwrap_or_default(),
        meter,
        unit_length,
        key: key_text,
        extra_headers: header.extra,
        events,
        channels: lane.max(1),
        span,
    };
    piece.normalize();
    Ok(piece)
}

/// Splits a multi-tune file at each line starting with `X:`. Text before the
/// first tune is dropped.
pub fn split_tunes(text: &str) -> Vec<&str> {
    let mut starts: Vec<usize> = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with("X:") {
            starts.push(offset);
        }
        offset += line.len();
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| &text[s..starts.get(i + 1).copied().unwrap_or(text.len())])
        .collect()
}

fn parse_fraction(value: &str) -> Option<Fraction> {
    let v = value.trim();
    match v {
        "C" => return Some(Fraction::new(4, 4)),
        "C|" => return Some(Fraction::new(2, 2)),
        _ => {}
    }
    let (n, d) = v.split_once('/')?;
    let num = n.trim().parse().ok()?;
    let den = d.trim().parse().ok()?;
    (num > 0 && den > 0).then_some(Fraction::new(num, den))
}

fn is_field_line(line: &str) -> bool {
    let b = line.as_bytes();
    b.len() >= 2 && b[0].is_ascii_alphabetic() && b[1] == b':'
}

fn parse_header(text: &str) -> Result<(Header, usize), AbcError> {
    let mut header = Header {
        reference: None,
        title: None,
        meter: None,
        unit_length: None,
        key: None,
        extra: Vec::new(),
    };
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line_start = offset;
        offset += raw.len();
        let line = raw.trim_end_matches(['\n', '\r']);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        // Field lines directly after K: still belong to the header.
        if header.key.is_some() && (!is_field_line(trimmed) || trimmed.starts_with("V:")) {
            return Ok((header, line_start));
        }
        if !is_field_line(trimmed) {
            return Err(AbcError::MalformedHeader(format!(
                "expected a header field at byte {line_start}, found {trimmed:?}"
            )));
        }
        let value = trimmed[2..].trim();
        match trimmed.as_bytes()[0] {
            b'X' => {
                let n = value
                    .parse()
                    .map_err(|_| AbcError::MalformedHeader(format!("bad reference number {value:?}")))?;
                header.reference = Some(n);
            }
            b'T' if header.title.is_none() => header.title = Some(value.to_string()),
            b'M' => {
                header.meter = Some(
                    parse_fraction(value).ok_or_else(|| AbcError::MalformedHeader(format!("bad meter {value:?}")))?,
                )
            }
            b'L' => {
                header.unit_length = Some(
                    parse_fraction(value)
                        .ok_or_else(|| AbcError::MalformedHeader(format!("bad unit length {value:?}")))?,
                )
            }
            b'K' => header.key = Some(value.to_string()),
            _ => header.extra.push(trimmed.to_string()),
        }
    }
    Ok((header, text.len()))
}

struct BodyParser<'a> {
    text: &'a str,
    pos: usize,
    key: KeySignature,
    unit_length: Fraction,
    parts: Vec<Part>,
    part_names: Vec<String>,
    current: usize,
}

impl BodyParser<'_> {
    fn peek(&self) -> Option<u8> {
        self.text.as_bytes().get(self.pos).copied()
    }

    fn peek_at(&self, ahead: usize) -> Option<u8> {
        self.text.as_bytes().get(self.pos + ahead).copied()
    }

    fn unsupported(&self, at: usize) -> AbcError {
        let token = self.text[at..].chars().next().map(String::from).unwrap_or_default();
        AbcError::UnsupportedToken { position: at, token }
    }

    fn at_line_start(&self) -> bool {
        self.pos == 0 || self.text.as_bytes()[self.pos - 1] == b'\n'
    }

    fn part(&mut self) -> &mut Part {
        if self.parts.is_empty() {
            self.parts.push(Part::default());
            self.part_names.push(String::new());
            self.current = 0;
        }
        &mut self.parts[self.current]
    }

    fn switch_voice(&mut self, name: &str) {
        match self.part_names.iter().position(|n| n == name) {
            Some(i) => self.current = i,
            None => {
                // Notes written before the first V: line form an implicit part.
                self.parts.push(Part::default());
                self.part_names.push(name.to_string());
                self.current = self.parts.len() - 1;
            }
        }
    }

    fn run(&mut self) -> Result<(), AbcError> {
        while let Some(c) = self.peek() {
            if self.at_line_start() {
                let line_end = self.text[self.pos..]
                    .find('\n')
                    .map_or(self.text.len(), |i| self.pos + i);
                let line = self.text[self.pos..line_end].trim();
                if let Some(v) = line.strip_prefix("V:") {
                    let name = v.split_whitespace().next().unwrap_or("").to_string();
                    self.switch_voice(&name);
                    self.pos = line_end;
                    continue;
                }
                if is_field_line(line) {
                    return Err(self.unsupported(self.pos));
                }
            }
            match c {
                b' ' | b'\t' | b'\r' | b'\n' | b'`' | b'\\' => self.pos += 1,
                b'%' => {
                    self.pos = self.text[self.pos..]
                        .find('\n')
                        .map_or(self.text.len(), |i| self.pos + i);
                }
                b'|' => {
                    self.pos += 1;
                    if matches!(self.peek(), Some(b'|') | Some(b']')) {
                        self.pos += 1;
                    }
                    if self.peek() == Some(b':') {
                        return Err(self.unsupported(self.pos));
                    }
                    self.part().bar_accidentals.clear();
                }
                b'[' if self.peek_at(1) == Some(b'|') => {
                    self.pos += 2;
                    self.part().bar_accidentals.clear();
                }
                b'[' => self.chord()?,
                b'z' => {
                    let at = self.pos;
                    self.pos += 1;
                    let duration = self.length(at)?;
                    self.part().cursor += duration;
                }
                b'^' | b'_' | b'=' | b'A'..=b'G' | b'a'..=b'g' => {
                    let at = self.pos;
                    let pitch = self.note_pitch()?;
                    let duration = self.length(at)?;
                    let part = self.part();
                    part.slots.push(Slot {
                        onset: part.cursor,
                        duration,
                        pitches: vec![pitch],
                    });
                    part.cursor += duration;
                }
                _ => return Err(self.unsupported(self.pos)),
            }
        }
        Ok(())
    }

    fn chord(&mut self) -> Result<(), AbcError> {
        let at = self.pos;
        self.pos += 1;
        let mut notes = Vec::new();
        loop {
            match self.peek() {
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(b'^' | b'_' | b'=' | b'A'..=b'G' | b'a'..=b'g') => {
                    let note_at = self.pos;
                    let pitch = self.note_pitch()?;
                    let inner = self.multiplier(note_at)?;
                    notes.push((pitch, inner));
                }
                None => return Err(self.unsupported(at)),
                Some(_) => return Err(self.unsupported(self.pos)),
            }
        }
        if notes.is_empty() || notes.iter().any(|&(_, m)| m != notes[0].1) {
            // Mixed-length chords would overlap within a lane.
            return Err(self.unsupported(at));
        }
        let (inner_num, inner_den) = notes[0].1;
        let (outer_num, outer_den) = self.multiplier(at)?;
        let duration = self.ticks(at, inner_num * outer_num, inner_den * outer_den)?;
        let mut pitches: Vec<u8> = notes.into_iter().map(|(p, _)| p).collect();
        pitches.sort_unstable_by(|a, b| b.cmp(a));
        let part = self.part();
        part.slots.push(Slot {
            onset: part.cursor,
            duration,
            pitches,
        });
        part.cursor += duration;
        Ok(())
    }

    /// Reads accidentals, a letter and octave marks; returns a piano key index.
    fn note_pitch(&mut self) -> Result<u8, AbcError> {
        let at = self.pos;
        let mut explicit: Option<i32> = None;
        while let Some(c @ (b'^' | b'_' | b'=')) = self.peek() {
            let step = match c {
                b'^' => 1,
                b'_' => -1,
                _ => 0,
            };
            explicit = Some(match (explicit, step) {
                (None, s) => s,
                (Some(a), s) if a == s && s != 0 && a.abs() < 2 => a + s,
                _ => return Err(self.unsupported(self.pos)),
            });
            self.pos += 1;
        }
        let letter_char = match self.peek() {
            Some(c @ (b'A'..=b'G' | b'a'..=b'g')) => c as char,
            _ => return Err(self.unsupported(self.pos)),
        };
        self.pos += 1;
        let letter = letter_index(letter_char).expect("matched letter");
        let mut octave = if letter_char.is_ascii_lowercase() { 5 } else { 4 };
        while let Some(c @ (b'\'' | b',')) = self.peek() {
            octave += if c == b'\'' { 1 } else { -1 };
            self.pos += 1;
        }
        let part = self.part();
        let alteration = match explicit {
            Some(a) => {
                part.bar_accidentals.insert((letter, octave), a);
                a
            }
            None => match part.bar_accidentals.get(&(letter, octave)) {
                Some(&a) => a,
                None => self.key.alteration(letter),
            },
        };
        let midi = midi_of(letter, octave, alteration);
        midi_to_key(midi).ok_or(AbcError::PitchOutOfRange { position: at, midi })
    }

    /// Reads an optional length suffix such as `2`, `/`, `3/2`, `//`.
    fn multiplier(&mut self, at: usize) -> Result<(u32, u32), AbcError> {
        let mut num = 1u32;
        let digits = self.digits();
        if let Some(n) = digits {
            num = n;
        }
        let mut den = 1u32;
        while self.peek() == Some(b'/') {
            self.pos += 1;
            den = den.saturating_mul(self.digits().unwrap_or(2));
        }
        if num == 0 || den == 0 {
            return Err(self.unsupported(at));
        }
        Ok((num, den))
    }

    fn digits(&mut self) -> Option<u32> {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.text[start..self.pos].parse().unwrap_or(u32::MAX))
    }

    fn length(&mut self, at: usize) -> Result<u32, AbcError> {
        let (num, den) = self.multiplier(at)?;
        self.ticks(at, num, den)
    }

    fn ticks(&self, at: usize, num: u32, den: u32) -> Result<u32, AbcError> {
        let length = Fraction::new(
            self.unit_length.num.saturating_mul(num),
            self.unit_length.den.saturating_mul(den),
        );
        match length.ticks() {
            Some(t) if t >= 1 => Ok(t),
            _ => Err(AbcError::OffGridDuration {
                position: at,
                length: length.to_string(),
            }),
        }
    }
}
