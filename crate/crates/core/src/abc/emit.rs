use std::collections::HashMap;
use std::fmt::Write as _;

use super::pitch::{key_to_midi, octave_for, write_accidental, write_letter, KeySignature};
use super::{NoteEvent, Piece};

const BARS_PER_LINE: u32 = 4;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn write_length(out: &mut String, ticks: u32, unit: u32) {
    let g = gcd(ticks, unit);
    let (num, den) = (ticks / g, unit / g);
    match (num, den) {
        (1, 1) => {}
        (n, 1) => {
            let _ = write!(out, "{n}");
        }
        (1, d) => {
            let _ = write!(out, "/{d}");
        }
        (n, d) => {
            let _ = write!(out, "{n}/{d}");
        }
    }
}

/// Chooses a spelling for `midi` given the key and the accidentals already
/// written in this bar, preferring one that needs no accidental.
fn write_pitch(out: &mut String, midi: i32, key: &KeySignature, bar: &mut HashMap<(usize, i32), i32>) {
    for letter in 0..7 {
        for alt in -2..=2 {
            let Some(octave) = octave_for(letter, alt, midi) else {
                continue;
            };
            let implied = bar
                .get(&(letter, octave))
                .copied()
                .unwrap_or_else(|| key.alteration(letter));
            if implied == alt {
                write_letter(out, letter, octave);
                return;
            }
        }
    }
    let preferred: [i32; 3] = if key.fifths >= 0 { [0, 1, -1] } else { [0, -1, 1] };
    for alt in preferred {
        for letter in 0..7 {
            if let Some(octave) = octave_for(letter, alt, midi) {
                write_accidental(out, alt);
                write_letter(out, letter, octave);
                bar.insert((letter, octave), alt);
                return;
            }
        }
    }
    unreachable!("every MIDI number has a natural, sharp or flat spelling");
}

struct VoiceWriter<'a> {
    out: &'a mut String,
    key: &'a KeySignature,
    unit: u32,
    bar_ticks: u32,
    bar: HashMap<(usize, i32), i32>,
    cursor: u32,
    bars_written: u32,
}

impl VoiceWriter<'_> {
    fn close_bar(&mut self) {
        if self.cursor > 0 && self.cursor.is_multiple_of(self.bar_ticks) {
            self.out.push_str(" |");
            self.bar.clear();
            self.bars_written += 1;
            self.out.push(if self.bars_written.is_multiple_of(BARS_PER_LINE) {
                '\n'
            } else {
                ' '
            });
        }
    }

    fn rest_until(&mut self, until: u32) {
        while self.cursor < until {
            let to_bar = self.bar_ticks - self.cursor % self.bar_ticks;
            let len = to_bar.min(until - self.cursor);
            self.out.push('z');
            write_length(self.out, len, self.unit);
            self.cursor += len;
            self.close_bar();
        }
    }

    fn note(&mut self, e: &NoteEvent) {
        self.rest_until(e.onset);
        write_pitch(self.out, key_to_midi(e.pitch), self.key, &mut self.bar);
        write_length(self.out, e.duration, self.unit);
        self.cursor = e.end();
        // A note that straddles a bar boundary leaves that bar line unwritten.
        if self.cursor.is_multiple_of(self.bar_ticks) {
            self.close_bar();
        } else {
            self.out.push(' ');
        }
    }
}

fn emit_voice(out: &mut String, piece: &Piece, events: &[&NoteEvent], key: &KeySignature) {
    let mut w = VoiceWriter {
        out,
        key,
        unit: piece.unit_length.ticks().unwrap_or(1).max(1),
        bar_ticks: piece.bar_ticks(),
        bar: HashMap::new(),
        cursor: 0,
        bars_written: 0,
    };
    for e in events {
        w.note(e);
    }
    w.rest_until(piece.span);
    let trimmed = w.out.trim_end().len();
    w.out.truncate(trimmed);
    w.out.push('\n');
}

/// Serializes a piece. Each voice is written as its own `V:` part so that
/// re-parsing reproduces the same event multiset.
pub fn emit_abc(piece: &Piece) -> String {
    let key = KeySignature::parse(&piece.key).unwrap_or_else(|| KeySignature::from_fifths(0));
    let mut out = String::new();
    let _ = writeln!(out, "X:{}", piece.reference);
    if !piece.title.is_empty() {
        let _ = writeln!(out, "T:{}", piece.title);
    }
    for h in &piece.extra_headers {
        let _ = writeln!(out, "{h}");
    }
    let _ = writeln!(out, "M:{}", piece.meter);
    let _ = writeln!(out, "L:{}", piece.unit_length);
    let _ = writeln!(out, "K:{}", piece.key);

    let channels = piece.channels.max(1);
    for voice in 0..channels {
        if channels > 1 {
            let _ = writeln!(out, "V:{}", voice + 1);
        }
        let mut events: Vec<&NoteEvent> = piece.voice_events(voice as u16).collect();
        events.sort_by_key(|e| e.onset);
        emit_voice(&mut out, piece, &events, &key);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::parse_abc;
    use super::*;

    #[test]
    fn empty_piece_is_rests() {
        let mut p = Piece::blank(1, 96);
        p.unit_length = super::super::Fraction::new(1, 16);
        let text = emit_abc(&p);
        let body: String = text.lines().skip_while(|l| !l.starts_with("K:")).skip(1).collect();
        assert!(body.chars().all(|c| "z0123456789/| ".contains(c)), "{body}");
        let back = parse_abc(&text).unwrap();
        assert!(back.events.is_empty());
        assert_eq!(back.span, 96);
    }

    #[test]
    fn chord_round_trips() {
        let p = parse_abc("X:1\nK:C\nL:1/8\n[CEG]").unwrap();
        let back = parse_abc(&emit_abc(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn accidentals_follow_bar_state() {
        let p = parse_abc("X:1\nK:G\nL:1/4\n=F F ^F =F | F2 _B c").unwrap();
        let text = emit_abc(&p);
        assert_eq!(parse_abc(&text).unwrap().events, p.events);
    }

    #[test]
    fn straddling_notes_round_trip() {
        let p = parse_abc("X:1\nM:3/4\nK:Bb\nL:1/8\nB4 c4 d2 | e/ f/ z3").unwrap();
        let back = parse_abc(&emit_abc(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn length_formatting() {
        let mut s = String::new();
        write_length(&mut s, 4, 8);
        s.push(' ');
        write_length(&mut s, 12, 8);
        s.push(' ');
        write_length(&mut s, 16, 8);
        s.push(' ');
        write_length(&mut s, 8, 8);
        assert_eq!(s, "/2 3/2 2 ");
    }
}
