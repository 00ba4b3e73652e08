//! Pitch spelling and key signatures.
//!
//! Piano keys are indexed from A0 (key 0, MIDI 21) to C8 (key 87, MIDI 108).
//! In ABC, an unmarked uppercase `C` is middle C (C4, MIDI 60, key 39).

/// Number of keys on a standard piano.
pub const PIANO_KEYS: usize = 88;
/// MIDI number of piano key 0 (A0).
pub const MIDI_OFFSET: i32 = 21;

/// Semitone offset of each letter C D E F G A B above C.
const LETTER_SEMITONES: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Position of each letter (C..B) on the circle of fifths, relative to C.
const LETTER_FIFTHS: [i32; 7] = [0, 2, 4, -1, 1, 3, 5];
/// Order in which sharps are added to a key signature (F C G D A E B).
const SHARP_ORDER: [usize; 7] = [3, 0, 4, 1, 5, 2, 6];

pub(crate) fn letter_index(c: char) -> Option<usize> {
    match c.to_ascii_uppercase() {
        'C' => Some(0),
        'D' => Some(1),
        'E' => Some(2),
        'F' => Some(3),
        'G' => Some(4),
        'A' => Some(5),
        'B' => Some(6),
        _ => None,
    }
}

pub(crate) const LETTERS: [char; 7] = ['C', 'D', 'E', 'F', 'G', 'A', 'B'];

/// MIDI number for a written letter/octave/alteration (octave 4 holds middle C).
pub(crate) fn midi_of(letter: usize, octave: i32, alteration: i32) -> i32 {
    12 * (octave + 1) + LETTER_SEMITONES[letter] + alteration
}

/// Written octave that places `letter` with `alteration` on `midi`, if any.
pub(crate) fn octave_for(letter: usize, alteration: i32, midi: i32) -> Option<i32> {
    let base = midi - alteration - LETTER_SEMITONES[letter];
    if base.rem_euclid(12) == 0 {
        Some(base / 12 - 1)
    } else {
        None
    }
}

/// Per-letter alterations implied by a key signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeySignature {
    /// Positive for sharps, negative for flats.
    pub fifths: i32,
    alterations: [i32; 7],
}

impl KeySignature {
    pub fn from_fifths(fifths: i32) -> Self {
        let mut alterations = [0; 7];
        if fifths > 0 {
            for &l in SHARP_ORDER.iter().take(fifths as usize) {
                alterations[l] = 1;
            }
        } else {
            for &l in SHARP_ORDER.iter().rev().take((-fifths) as usize) {
                alterations[l] = -1;
            }
        }
        KeySignature { fifths, alterations }
    }

    /// Parses the value of a `K:` field, e.g. `G`, `Am`, `Bb`, `F#m`, `Dmix`, `none`.
    pub fn parse(text: &str) -> Option<Self> {
        let t = text.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("none") {
            return Some(Self::from_fifths(0));
        }
        let mut chars = t.chars();
        let tonic = letter_index(chars.next()?)?;
        if !t.starts_with(|c: char| c.is_ascii_uppercase()) {
            return None;
        }
        let rest = chars.as_str();
        let (acc, rest) = match rest.chars().next() {
            Some('#') => (1, &rest[1..]),
            Some('b') => (-1, &rest[1..]),
            _ => (0, rest),
        };
        let mode = rest.trim().to_ascii_lowercase();
        let offset = match mode.as_str() {
            "" | "maj" | "major" | "ion" | "ionian" => 0,
            "m" | "min" | "minor" | "aeo" | "aeolian" => -3,
            "mix" | "mixolydian" => -1,
            "dor" | "dorian" => -2,
            "phr" | "phrygian" => -4,
            "lyd" | "lydian" => 1,
            "loc" | "locrian" => -5,
            _ => return None,
        };
        let fifths = LETTER_FIFTHS[tonic] + 7 * acc + offset;
        if !(-7..=7).contains(&fifths) {
            return None;
        }
        Some(Self::from_fifths(fifths))
    }

    pub fn alteration(&self, letter: usize) -> i32 {
        self.alterations[letter]
    }
}

/// Converts a MIDI number to a piano key index, if it is on the keyboard.
pub fn midi_to_key(midi: i32) -> Option<u8> {
    let k = midi - MIDI_OFFSET;
    (0..PIANO_KEYS as i32).contains(&k).then_some(k as u8)
}

pub fn key_to_midi(key: u8) -> i32 {
    key as i32 + MIDI_OFFSET
}

/// Pitch class (0 = C) of a piano key index.
pub fn pitch_class(key: u8) -> u8 {
    (key_to_midi(key).rem_euclid(12)) as u8
}

/// Writes the octave-marked letter for `letter` in written `octave`.
pub(crate) fn write_letter(out: &mut String, letter: usize, octave: i32) {
    let c = LETTERS[letter];
    if octave >= 5 {
        out.push(c.to_ascii_lowercase());
        for _ in 5..octave {
            out.push('\'');
        }
    } else {
        out.push(c);
        for _ in octave..4 {
            out.push(',');
        }
    }
}

pub(crate) fn write_accidental(out: &mut String, alteration: i32) {
    match alteration {
        2 => out.push_str("^^"),
        1 => out.push('^'),
        0 => out.push('='),
        -1 => out.push('_'),
        -2 => out.push_str("__"),
        _ => unreachable!("alteration outside double-flat..double-sharp"),
    }
}
