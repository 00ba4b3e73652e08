mod common;

use common::*;
use harmogen::abc::pitch::{key_to_midi, midi_to_key, pitch_class};
use harmogen::abc::{emit_abc, parse_abc, Fraction, NoteEvent, Piece};
use harmogen::corpus::CorpusIndex;
use harmogen::fitness::{count_violations, ga1_objective, objective, similarity_score, HarmonyPolicy, RuleConfig};
use harmogen::Chromosome;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pool(pieces: &[Piece]) -> Vec<u8> {
    let mut keys: Vec<u8> = pieces.iter().flat_map(|p| p.events.iter().map(|e| e.pitch)).collect();
    keys.sort();
    keys.dedup();
    keys
}

#[test]
fn similarity_matches_brute_force() {
    let pieces = toy_pieces();
    let index = CorpusIndex::build(&pieces).unwrap();
    let facts = corpus_facts(&pieces);
    let keys = pool(&pieces);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonzero = 0;
    for _ in 0..300 {
        let c = random_chromosome(&mut rng, 3, 16, &keys);
        let got = similarity_score(&c, &index);
        let want = brute_similarity(&c, &facts);
        assert_eq!((got.n, got.s, got.l, got.m), (want.n, want.s, want.l, want.m), "{c:?}");
        assert!((got.score - want.score).abs() <= 1e-12);
        nonzero += (want.score > 0.0) as u32;
    }
    assert!(nonzero > 100, "generator rarely hits corpus material: {nonzero}");
}

#[test]
fn violations_match_brute_force_under_every_policy() {
    let pieces = toy_pieces();
    let index = CorpusIndex::build(&pieces).unwrap();
    let facts = corpus_facts(&pieces);
    let keys = pool(&pieces);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for policy in [
        HarmonyPolicy::CorpusSet,
        HarmonyPolicy::ConsonantTriad,
        HarmonyPolicy::CorpusOrTriad,
    ] {
        for (meter_ticks, max_leap, tritone, transition) in
            [(4, 12, true, true), (6, 5, false, true), (16, 2, true, false)]
        {
            let rules = RuleConfig {
                meter_ticks,
                max_melodic_leap: max_leap,
                forbid_tritone_leap: tritone,
                penalize_unseen_transition: transition,
                allowed_vertical: policy,
            };
            for _ in 0..40 {
                let c = random_chromosome(&mut rng, 3, 16, &keys);
                let v = count_violations(&c, &index, &rules);
                assert_eq!(
                    [v.rhythm, v.melodic_interval, v.harmony, v.transition],
                    brute_violations(&c, &facts, &rules),
                    "{c:?} {rules:?}"
                );
            }
        }
    }
}

#[test]
fn melody_leap_of_thirteen_is_one_violation() {
    let index = CorpusIndex::build(&toy_pieces()).unwrap();
    let rules = RuleConfig {
        penalize_unseen_transition: false,
        ..RuleConfig::default()
    };
    // C4 then C#5.
    let c = Chromosome::from_rows(vec![vec![40, 40, 53, 53]]).unwrap();
    assert_eq!(count_violations(&c, &index, &rules).melodic_interval, 1);
}

#[test]
fn objective_substitutions() {
    assert_eq!(objective(0.5, 0, 0.001), 1.5);
    assert!((objective(0.0, 9, 1.0) - 0.1).abs() < 1e-15);
    assert!((objective(0.02, 3, 0.001) - 0.020_333_222).abs() < 1e-9);
}

fn arb_rows() -> impl Strategy<Value = Chromosome> {
    (1usize..=3, 1usize..=16, any::<u64>()).prop_map(|(ch, steps, seed)| {
        let keys = pool(&toy_pieces());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let c = random_chromosome(&mut rng, ch, steps, &keys);
            if c.channels() == ch {
                return c;
            }
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn key_midi_bijection(key in 0u8..88) {
        prop_assert_eq!(midi_to_key(key_to_midi(key)), Some(key));
        prop_assert_eq!(pitch_class(key) as i32, key_to_midi(key) % 12);
    }

    #[test]
    fn non_melody_channel_order_is_irrelevant(c in arb_rows()) {
        prop_assume!(c.channels() == 3);
        let index = CorpusIndex::build(&toy_pieces()).unwrap();
        let swapped = Chromosome::from_rows(vec![
            c.channel(0).to_vec(), c.channel(2).to_vec(), c.channel(1).to_vec(),
        ]).unwrap();
        let a = similarity_score(&c, &index);
        let b = similarity_score(&swapped, &index);
        prop_assert_eq!((a.n, a.s, a.l), (b.n, b.s, b.l));
        prop_assert_eq!(a.score, b.score);
    }

    #[test]
    fn silencing_a_note_never_adds_matches(c in arb_rows(), pick in any::<prop::sample::Index>()) {
        let index = CorpusIndex::build(&toy_pieces()).unwrap();
        let runs: Vec<(usize, usize, usize)> = (0..c.channels())
            .flat_map(|ch| c.runs(ch).into_iter().map(move |(_, on, d)| (ch, on, d)))
            .collect();
        prop_assume!(!runs.is_empty());
        let (ch, on, d) = runs[pick.index(runs.len())];
        let mut removed = c.clone();
        for t in on..on + d {
            removed.set_gene(ch, t, 0);
        }
        let (a, b) = (similarity_score(&c, &index), similarity_score(&removed, &index));
        // Silencing melody notes joins neighbours into new windows, so only the
        // vertical counts are monotone on channel 0.
        for k in 0..3 {
            prop_assert!(b.s[k] <= a.s[k]);
            if ch > 0 {
                prop_assert!(b.n[k] <= a.n[k]);
            }
        }
    }

    #[test]
    fn objective_is_monotone(score in 0.0f64..10.0, cost in 0u32..1000, eps in 1e-6f64..1.0) {
        prop_assert!(objective(score, cost + 1, eps) < objective(score, cost, eps));
        prop_assert!(objective(score + 0.5, cost, eps) > objective(score, cost, eps));
        prop_assert_eq!(objective(score, 0, eps), score + 1.0);
    }

    #[test]
    fn breakdown_objective_identity(c in arb_rows()) {
        let index = CorpusIndex::build(&toy_pieces()).unwrap();
        let b = ga1_objective(&c, &index, &RuleConfig::default(), 0.001);
        prop_assert_eq!(b.objective, b.score + b.epsilon / (b.epsilon + b.cost as f64));
        prop_assert_eq!(b.cost, b.violations.rhythm + b.violations.melodic_interval + b.violations.harmony + b.violations.transition);
    }
}

const KEYS: [&str; 8] = ["C", "G", "D", "F", "Bb", "Am", "E", "Ebm"];
const METERS: [(u32, u32); 4] = [(4, 4), (3, 4), (6, 8), (2, 4)];

fn arb_piece() -> impl Strategy<Value = Piece> {
    let voice = prop::collection::vec((any::<bool>(), 0u8..88, 1u32..=24), 0..12);
    (
        prop::collection::vec(voice, 1..=3),
        0usize..KEYS.len(),
        0usize..METERS.len(),
        1u32..1000,
    )
        .prop_map(|(voices, key, meter, reference)| {
            let mut events = Vec::new();
            let mut span = 0;
            for (v, notes) in voices.iter().enumerate() {
                let mut t = 0;
                for &(sound, pitch, dur) in notes {
                    if sound {
                        events.push(NoteEvent {
                            pitch,
                            onset: t,
                            duration: dur,
                            voice: v as u16,
                        });
                    }
                    t += dur;
                }
                span = span.max(t);
            }
            let (n, d) = METERS[meter];
            Piece {
                reference,
                title: format!("Random {reference}"),
                meter: Fraction::new(n, d),
                unit_length: Fraction::new(1, 16),
                key: KEYS[key].to_string(),
                extra_headers: vec!["C:nobody".into()],
                events,
                channels: voices.len(),
                span,
            }
        })
}

fn event_multiset(p: &Piece) -> Vec<(u8, u32, u32, u16)> {
    let mut v: Vec<_> = p
        .events
        .iter()
        .map(|e| (e.pitch, e.onset, e.duration, e.voice))
        .collect();
    v.sort();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn abc_round_trip_keeps_every_event(p in arb_piece()) {
        let text = emit_abc(&p);
        let back = parse_abc(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(event_multiset(&back), event_multiset(&p), "{}", text);
        prop_assert_eq!(back.reference, p.reference);
        prop_assert_eq!(&back.title, &p.title);
        prop_assert_eq!(back.meter, p.meter);
        prop_assert_eq!(&back.key, &p.key);
        prop_assert_eq!(&back.extra_headers, &p.extra_headers);
        // Emitting the parsed piece again is a fixed point.
        prop_assert_eq!(emit_abc(&back), text);
    }
}
