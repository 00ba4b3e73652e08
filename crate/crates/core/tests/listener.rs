mod common;

use common::{gradient_check, matrix, random_cols, random_net, reference_lstm, sigmoid};
use harmogen::listener::{clamp_score, ListenerNet, SCORE_MAX};
use harmogen::pianoroll::PianoMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two hidden units, three ticks, no recurrence, every value written out.
#[test]
fn hand_unrolled_two_unit_network() {
    let mut net = ListenerNet::zeros(2);
    let l = net.layout();
    let p = net.params_mut();
    // Key 10 drives both directions; gate biases differ per unit.
    for dir in 0..2 {
        for gate in 0..4 {
            for j in 0..2 {
                p[l.w(dir, gate) + j * 88 + 10] = 0.5 + 0.1 * gate as f64 - 0.2 * j as f64 + 0.05 * dir as f64;
                p[l.b(dir, gate) + j] = -0.3 + 0.2 * j as f64 + 0.1 * gate as f64;
            }
        }
    }
    let fc = l.fc_w();
    p[fc..fc + 4].copy_from_slice(&[1.5, -2.0, 0.75, 3.0]);
    p[l.fc_b()] = 0.25;

    // Ticks 0 and 2 press key 10; tick 1 is silent.
    let m = matrix(&[vec![10], vec![], vec![10]]);
    let active = [1.0, 0.0, 1.0];

    let pre = |dir: usize, gate: usize, j: usize, x: f64| {
        (0.5 + 0.1 * gate as f64 - 0.2 * j as f64 + 0.05 * dir as f64) * x + (-0.3 + 0.2 * j as f64 + 0.1 * gate as f64)
    };
    let unit = |dir: usize, j: usize, order: [usize; 3]| {
        let mut c = 0.0;
        let mut h = 0.0;
        for t in order {
            let x = active[t];
            let i = sigmoid(pre(dir, 0, j, x));
            let f = sigmoid(pre(dir, 1, j, x));
            let o = sigmoid(pre(dir, 2, j, x));
            let g = pre(dir, 3, j, x).tanh();
            c = f * c + i * g;
            h = o * c.tanh();
        }
        h
    };
    let f0 = unit(0, 0, [0, 1, 2]);
    let f1 = unit(0, 1, [0, 1, 2]);
    let b0 = unit(1, 0, [2, 1, 0]);
    let b1 = unit(1, 1, [2, 1, 0]);
    let want = 0.25 + 1.5 * f0 - 2.0 * f1 + 0.75 * b0 + 3.0 * b1;

    let feats = net.features(&m).unwrap();
    for (got, want) in feats.iter().zip([f0, f1, b0, b1]) {
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }
    assert!((net.raw_output(&m).unwrap() - want).abs() < 1e-13);
}

#[test]
fn raw_output_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..60 {
        let hidden = 1 + case % 8;
        let net = random_net(&mut rng, hidden, 1.0);
        let ticks = rng.gen_range(1..=10);
        let cols = random_cols(&mut rng, ticks);
        let got = net.raw_output(&matrix(&cols)).unwrap();
        let want = reference_lstm(net.params(), hidden, &cols);
        assert!(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            "case {case}: {got} vs {want}"
        );
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..4 {
        gradient_check(seed, 1 + seed as usize * 2, 2 + seed as usize).unwrap();
    }
}

#[test]
fn swapping_directions_equals_reversing_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let hidden = rng.gen_range(1..=6);
        let mut net = random_net(&mut rng, hidden, 1.0);
        // Swapping exchanges the feature halves, so use a head that weighs both alike.
        let l = net.layout();
        net.params_mut()
            .copy_within(l.fc_w()..l.fc_w() + hidden, l.fc_w() + hidden);
        let ticks = rng.gen_range(1..=9);
        let cols = random_cols(&mut rng, ticks);
        let reversed: Vec<Vec<usize>> = cols.iter().rev().cloned().collect();
        let a = net.raw_output(&matrix(&cols)).unwrap();
        let b = net.swapped_directions().raw_output(&matrix(&reversed)).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = ListenerNet::new(7, 42);
    let path = dir.path().join("net.ckpt");
    net.save(&path).unwrap();
    let back = ListenerNet::load(&path).unwrap();
    assert_eq!(back.fingerprint(), net.fingerprint());
    for _ in 0..20 {
        let m = matrix(&random_cols(&mut rng, 12));
        assert_eq!(
            net.raw_output(&m).unwrap().to_bits(),
            back.raw_output(&m).unwrap().to_bits()
        );
    }
    assert!(ListenerNet::load_expecting(&path, 8).is_err());
}

#[test]
fn empty_sequence_is_rejected() {
    assert!(ListenerNet::new(3, 0).forward(&PianoMatrix::zeros(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clamped_score_stays_in_range(raw in prop::num::f64::ANY) {
        let s = clamp_score(raw);
        prop_assert!((0.0..=SCORE_MAX).contains(&s));
    }

    #[test]
    fn forward_stays_in_range(seed in any::<u64>(), hidden in 1usize..6, scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = random_net(&mut rng, hidden, scale);
        let l = net.layout();
        net.params_mut()[l.fc_b()] = rng.gen_range(-500.0..500.0);
        let ticks = rng.gen_range(1..8);
        let m = matrix(&random_cols(&mut rng, ticks));
        let s = net.forward(&m).unwrap();
        prop_assert!((0.0..=SCORE_MAX).contains(&s));
    }
}
