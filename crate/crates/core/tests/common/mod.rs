//! Independent reference implementations used as test oracles. Everything
//! here recomputes from raw pieces and genes, sharing no code with the
//! indexing or scoring paths beyond the data types.

#![allow(dead_code)]

use std::collections::BTreeSet;

use harmogen::abc::{parse_abc, Piece};
use harmogen::fitness::{HarmonyPolicy, RuleConfig};
use harmogen::listener::{ListenerNet, RatingItem};
use harmogen::pianoroll::PianoMatrix;
use harmogen::Chromosome;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Three small pieces whose note counts are easy to tally by hand.
pub const TOY_CORPUS: [&str; 3] = [
    "X:1\nK:C\nL:1/4\nC D E C |\n",
    "X:2\nK:C\nL:1/4\n[CE] [DF] z G |\n",
    "X:3\nK:G\nL:1/8\nG2 A2 B2 c2 | d4 [GBd]4 |\n",
];

pub fn toy_pieces() -> Vec<Piece> {
    TOY_CORPUS.iter().map(|t| parse_abc(t).unwrap()).collect()
}

/// Melody (voice 0) pitch sequence of a corpus piece.
fn corpus_melody(p: &Piece) -> Vec<u8> {
    let mut ev: Vec<(u32, u8)> = p
        .events
        .iter()
        .filter(|e| e.voice == 0)
        .map(|e| (e.onset, e.pitch))
        .collect();
    ev.sort();
    ev.into_iter().map(|(_, k)| k).collect()
}

/// Pitch classes sounding at tick `t` of a corpus piece.
fn corpus_column(p: &Piece, t: u32) -> BTreeSet<u8> {
    p.events
        .iter()
        .filter(|e| e.onset <= t && t < e.onset + e.duration)
        .map(|e| e.pitch)
        .collect()
}

fn pcs_of(keys: &BTreeSet<u8>) -> BTreeSet<u8> {
    // Key 0 is A0, so key 3 is a C.
    keys.iter().map(|k| (k + 9) % 12).collect()
}

/// All k-element subsets, by recursion.
pub fn k_subsets(items: &[u8], k: usize) -> Vec<BTreeSet<u8>> {
    if k == 0 {
        return vec![BTreeSet::new()];
    }
    if items.len() < k {
        return vec![];
    }
    let mut out = Vec::new();
    for mut s in k_subsets(&items[1..], k - 1) {
        s.insert(items[0]);
        out.push(s);
    }
    out.extend(k_subsets(&items[1..], k));
    out
}

pub struct CorpusFacts {
    pub ngrams: BTreeSet<Vec<u8>>,
    pub verticals: BTreeSet<BTreeSet<u8>>,
    pub notes: u64,
}

pub fn corpus_facts(pieces: &[Piece]) -> CorpusFacts {
    let mut ngrams = BTreeSet::new();
    let mut verticals = BTreeSet::new();
    let mut notes = 0;
    for p in pieces {
        notes += p.events.len() as u64;
        let mel = corpus_melody(p);
        for k in 2..=4 {
            for i in 0..mel.len().saturating_sub(k - 1) {
                ngrams.insert(mel[i..i + k].to_vec());
            }
        }
        for t in 0..p.span {
            let keys = corpus_column(p, t);
            if keys.len() < 2 {
                continue;
            }
            let pcs: Vec<u8> = pcs_of(&keys).into_iter().collect();
            for k in 2..=4 {
                verticals.extend(k_subsets(&pcs, k));
            }
        }
    }
    CorpusFacts {
        ngrams,
        verticals,
        notes,
    }
}

/// Notes of a channel as `(key, onset)`: a new note starts wherever the gene
/// changes to a sounding value.
fn channel_notes(c: &Chromosome, ch: usize) -> Vec<(u8, usize)> {
    let g = c.channel(ch);
    (0..g.len())
        .filter(|&t| g[t] != 0 && (t == 0 || g[t - 1] != g[t]))
        .map(|t| (g[t] - 1, t))
        .collect()
}

fn chrom_column(c: &Chromosome, t: usize) -> BTreeSet<u8> {
    (0..c.channels())
        .map(|ch| c.gene(ch, t))
        .filter(|&g| g != 0)
        .map(|g| g - 1)
        .collect()
}

pub struct BruteSimilarity {
    pub n: [u64; 3],
    pub s: [u64; 3],
    pub l: u64,
    pub m: u64,
    pub score: f64,
}

pub fn brute_similarity(c: &Chromosome, facts: &CorpusFacts) -> BruteSimilarity {
    let mel: Vec<u8> = channel_notes(c, 0).into_iter().map(|(k, _)| k).collect();
    let mut n = [0u64; 3];
    for k in 2..=4usize {
        for i in 0..mel.len().saturating_sub(k - 1) {
            if facts.ngrams.contains(&mel[i..i + k]) {
                n[k - 2] += 1;
            }
        }
    }
    let mut s = [0u64; 3];
    for t in 0..c.steps() {
        let keys = chrom_column(c, t);
        if keys.len() < 2 {
            continue;
        }
        let pcs: Vec<u8> = pcs_of(&keys).into_iter().collect();
        for k in 2..=4usize {
            if k_subsets(&pcs, k).iter().any(|sub| facts.verticals.contains(sub)) {
                s[k - 2] += 1;
            }
        }
    }
    let l: u64 = (0..c.channels()).map(|ch| channel_notes(c, ch).len() as u64).sum();
    let m = facts.notes;
    let num = n[0] + 10 * n[1] + 100 * n[2] + s[0] + 10 * s[1] + 100 * s[2];
    let score = if l == 0 { 0.0 } else { num as f64 / (m * l) as f64 };
    BruteSimilarity { n, s, l, m, score }
}

fn is_triad_subset(pcs: &BTreeSet<u8>) -> bool {
    (0..12u8).any(|root| {
        [[0u8, 4, 7], [0, 3, 7]].iter().any(|shape| {
            let triad: BTreeSet<u8> = shape.iter().map(|i| (root + i) % 12).collect();
            pcs.is_subset(&triad)
        })
    })
}

/// `[rhythm, melodic_interval, harmony, transition]`.
pub fn brute_violations(c: &Chromosome, facts: &CorpusFacts, rules: &RuleConfig) -> [u32; 4] {
    let mut v = [0u32; 4];
    let lane = c.channel(0);
    let bar = rules.meter_ticks as usize;
    let bars = lane.len().div_ceil(bar);
    for b in 0..bars {
        let start = b * bar;
        if start > 0 && lane[start] != 0 && lane[start] == lane[start - 1] {
            v[0] += 1;
        }
        let end = start + bar;
        if end > lane.len() && lane[start..].iter().any(|&g| g != 0) {
            v[0] += 1;
        }
    }
    let mel: Vec<u8> = channel_notes(c, 0).into_iter().map(|(k, _)| k).collect();
    for i in 1..mel.len() {
        let leap = (mel[i] as i32 - mel[i - 1] as i32).unsigned_abs();
        if leap > rules.max_melodic_leap as u32 {
            v[1] += 1;
        }
        if rules.forbid_tritone_leap && leap == 6 {
            v[1] += 1;
        }
        if rules.penalize_unseen_transition && !facts.ngrams.contains(&mel[i - 1..=i]) {
            v[3] += 1;
        }
    }
    for t in 0..c.steps() {
        let keys = chrom_column(c, t);
        if keys.len() < 2 {
            continue;
        }
        let pcs = pcs_of(&keys);
        if pcs.len() < 2 {
            continue;
        }
        let in_corpus = facts.verticals.contains(&pcs);
        let ok = match rules.allowed_vertical {
            HarmonyPolicy::CorpusSet => in_corpus,
            HarmonyPolicy::ConsonantTriad => is_triad_subset(&pcs),
            HarmonyPolicy::CorpusOrTriad => in_corpus || is_triad_subset(&pcs),
        };
        if !ok {
            v[2] += 1;
        }
    }
    v
}

/// Random valid chromosome whose pitches mostly come from `pool`.
pub fn random_chromosome<R: Rng>(rng: &mut R, max_channels: usize, max_steps: usize, pool: &[u8]) -> Chromosome {
    let channels = rng.gen_range(1..=max_channels);
    let steps = rng.gen_range(1..=max_steps);
    let mut c = Chromosome::silent(channels, steps);
    for ch in 0..channels {
        let mut t = 0;
        while t < steps {
            // Notes of 1 to 4 ticks so runs and repeated genes both occur.
            let len = rng.gen_range(1..=4).min(steps - t);
            let gene = match rng.gen_range(0..10) {
                0..=2 => 0,
                3 => rng.gen_range(1..=88),
                _ => pool[rng.gen_range(0..pool.len())] + 1,
            };
            for s in t..t + len {
                if !c.collides(ch, s, gene) {
                    c.set_gene(ch, s, gene);
                }
            }
            t += len;
        }
    }
    c
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Direct bidirectional LSTM evaluation from the flat parameter vector,
/// written without any shared helpers. `cols[t]` lists the active keys.
pub fn reference_lstm(params: &[f64], hidden: usize, cols: &[Vec<usize>]) -> f64 {
    let input = 88;
    let block = hidden * input + hidden * hidden + hidden;
    let run = |dir: usize, order: Vec<usize>| -> Vec<f64> {
        let mut h = vec![0.0; hidden];
        let mut c = vec![0.0; hidden];
        for t in order {
            let mut acts = [
                vec![0.0; hidden],
                vec![0.0; hidden],
                vec![0.0; hidden],
                vec![0.0; hidden],
            ];
            for (gate, act) in acts.iter_mut().enumerate() {
                let base = (dir * 4 + gate) * block;
                for j in 0..hidden {
                    let mut z = params[base + hidden * input + hidden * hidden + j];
                    for &k in &cols[t] {
                        z += params[base + j * input + k];
                    }
                    for m in 0..hidden {
                        z += params[base + hidden * input + j * hidden + m] * h[m];
                    }
                    act[j] = if gate == 3 { z.tanh() } else { sigmoid(z) };
                }
            }
            for j in 0..hidden {
                c[j] = acts[1][j] * c[j] + acts[0][j] * acts[3][j];
                h[j] = acts[2][j] * c[j].tanh();
            }
        }
        h
    };
    let fwd = run(0, (0..cols.len()).collect());
    let bwd = run(1, (0..cols.len()).rev().collect());
    let head = 8 * block;
    let mut y = params[head + 2 * hidden];
    for j in 0..hidden {
        y += params[head + j] * fwd[j] + params[head + hidden + j] * bwd[j];
    }
    y
}

pub fn matrix(cols: &[Vec<usize>]) -> PianoMatrix {
    let mut m = PianoMatrix::zeros(cols.len());
    for (t, keys) in cols.iter().enumerate() {
        for &k in keys {
            m.set(k, t, true);
        }
    }
    m
}

pub fn random_cols(rng: &mut ChaCha8Rng, ticks: usize) -> Vec<Vec<usize>> {
    (0..ticks)
        .map(|_| {
            let mut keys: Vec<usize> = (0..rng.gen_range(0..=4)).map(|_| rng.gen_range(0..88)).collect();
            keys.sort();
            keys.dedup();
            keys
        })
        .collect()
}

pub fn random_net(rng: &mut ChaCha8Rng, hidden: usize, scale: f64) -> ListenerNet {
    let mut net = ListenerNet::zeros(hidden);
    for p in net.params_mut() {
        *p = rng.gen_range(-scale..=scale);
    }
    net
}

/// Central differences against the analytic gradient of the batch RMSE over
/// three random sequences. Returns the first mismatch.
pub fn gradient_check(seed: u64, hidden: usize, ticks: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_net(&mut rng, hidden, 0.5);
    // Targets sit within ±1 of the outputs: an O(1) loss keeps the roundoff
    // of the differences near 1e-13, below the smallest compared component.
    let items: Vec<RatingItem> = (0..3)
        .map(|i| {
            let matrix = matrix(&random_cols(&mut rng, ticks));
            let score = net.raw_output(&matrix).unwrap() + rng.gen_range(-1.0..1.0);
            RatingItem {
                id: format!("s{i}"),
                matrix,
                score,
                raters: 1,
            }
        })
        .collect();
    let (_, grad) = net.loss_and_gradients(&items).map_err(|e| e.to_string())?;
    let h = 1e-3;
    // Every parameter that can receive gradient: all but input weights
    // of keys that never sound, which are zero analytically and numerically.
    let used: Vec<usize> = {
        let mut keys: Vec<usize> = items
            .iter()
            .flat_map(|it| (0..it.matrix.ticks()).flat_map(move |t| it.matrix.keys_at(t).map(usize::from)))
            .collect();
        keys.sort();
        keys.dedup();
        keys
    };
    let l = net.layout();
    let mut indices: Vec<usize> = Vec::new();
    for dir in 0..2 {
        for gate in 0..4 {
            for j in 0..hidden {
                indices.extend(used.iter().map(|&k| l.w(dir, gate) + j * 88 + k));
            }
            indices.extend(l.u(dir, gate)..l.b(dir, gate) + hidden);
        }
    }
    indices.extend(l.fc_w()..l.len());
    // One unused input weight, which must be exactly zero.
    if let Some(k) = (0..88).find(|k| !used.contains(k)) {
        if grad[l.w(0, 0) + k] != 0.0 {
            return Err(format!("unused key {k} got gradient {}", grad[l.w(0, 0) + k]));
        }
    }
    for i in indices {
        let loss_at = |delta: f64| {
            let mut shifted = net.clone();
            shifted.params_mut()[i] += delta;
            shifted.loss_and_gradients(&items).unwrap().0
        };
        // Five-point central stencil, truncation error O(h^4).
        let numeric = (loss_at(-2.0 * h) - 8.0 * loss_at(-h) + 8.0 * loss_at(h) - loss_at(2.0 * h)) / (12.0 * h);
        let analytic = grad[i];
        let ok = if analytic.abs() < 1e-8 {
            (numeric - analytic).abs() <= 1e-8
        } else {
            (numeric - analytic).abs() / analytic.abs().max(numeric.abs()) <= 1e-4
        };
        if !ok {
            return Err(format!("seed {seed} param {i}: analytic {analytic} numeric {numeric}"));
        }
    }
    Ok(())
}
