//! Objective values: rule-violation cost, corpus similarity, the stage-one
//! objective `score + e/(e + cost)` and the stage-two weighted composite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{pc_mask, CorpusIndex, PcMask, MAX_ORDER, MIN_ORDER};
use crate::pianoroll::{chromosome_to_matrix, Chromosome};

pub const DEFAULT_EPSILON: f64 = 0.001;

#[derive(Debug, Error, PartialEq)]
pub enum FitnessError {
    #[error("invalid rule config: {0}")]
    Rules(String),
    #[error("invalid composite config: {0}")]
    Composite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HarmonyPolicy {
    /// The column's pitch-class set must be a corpus vertical set.
    CorpusSet,
    /// The column's pitch-class set must fit inside a major or minor triad.
    ConsonantTriad,
    CorpusOrTriad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    pub max_melodic_leap: u8,
    pub forbid_tritone_leap: bool,
    pub meter_ticks: u32,
    pub allowed_vertical: HarmonyPolicy,
    pub penalize_unseen_transition: bool,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig {
            max_melodic_leap: 12,
            forbid_tritone_leap: true,
            meter_ticks: 64,
            allowed_vertical: HarmonyPolicy::CorpusOrTriad,
            penalize_unseen_transition: true,
        }
    }
}

impl RuleConfig {
    pub fn validate(&self) -> Result<(), FitnessError> {
        if self.max_melodic_leap < 1 {
            return Err(FitnessError::Rules("max_melodic_leap must be >= 1".into()));
        }
        if self.meter_ticks < 1 {
            return Err(FitnessError::Rules("meter_ticks must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub rhythm: u32,
    pub melodic_interval: u32,
    pub harmony: u32,
    pub transition: u32,
}

impl Violations {
    pub fn total(&self) -> u32 {
        self.rhythm + self.melodic_interval + self.harmony + self.transition
    }
}

/// Major and minor triads on every root, as pitch-class masks.
fn triads() -> impl Iterator<Item = PcMask> {
    (0..12u16).flat_map(|root| {
        [4u16, 3].map(|third| {
            let pcs = [root, (root + third) % 12, (root + 7) % 12];
            pcs.iter().fold(0, |m, pc| m | 1 << pc)
        })
    })
}

fn inside_triad(mask: PcMask) -> bool {
    triads().any(|t| mask & !t == 0)
}

fn vertical_allowed(mask: PcMask, index: &CorpusIndex, policy: HarmonyPolicy) -> bool {
    if mask.count_ones() < 2 {
        return true;
    }
    match policy {
        HarmonyPolicy::CorpusSet => index.has_vertical(mask),
        HarmonyPolicy::ConsonantTriad => inside_triad(mask),
        HarmonyPolicy::CorpusOrTriad => index.has_vertical(mask) || inside_triad(mask),
    }
}

fn column_pcs(col: u128) -> PcMask {
    let mut mask = 0;
    let mut bits = col;
    while bits != 0 {
        let k = bits.trailing_zeros() as u8;
        mask |= pc_mask([k]);
        bits &= bits - 1;
    }
    mask
}

pub fn count_violations(chrom: &Chromosome, index: &CorpusIndex, rules: &RuleConfig) -> Violations {
    let mut v = Violations::default();
    let lane = chrom.channel(0);
    let bar = rules.meter_ticks as usize;

    // Rhythm: a melody note held across a bar line, and sounding content in a short final bar.
    let mut b = bar;
    while b < lane.len() {
        if lane[b] != 0 && lane[b - 1] == lane[b] {
            v.rhythm += 1;
        }
        b += bar;
    }
    let tail = lane.len() % bar;
    if tail != 0 && lane[lane.len() - tail..].iter().any(|&g| g != 0) {
        v.rhythm += 1;
    }

    let melody = chrom.melody();
    for pair in melody.windows(2) {
        let leap = pair[0].abs_diff(pair[1]);
        if leap > rules.max_melodic_leap {
            v.melodic_interval += 1;
        }
        if rules.forbid_tritone_leap && leap == 6 {
            v.melodic_interval += 1;
        }
        if rules.penalize_unseen_transition && !index.has_ngram(pair) {
            v.transition += 1;
        }
    }

    let matrix = chromosome_to_matrix(chrom);
    for &col in matrix.columns() {
        if col.count_ones() >= 2 && !vertical_allowed(column_pcs(col), index, rules.allowed_vertical) {
            v.harmony += 1;
        }
    }
    v
}

/// Match counts behind the similarity score.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Similarity {
    pub score: f64,
    /// N2, N3, N4: melody windows found among corpus n-grams.
    pub n: [u64; 3],
    /// S2, S3, S4: columns holding a corpus vertical set of that size.
    pub s: [u64; 3],
    /// L: notes in the chromosome, all channels.
    pub l: u64,
    /// M: notes in the corpus.
    pub m: u64,
}

const WEIGHTS: [u64; 3] = [1, 10, 100];

pub fn similarity_score(chrom: &Chromosome, index: &CorpusIndex) -> Similarity {
    let melody = chrom.melody();
    let mut n = [0u64; 3];
    for order in MIN_ORDER..=MAX_ORDER {
        n[order - MIN_ORDER] = melody.windows(order).filter(|w| index.has_ngram(w)).count() as u64;
    }
    let matrix = chromosome_to_matrix(chrom);
    let mut s = [0u64; 3];
    for &col in matrix.columns() {
        if col.count_ones() < 2 {
            continue;
        }
        let pcs = column_pcs(col);
        for size in MIN_ORDER..=MAX_ORDER {
            if index.has_vertical_subset(pcs, size) {
                s[size - MIN_ORDER] += 1;
            }
        }
    }
    let l = chrom.note_count() as u64;
    let m = index.total_notes();
    let weighted: u64 = (0..3).map(|i| WEIGHTS[i] * (n[i] + s[i])).sum();
    let score = if l == 0 || m == 0 {
        0.0
    } else {
        weighted as f64 / (m as f64 * l as f64)
    };
    Similarity { score, n, s, l, m }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessBreakdown {
    pub score: f64,
    pub cost: u32,
    pub violations: Violations,
    pub objective: f64,
    pub n2: u64,
    pub n3: u64,
    pub n4: u64,
    pub s2: u64,
    pub s3: u64,
    pub s4: u64,
    pub m: u64,
    pub l: u64,
    pub epsilon: f64,
}

impl FitnessBreakdown {
    pub const CSV_HEADER: &'static str =
        "score,cost,rhythm,melodic_interval,harmony,transition,objective,n2,n3,n4,s2,s3,s4,m,l,epsilon";

    pub fn csv_row(&self) -> String {
        let v = &self.violations;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.score,
            self.cost,
            v.rhythm,
            v.melodic_interval,
            v.harmony,
            v.transition,
            self.objective,
            self.n2,
            self.n3,
            self.n4,
            self.s2,
            self.s3,
            self.s4,
            self.m,
            self.l,
            self.epsilon
        )
    }

    /// Parses a row written by [`csv_row`](Self::csv_row).
    pub fn parse_csv_row(row: &str) -> Option<Self> {
        let f: Vec<&str> = row.trim().split(',').collect();
        if f.len() != 16 {
            return None;
        }
        let u = |i: usize| f[i].parse::<u64>().ok();
        let x = |i: usize| f[i].parse::<f64>().ok();
        Some(FitnessBreakdown {
            score: x(0)?,
            cost: f[1].parse().ok()?,
            violations: Violations {
                rhythm: f[2].parse().ok()?,
                melodic_interval: f[3].parse().ok()?,
                harmony: f[4].parse().ok()?,
                transition: f[5].parse().ok()?,
            },
            objective: x(6)?,
            n2: u(7)?,
            n3: u(8)?,
            n4: u(9)?,
            s2: u(10)?,
            s3: u(11)?,
            s4: u(12)?,
            m: u(13)?,
            l: u(14)?,
            epsilon: x(15)?,
        })
    }
}

/// `score + e/(e + cost)`.
pub fn objective(score: f64, cost: u32, epsilon: f64) -> f64 {
    score + epsilon / (epsilon + cost as f64)
}

pub fn ga1_objective(chrom: &Chromosome, index: &CorpusIndex, rules: &RuleConfig, epsilon: f64) -> FitnessBreakdown {
    debug_assert!(epsilon > 0.0);
    let violations = count_violations(chrom, index, rules);
    let sim = similarity_score(chrom, index);
    let cost = violations.total();
    FitnessBreakdown {
        score: sim.score,
        cost,
        violations,
        objective: objective(sim.score, cost, epsilon),
        n2: sim.n[0],
        n3: sim.n[1],
        n4: sim.n[2],
        s2: sim.s[0],
        s3: sim.s[1],
        s4: sim.s[2],
        m: sim.m,
        l: sim.l,
        epsilon,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompositeConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Divisor that maps the grammar objective into [0, 1].
    pub grammar_norm: f64,
}

impl Default for CompositeConfig {
    fn default() -> Self {
        CompositeConfig {
            w1: 1.0 / 3.0,
            w2: 1.0 / 3.0,
            w3: 1.0 / 3.0,
            grammar_norm: 1.0,
        }
    }
}

impl CompositeConfig {
    pub fn validate(&self) -> Result<(), FitnessError> {
        let ws = [self.w1, self.w2, self.w3];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(FitnessError::Composite("weights must be non-negative".into()));
        }
        if (ws.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(FitnessError::Composite(format!("weights {ws:?} do not sum to 1")));
        }
        if !(self.grammar_norm.is_finite() && self.grammar_norm > 0.0) {
            return Err(FitnessError::Composite("grammar_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn normalize_grammar(&self, x1: f64) -> f64 {
        (x1 / self.grammar_norm).min(1.0)
    }
}

/// `w1·min(x1/norm, 1) + w2·x2/100 + w3·x3/100`, with listener scores on 0–100.
pub fn ga2_fitness(x1: f64, x2: f64, x3: f64, cfg: &CompositeConfig) -> f64 {
    cfg.w1 * cfg.normalize_grammar(x1) + cfg.w2 * (x2 / 100.0) + cfg.w3 * (x3 / 100.0)
}
