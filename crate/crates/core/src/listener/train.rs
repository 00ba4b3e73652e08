use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ListenerNet, SCORE_MAX};
use crate::pianoroll::PianoMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub hidden: usize,
    pub optimizer: Optimizer,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            learning_rate: 1e-3,
            seed: 0,
            hidden: super::DEFAULT_HIDDEN,
            optimizer: Optimizer::Adam,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}")]
    DivergenceDetected {
        epoch: usize,
        /// Parameters at the start of the diverging epoch.
        last_finite: Box<ListenerNet>,
        losses: Vec<f64>,
    },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid rating dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListenerGroup {
    Expert,
    Regular,
}

impl ListenerGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ListenerGroup::Expert => "expert",
            ListenerGroup::Regular => "regular",
        }
    }
}

impl std::str::FromStr for ListenerGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "expert" => Ok(ListenerGroup::Expert),
            "regular" => Ok(ListenerGroup::Regular),
            other => Err(format!("unknown listener group {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingItem {
    pub id: String,
    pub matrix: PianoMatrix,
    /// Mean rating in [0, 100].
    pub score: f64,
    pub raters: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    pub group: ListenerGroup,
    pub items: Vec<RatingItem>,
}

const DATASET_MAGIC: &str = "HARMOGEN-RATINGS 1";

impl RatingDataset {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.items.is_empty() {
            return Err(TrainError::Dataset("no items".into()));
        }
        for it in &self.items {
            if !(0.0..=SCORE_MAX).contains(&it.score) {
                return Err(TrainError::Dataset(format!(
                    "{}: score {} outside 0..100",
                    it.id, it.score
                )));
            }
            if it.matrix.ticks() == 0 {
                return Err(TrainError::Dataset(format!("{}: empty piece", it.id)));
            }
        }
        Ok(())
    }

    /// Text format: a header line, then `id,score,raters,ticks,col0 col1 ...`
    /// with each column as a hexadecimal key mask.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{DATASET_MAGIC} group={} items={}",
            self.group.as_str(),
            self.items.len()
        )?;
        for it in &self.items {
            let cols: Vec<String> = it.matrix.columns().iter().map(|c| format!("{c:x}")).collect();
            writeln!(
                w,
                "{},{},{},{},{}",
                it.id,
                it.score,
                it.raters,
                it.matrix.ticks(),
                cols.join(" ")
            )?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self, TrainError> {
        let bad = |line: usize, why: &str| TrainError::Dataset(format!("line {line}: {why}"));
        let mut lines = r.lines();
        let header = lines
            .next()
            .and_then(Result::ok)
            .ok_or_else(|| bad(1, "missing header"))?;
        let rest = header
            .strip_prefix(DATASET_MAGIC)
            .ok_or_else(|| bad(1, "not a rating dataset"))?;
        let mut group = None;
        let mut count = None;
        for f in rest.split_whitespace() {
            match f.split_once('=') {
                Some(("group", g)) => group = g.parse().ok(),
                Some(("items", n)) => count = n.parse::<usize>().ok(),
                _ => return Err(bad(1, "unknown header field")),
            }
        }
        let group = group.ok_or_else(|| bad(1, "missing group"))?;
        let mut items = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let line = line.map_err(|e| TrainError::Dataset(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.splitn(5, ',').collect();
            if f.len() != 5 {
                return Err(bad(n, "expected id,score,raters,ticks,columns"));
            }
            let ticks: usize = f[3].parse().map_err(|_| bad(n, "bad tick count"))?;
            let cols: Vec<u128> = f[4]
                .split_whitespace()
                .map(|c| u128::from_str_radix(c, 16))
                .collect::<Result<_, _>>()
                .map_err(|_| bad(n, "bad column mask"))?;
            if cols.len() != ticks {
                return Err(bad(n, "column count does not match ticks"));
            }
            items.push(RatingItem {
                id: f[0].to_string(),
                score: f[1].parse().map_err(|_| bad(n, "bad score"))?,
                raters: f[2].parse().map_err(|_| bad(n, "bad rater count"))?,
                matrix: PianoMatrix::from_columns(cols),
            });
        }
        if count.is_some_and(|c| c != items.len()) {
            return Err(TrainError::Dataset("item count does not match header".into()));
        }
        Ok(RatingDataset { group, items })
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}

/// Sequence-at-a-time training on the RMSE loss. Returns the trained net and
/// the per-epoch RMSE of the predictions made during each epoch.
pub fn train(
    mut net: ListenerNet,
    data: &RatingDataset,
    cfg: &TrainConfig,
) -> Result<(ListenerNet, Vec<f64>), TrainError> {
    if cfg.epochs < 1 {
        return Err(TrainError::Config("epochs must be >= 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate >= 0.0) {
        return Err(TrainError::Config("learning_rate must be non-negative".into()));
    }
    data.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(net.params.len());
    let mut grad = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..data.items.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let checkpoint = net.clone();
        order.shuffle(&mut rng);
        let mut sq = 0.0;
        for &i in &order {
            let item = &data.items[i];
            grad.fill(0.0);
            let target = item.score;
            // Single-sample RMSE is |error|; its derivative is the error's sign.
            let y = net
                .accumulate_gradient(
                    &item.matrix,
                    |y| (y - target).signum() * f64::from(y != target),
                    &mut grad,
                )
                .map_err(|e| TrainError::Dataset(e.to_string()))?;
            sq += (y - target).powi(2);
            clip(&mut grad, cfg.clip_norm);
            match cfg.optimizer {
                Optimizer::Adam => adam.apply(&mut net.params, &grad, cfg.learning_rate),
                Optimizer::Sgd => {
                    for (p, g) in net.params.iter_mut().zip(&grad) {
                        *p -= cfg.learning_rate * g;
                    }
                }
            }
        }
        let rmse = (sq / data.items.len() as f64).sqrt();
        if !rmse.is_finite() || !net.is_finite() {
            return Err(TrainError::DivergenceDetected {
                epoch,
                last_finite: Box::new(checkpoint),
                losses,
            });
        }
        losses.push(rmse);
    }
    Ok((net, losses))
}
