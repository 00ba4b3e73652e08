//! Bidirectional LSTM regression surrogate for listener ratings.
//!
//! The network reads a piano matrix column by column in both directions,
//! concatenates the final hidden state of each direction and maps it through
//! a single fully-connected output unit. Scores are clamped to [0, 100] at
//! inference; training works on the raw output.
//!
//! All parameters live in one flat vector whose order is the checkpoint
//! order: for each direction (forward, then backward), for each gate (input,
//! forget, output, candidate), the input matrix (hidden×input, row-major),
//! the recurrent matrix (hidden×hidden) and the bias (hidden); then the head
//! weights (2·hidden) and the head bias.

mod checkpoint;
mod train;

pub use checkpoint::CheckpointError;
pub use train::{train, ListenerGroup, Optimizer, RatingDataset, RatingItem, TrainConfig, TrainError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::abc::pitch::PIANO_KEYS;
use crate::exec::{self, Exec};
use crate::pianoroll::PianoMatrix;

pub const DEFAULT_HIDDEN: usize = 50;
pub const SCORE_MAX: f64 = 100.0;
const GATES: usize = 4;
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("cannot score an empty sequence")]
    EmptySequence,
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input: usize,
    pub hidden: usize,
}

impl Layout {
    fn block(&self) -> usize {
        self.hidden * self.input + self.hidden * self.hidden + self.hidden
    }

    pub fn w(&self, dir: usize, gate: usize) -> usize {
        (dir * GATES + gate) * self.block()
    }

    pub fn u(&self, dir: usize, gate: usize) -> usize {
        self.w(dir, gate) + self.hidden * self.input
    }

    pub fn b(&self, dir: usize, gate: usize) -> usize {
        self.u(dir, gate) + self.hidden * self.hidden
    }

    pub fn fc_w(&self) -> usize {
        2 * GATES * self.block()
    }

    pub fn fc_b(&self) -> usize {
        self.fc_w() + 2 * self.hidden
    }

    pub fn len(&self) -> usize {
        self.fc_b() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn direction_len(&self) -> usize {
        GATES * self.block()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListenerNet {
    layout: Layout,
    params: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Active input indices for each column.
fn active_inputs(m: &PianoMatrix) -> Vec<Vec<usize>> {
    m.columns()
        .iter()
        .map(|&col| (0..PIANO_KEYS).filter(|&k| col >> k & 1 == 1).collect())
        .collect()
}

/// Per-step activations of one direction, in processing order.
struct DirectionTrace {
    /// Activated gates i, f, o, g per step: `steps × 4 × hidden`.
    gates: Vec<f64>,
    cells: Vec<f64>,
    hidden: Vec<f64>,
}

impl ListenerNet {
    /// Random initialization: every parameter uniform in ±1/√hidden, forget
    /// biases at +1, head bias 0.
    pub fn new(hidden: usize, seed: u64) -> Self {
        let layout = Layout {
            input: PIANO_KEYS,
            hidden,
        };
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-bound..=bound)).collect();
        for dir in 0..2 {
            let b = layout.b(dir, FORGET);
            params[b..b + hidden].fill(1.0);
        }
        params[layout.fc_b()] = 0.0;
        ListenerNet { layout, params }
    }

    pub fn zeros(hidden: usize) -> Self {
        let layout = Layout {
            input: PIANO_KEYS,
            hidden,
        };
        ListenerNet {
            layout,
            params: vec![0.0; layout.len()],
        }
    }

    pub fn from_params(hidden: usize, params: Vec<f64>) -> Option<Self> {
        let layout = Layout {
            input: PIANO_KEYS,
            hidden,
        };
        (params.len() == layout.len()).then_some(ListenerNet { layout, params })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// The same network with its forward and backward parameter sets exchanged.
    pub fn swapped_directions(&self) -> Self {
        let n = self.layout.direction_len();
        let mut params = self.params.clone();
        let (fwd, rest) = params.split_at_mut(n);
        fwd.swap_with_slice(&mut rest[..n]);
        ListenerNet {
            layout: self.layout,
            params,
        }
    }

    fn run_direction(&self, dir: usize, inputs: &[Vec<usize>], order: &[usize]) -> DirectionTrace {
        let l = self.layout;
        let h = l.hidden;
        let p = &self.params;
        let steps = order.len();
        let mut trace = DirectionTrace {
            gates: vec![0.0; steps * GATES * h],
            cells: vec![0.0; steps * h],
            hidden: vec![0.0; steps * h],
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for (s, &t) in order.iter().enumerate() {
            let gates = &mut trace.gates[s * GATES * h..(s + 1) * GATES * h];
            for g in 0..GATES {
                let (w, u, b) = (l.w(dir, g), l.u(dir, g), l.b(dir, g));
                for j in 0..h {
                    let mut z = p[b + j];
                    let w_row = &p[w + j * l.input..w + (j + 1) * l.input];
                    for &k in &inputs[t] {
                        z += w_row[k];
                    }
                    let u_row = &p[u + j * h..u + (j + 1) * h];
                    z += u_row.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
                    gates[g * h + j] = if g == CANDIDATE { z.tanh() } else { sigmoid(z) };
                }
            }
            let cells = &mut trace.cells[s * h..(s + 1) * h];
            let hs = &mut trace.hidden[s * h..(s + 1) * h];
            for j in 0..h {
                let c = gates[FORGET * h + j] * c_prev[j] + gates[INPUT * h + j] * gates[CANDIDATE * h + j];
                cells[j] = c;
                hs[j] = gates[OUTPUT * h + j] * c.tanh();
            }
            h_prev.copy_from_slice(hs);
            c_prev.copy_from_slice(cells);
        }
        trace
    }

    fn traces(&self, inputs: &[Vec<usize>]) -> (DirectionTrace, DirectionTrace, Vec<usize>, Vec<usize>) {
        let fwd_order: Vec<usize> = (0..inputs.len()).collect();
        let bwd_order: Vec<usize> = (0..inputs.len()).rev().collect();
        let fwd = self.run_direction(0, inputs, &fwd_order);
        let bwd = self.run_direction(1, inputs, &bwd_order);
        (fwd, bwd, fwd_order, bwd_order)
    }

    fn head(&self, feats: &[f64]) -> f64 {
        let l = self.layout;
        let w = &self.params[l.fc_w()..l.fc_w() + 2 * l.hidden];
        self.params[l.fc_b()] + w.iter().zip(feats).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Concatenated final hidden states `[forward at T−1, backward at 0]`.
    pub fn features(&self, m: &PianoMatrix) -> Result<Vec<f64>, ModelError> {
        if m.ticks() == 0 {
            return Err(ModelError::EmptySequence);
        }
        let (fwd, bwd, _, _) = self.traces(&active_inputs(m));
        let h = self.layout.hidden;
        let last = m.ticks() - 1;
        let mut feats = fwd.hidden[last * h..].to_vec();
        feats.extend_from_slice(&bwd.hidden[last * h..]);
        Ok(feats)
    }

    /// Unclamped regression output.
    pub fn raw_output(&self, m: &PianoMatrix) -> Result<f64, ModelError> {
        Ok(self.head(&self.features(m)?))
    }

    /// Score in [0, 100].
    pub fn forward(&self, m: &PianoMatrix) -> Result<f64, ModelError> {
        Ok(clamp_score(self.raw_output(m)?))
    }

    pub fn forward_batch(&self, batch: &[PianoMatrix], exec: Exec) -> Result<Vec<f64>, ModelError> {
        exec::map(exec, batch, |m| self.forward(m)).into_iter().collect()
    }

    /// Adds d(raw output)/d(params) scaled by `dy` into `grad`; returns the raw output.
    fn accumulate_gradient(
        &self,
        m: &PianoMatrix,
        dy_of: impl Fn(f64) -> f64,
        grad: &mut [f64],
    ) -> Result<f64, ModelError> {
        if m.ticks() == 0 {
            return Err(ModelError::EmptySequence);
        }
        let inputs = active_inputs(m);
        let (fwd, bwd, fwd_order, bwd_order) = self.traces(&inputs);
        let l = self.layout;
        let h = l.hidden;
        let last = m.ticks() - 1;
        let mut feats = fwd.hidden[last * h..].to_vec();
        feats.extend_from_slice(&bwd.hidden[last * h..]);
        let y = self.head(&feats);
        let dy = dy_of(y);

        let fc_w = l.fc_w();
        for (g, f) in grad[fc_w..fc_w + 2 * h].iter_mut().zip(&feats) {
            *g += dy * f;
        }
        grad[l.fc_b()] += dy;
        for (dir, trace, order) in [(0, &fwd, &fwd_order), (1, &bwd, &bwd_order)] {
            let dh_final: Vec<f64> = (0..h).map(|j| dy * self.params[fc_w + dir * h + j]).collect();
            self.backprop_direction(dir, trace, order, &inputs, dh_final, grad);
        }
        Ok(y)
    }

    fn backprop_direction(
        &self,
        dir: usize,
        trace: &DirectionTrace,
        order: &[usize],
        inputs: &[Vec<usize>],
        dh_final: Vec<f64>,
        grad: &mut [f64],
    ) {
        let l = self.layout;
        let h = l.hidden;
        let p = &self.params;
        let mut dh = dh_final;
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; GATES * h];
        let zeros = vec![0.0; h];
        for s in (0..order.len()).rev() {
            let gates = &trace.gates[s * GATES * h..(s + 1) * GATES * h];
            let cells = &trace.cells[s * h..(s + 1) * h];
            let (h_prev, c_prev) = if s == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&trace.hidden[(s - 1) * h..s * h], &trace.cells[(s - 1) * h..s * h])
            };
            for j in 0..h {
                let (i, f, o, g) = (
                    gates[INPUT * h + j],
                    gates[FORGET * h + j],
                    gates[OUTPUT * h + j],
                    gates[CANDIDATE * h + j],
                );
                let tc = cells[j].tanh();
                let d_o = dh[j] * tc;
                let d_c = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[INPUT * h + j] = d_c * g * i * (1.0 - i);
                dz[FORGET * h + j] = d_c * c_prev[j] * f * (1.0 - f);
                dz[OUTPUT * h + j] = d_o * o * (1.0 - o);
                dz[CANDIDATE * h + j] = d_c * i * (1.0 - g * g);
                dc[j] = d_c * f;
            }
            let t = order[s];
            dh.fill(0.0);
            for gate in 0..GATES {
                let (w, u, b) = (l.w(dir, gate), l.u(dir, gate), l.b(dir, gate));
                for j in 0..h {
                    let d = dz[gate * h + j];
                    if d == 0.0 {
                        continue;
                    }
                    grad[b + j] += d;
                    let w_row = w + j * l.input;
                    for &k in &inputs[t] {
                        grad[w_row + k] += d;
                    }
                    let u_row = u + j * h;
                    for k in 0..h {
                        grad[u_row + k] += d * h_prev[k];
                        dh[k] += d * p[u_row + k];
                    }
                }
            }
        }
    }

    /// RMSE of the unclamped outputs against `targets`, with its gradient.
    pub fn loss_and_gradients(&self, items: &[RatingItem]) -> Result<(f64, Vec<f64>), ModelError> {
        let n = items.len() as f64;
        let outputs: Vec<f64> = items
            .iter()
            .map(|it| self.raw_output(&it.matrix))
            .collect::<Result<_, _>>()?;
        let mse = items
            .iter()
            .zip(&outputs)
            .map(|(it, y)| (y - it.score).powi(2))
            .sum::<f64>()
            / n;
        let rmse = mse.sqrt();
        let mut grad = vec![0.0; self.params.len()];
        if rmse > 0.0 {
            for item in items {
                let target = item.score;
                self.accumulate_gradient(&item.matrix, |y| (y - target) / (n * rmse), &mut grad)?;
            }
        }
        Ok((rmse, grad))
    }
}

pub fn clamp_score(raw: f64) -> f64 {
    if raw.is_nan() {
        0.0
    } else {
        raw.clamp(0.0, SCORE_MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(cols: &[&[usize]]) -> PianoMatrix {
        let mut m = PianoMatrix::zeros(cols.len());
        for (t, keys) in cols.iter().enumerate() {
            for &k in *keys {
                m.set(k, t, true);
            }
        }
        m
    }

    #[test]
    fn zero_network_outputs_head_bias() {
        let mut net = ListenerNet::zeros(3);
        let m = matrix(&[&[1, 2], &[40]]);
        assert_eq!(net.raw_output(&m).unwrap(), 0.0);
        let b = net.layout().fc_b();
        net.params_mut()[b] = 42.5;
        assert_eq!(net.forward(&m).unwrap(), 42.5);
    }

    #[test]
    fn clamp_endpoints() {
        assert_eq!(clamp_score(250.0), 100.0);
        assert_eq!(clamp_score(-5.0), 0.0);
        assert_eq!(clamp_score(37.0), 37.0);
        let mut net = ListenerNet::zeros(2);
        let b = net.layout().fc_b();
        net.params_mut()[b] = 250.0;
        assert_eq!(net.forward(&matrix(&[&[3]])).unwrap(), 100.0);
        net.params_mut()[b] = -5.0;
        assert_eq!(net.forward(&matrix(&[&[3]])).unwrap(), 0.0);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let net = ListenerNet::new(2, 0);
        assert_eq!(net.forward(&PianoMatrix::zeros(0)), Err(ModelError::EmptySequence));
    }

    #[test]
    fn layout_sizes() {
        let l = ListenerNet::new(50, 1).layout();
        assert_eq!(l.len(), 2 * 4 * (50 * 88 + 50 * 50 + 50) + 100 + 1);
        let net = ListenerNet::new(4, 9);
        let b = net.layout().b(1, FORGET);
        assert!(net.params()[b..b + 4].iter().all(|&x| x == 1.0));
        let bound = 0.5;
        assert!(net.params()[..net.layout().w(0, FORGET)]
            .iter()
            .all(|x| x.abs() <= bound));
    }

    #[test]
    fn perfect_prediction_has_zero_loss_and_gradient() {
        let net = ListenerNet::new(3, 5);
        let m = matrix(&[&[10], &[12, 20]]);
        let y = net.raw_output(&m).unwrap();
        let items = vec![RatingItem {
            id: "a".into(),
            matrix: m,
            score: y,
            raters: 1,
        }];
        let (rmse, grad) = net.loss_and_gradients(&items).unwrap();
        assert_eq!(rmse, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_item_rmse_is_absolute_error() {
        let net = ListenerNet::new(3, 5);
        let m = matrix(&[&[10], &[12, 20]]);
        let y = net.raw_output(&m).unwrap();
        for c in [-7.0, 0.5, 30.0] {
            let items = vec![RatingItem {
                id: "a".into(),
                matrix: m.clone(),
                score: y + c,
                raters: 1,
            }];
            let (rmse, _) = net.loss_and_gradients(&items).unwrap();
            assert!((rmse - f64::abs(c)).abs() < 1e-12);
        }
    }
}
