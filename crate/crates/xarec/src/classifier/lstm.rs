use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::encode::ModelMeta;
use super::{Classifier, ContractError, ProbabilityDistribution};
use crate::ingest::{ActivityLabel, ActivityWindow, WINDOW_MINUTES};

/// Network dimensions. Embedding and hidden width are fixed at 64 and the
/// output at the 10 activity classes; the input width follows the registry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input: usize,
    pub embed: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Dims {
    pub fn for_meta(meta: &ModelMeta) -> Self {
        Dims { input: meta.input_dim(), embed: 64, hidden: 64, classes: ActivityLabel::COUNT }
    }

    pub fn param_count(&self) -> usize {
        let Dims { input, embed, hidden, classes } = *self;
        input * embed + embed            // embedding
            + embed * 4 * hidden         // input-to-gates
            + hidden * 4 * hidden        // hidden-to-gates
            + 4 * hidden                 // gate biases
            + hidden * classes + classes // softmax head
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    embed_w: usize,
    embed_b: usize,
    w_x: usize,
    w_h: usize,
    b_g: usize,
    out_w: usize,
    out_b: usize,
    end: usize,
}

impl Layout {
    fn new(d: Dims) -> Self {
        let embed_w = 0;
        let embed_b = embed_w + d.input * d.embed;
        let w_x = embed_b + d.embed;
        let w_h = w_x + d.embed * 4 * d.hidden;
        let b_g = w_h + d.hidden * 4 * d.hidden;
        let out_w = b_g + 4 * d.hidden;
        let out_b = out_w + d.hidden * d.classes;
        Layout { embed_w, embed_b, w_x, w_h, b_g, out_w, out_b, end: out_b + d.classes }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax: shifting all logits by a constant leaves the
/// result unchanged.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Per-timestep activations kept for backpropagation through time.
struct StepCache {
    active: Vec<usize>,
    embed: Vec<f64>,
    gates: Vec<f64>, // i | f | g | o, post-nonlinearity
    cell: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
}

/// Uni-directional single-layer LSTM classifier over activity windows.
///
/// Each timestep row is one-hot encoded per sensor column, projected by a
/// learned embedding, and fed through a standard LSTM cell
/// (input/forget/output gates, tanh candidate). The final hidden state goes
/// through a dense layer and softmax. Gate order in the packed tensors is
/// `i | f | g | o`. All parameters live in one flat `f64` vector so
/// gradient checking can address every coordinate uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub meta: ModelMeta,
    pub dims: Dims,
    pub params: Vec<f64>,
}

impl LstmModel {
    /// Glorot-style uniform initialization, seed-controlled. The forget-gate
    /// bias starts at 1 so early training does not wash the cell state out.
    pub fn new(meta: ModelMeta, seed: u64) -> Self {
        let dims = Dims::for_meta(&meta);
        let layout = Layout::new(dims);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.end];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize, fan_out: usize, params: &mut Vec<f64>| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.gen_range(-limit..limit);
            }
        };
        fill(layout.embed_w..layout.embed_b, dims.input, dims.embed, &mut params);
        fill(layout.w_x..layout.w_h, dims.embed, dims.hidden, &mut params);
        fill(layout.w_h..layout.b_g, dims.hidden, dims.hidden, &mut params);
        fill(layout.out_w..layout.out_b, dims.hidden, dims.classes, &mut params);
        for p in &mut params[layout.b_g + dims.hidden..layout.b_g + 2 * dims.hidden] {
            *p = 1.0;
        }
        LstmModel { meta, dims, params }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.dims)
    }

    fn forward_cached(&self, window: &ActivityWindow) -> Result<(Vec<StepCache>, Vec<f64>, Vec<f64>), ContractError> {
        self.meta.check_shape(window)?;
        let d = self.dims;
        let l = self.layout();
        let p = &self.params;
        let g4 = 4 * d.hidden;

        let mut steps = Vec::with_capacity(WINDOW_MINUTES);
        let mut h = vec![0.0; d.hidden];
        let mut c = vec![0.0; d.hidden];
        let mut active = Vec::with_capacity(self.meta.n_columns());
        for t in 0..WINDOW_MINUTES {
            self.meta.active_indices(window, t, &mut active)?;
            // Embedding is a gather-add: one active one-hot index per column.
            let mut embed = p[l.embed_b..l.embed_b + d.embed].to_vec();
            for &a in &active {
                let row = &p[l.embed_w + a * d.embed..l.embed_w + (a + 1) * d.embed];
                for (e, w) in embed.iter_mut().zip(row) {
                    *e += w;
                }
            }
            let mut z = p[l.b_g..l.b_g + g4].to_vec();
            for (ei, &e) in embed.iter().enumerate() {
                let row = &p[l.w_x + ei * g4..l.w_x + (ei + 1) * g4];
                for (zk, w) in z.iter_mut().zip(row) {
                    *zk += e * w;
                }
            }
            for (hi, &hv) in h.iter().enumerate() {
                let row = &p[l.w_h + hi * g4..l.w_h + (hi + 1) * g4];
                for (zk, w) in z.iter_mut().zip(row) {
                    *zk += hv * w;
                }
            }
            let mut gates = vec![0.0; g4];
            for k in 0..d.hidden {
                gates[k] = sigmoid(z[k]);
                gates[d.hidden + k] = sigmoid(z[d.hidden + k]);
                gates[2 * d.hidden + k] = z[2 * d.hidden + k].tanh();
                gates[3 * d.hidden + k] = sigmoid(z[3 * d.hidden + k]);
            }
            let mut cell = vec![0.0; d.hidden];
            let mut cell_tanh = vec![0.0; d.hidden];
            let mut hidden = vec![0.0; d.hidden];
            for k in 0..d.hidden {
                cell[k] = gates[d.hidden + k] * c[k] + gates[k] * gates[2 * d.hidden + k];
                cell_tanh[k] = cell[k].tanh();
                hidden[k] = gates[3 * d.hidden + k] * cell_tanh[k];
            }
            c = cell.clone();
            let hidden_out = hidden.clone();
            steps.push(StepCache { active: active.clone(), embed, gates, cell, cell_tanh, hidden });
            h = hidden_out;
        }

        let mut logits = p[l.out_b..l.out_b + d.classes].to_vec();
        for (hi, &hv) in h.iter().enumerate() {
            let row = &p[l.out_w + hi * d.classes..l.out_w + (hi + 1) * d.classes];
            for (lk, w) in logits.iter_mut().zip(row) {
                *lk += hv * w;
            }
        }
        let probs = softmax(&logits);
        Ok((steps, logits, probs))
    }

    /// Cross-entropy loss and its gradient with respect to every parameter,
    /// for one labelled window.
    pub fn loss_and_gradient(&self, window: &ActivityWindow, label: ActivityLabel) -> Result<(f64, Vec<f64>), ContractError> {
        let (steps, _logits, probs) = self.forward_cached(window)?;
        let d = self.dims;
        let l = self.layout();
        let p = &self.params;
        let g4 = 4 * d.hidden;
        let y = label.index();
        let loss = -probs[y].max(1e-300).ln();

        let mut grad = vec![0.0; self.params.len()];

        let mut d_logits = probs;
        d_logits[y] -= 1.0;

        let h_last = &steps[WINDOW_MINUTES - 1].hidden;
        for (hi, &hv) in h_last.iter().enumerate() {
            let row = &mut grad[l.out_w + hi * d.classes..l.out_w + (hi + 1) * d.classes];
            for (gk, &dl) in row.iter_mut().zip(&d_logits) {
                *gk += hv * dl;
            }
        }
        for (gk, &dl) in grad[l.out_b..l.out_b + d.classes].iter_mut().zip(&d_logits) {
            *gk += dl;
        }

        let mut d_h = vec![0.0; d.hidden];
        for hi in 0..d.hidden {
            let row = &p[l.out_w + hi * d.classes..l.out_w + (hi + 1) * d.classes];
            d_h[hi] = row.iter().zip(&d_logits).map(|(w, dl)| w * dl).sum();
        }

        let mut d_c_next = vec![0.0; d.hidden];
        let mut d_z = vec![0.0; g4];
        for t in (0..WINDOW_MINUTES).rev() {
            let step = &steps[t];
            let (h_prev, c_prev): (&[f64], &[f64]) = if t == 0 {
                (&[], &[])
            } else {
                (&steps[t - 1].hidden, &steps[t - 1].cell)
            };
            for k in 0..d.hidden {
                let i_g = step.gates[k];
                let f_g = step.gates[d.hidden + k];
                let g_g = step.gates[2 * d.hidden + k];
                let o_g = step.gates[3 * d.hidden + k];
                let d_o = d_h[k] * step.cell_tanh[k];
                let d_c = d_h[k] * o_g * (1.0 - step.cell_tanh[k] * step.cell_tanh[k]) + d_c_next[k];
                let c_prev_k = if t == 0 { 0.0 } else { c_prev[k] };
                d_z[k] = d_c * g_g * i_g * (1.0 - i_g);
                d_z[d.hidden + k] = d_c * c_prev_k * f_g * (1.0 - f_g);
                d_z[2 * d.hidden + k] = d_c * i_g * (1.0 - g_g * g_g);
                d_z[3 * d.hidden + k] = d_o * o_g * (1.0 - o_g);
                d_c_next[k] = d_c * f_g;
            }

            for (gb, &dz) in grad[l.b_g..l.b_g + g4].iter_mut().zip(&d_z) {
                *gb += dz;
            }
            let mut d_embed = vec![0.0; d.embed];
            for (ei, &e) in step.embed.iter().enumerate() {
                let w_row = &p[l.w_x + ei * g4..l.w_x + (ei + 1) * g4];
                let g_row = &mut grad[l.w_x + ei * g4..l.w_x + (ei + 1) * g4];
                let mut acc = 0.0;
                for k in 0..g4 {
                    g_row[k] += e * d_z[k];
                    acc += w_row[k] * d_z[k];
                }
                d_embed[ei] = acc;
            }
            let mut d_h_prev = vec![0.0; d.hidden];
            if t > 0 {
                for (hi, &hv) in h_prev.iter().enumerate() {
                    let w_row = &p[l.w_h + hi * g4..l.w_h + (hi + 1) * g4];
                    let g_row = &mut grad[l.w_h + hi * g4..l.w_h + (hi + 1) * g4];
                    let mut acc = 0.0;
                    for k in 0..g4 {
                        g_row[k] += hv * d_z[k];
                        acc += w_row[k] * d_z[k];
                    }
                    d_h_prev[hi] = acc;
                }
            }
            for (gb, &de) in grad[l.embed_b..l.embed_b + d.embed].iter_mut().zip(&d_embed) {
                *gb += de;
            }
            for &a in &step.active {
                let g_row = &mut grad[l.embed_w + a * d.embed..l.embed_w + (a + 1) * d.embed];
                for (gk, &de) in g_row.iter_mut().zip(&d_embed) {
                    *gk += de;
                }
            }
            d_h = d_h_prev;
        }

        Ok((loss, grad))
    }

    pub fn loss(&self, window: &ActivityWindow, label: ActivityLabel) -> Result<f64, ContractError> {
        let (_, _, probs) = self.forward_cached(window)?;
        Ok(-probs[label.index()].max(1e-300).ln())
    }
}

impl Classifier for LstmModel {
    fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    fn predict(&self, window: &ActivityWindow) -> Result<ProbabilityDistribution, ContractError> {
        let (_, _, probs) = self.forward_cached(window)?;
        ProbabilityDistribution::new(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth;

    #[test]
    fn softmax_is_shift_invariant_and_normalized() {
        let logits = vec![0.3, -2.0, 5.0, 0.0, 1.0, -0.5, 2.2, 0.1, -1.0, 0.7];
        let a = softmax(&logits);
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.456).collect();
        let b = softmax(&shifted);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
            assert!(*x >= 0.0);
        }
    }

    #[test]
    fn untrained_model_is_near_uniform() {
        let ds = synth::dataset_with_counts(
            &ActivityLabel::ALL.map(|l| (l, 10)),
            10,
            5,
        );
        let model = LstmModel::new(ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()), 1);
        let uniform_entropy = (ActivityLabel::COUNT as f64).ln();
        let mut total = 0.0;
        for w in ds.windows.iter().take(100) {
            total += model.predict(w).unwrap().entropy();
        }
        let mean = total / 100.0;
        assert!(mean >= 0.9 * uniform_entropy, "mean entropy {mean} vs uniform {uniform_entropy}");
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 2)], 8, 5);
        let other = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 1)], 12, 5);
        let model = LstmModel::new(ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()), 1);
        assert!(matches!(model.predict(&other.windows[0]), Err(ContractError::ShapeMismatch { .. })));
    }

    #[test]
    fn prediction_is_batch_invariant() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 4), (ActivityLabel::Cook, 4)], 8, 5);
        let model = LstmModel::new(ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone()), 3);
        let alone = model.predict(&ds.windows[5]).unwrap();
        let batch = model.predict_batch(&ds.windows).unwrap();
        for (a, b) in alone.probs().iter().zip(batch[5].probs()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn saturated_prediction_has_vanishing_gradient() {
        let ds = synth::dataset_with_counts(&[(ActivityLabel::Sleep, 1)], 8, 5);
        let meta = ModelMeta::from_registry(&ds.registry, ds.registry_hash.clone());
        let mut model = LstmModel::new(meta, 1);
        let l = model.layout();
        let y = ActivityLabel::Sleep.index();
        for k in 0..model.dims.classes {
            model.params[l.out_b + k] = if k == y { 400.0 } else { -400.0 };
        }
        let (loss, grad) = model.loss_and_gradient(&ds.windows[0], ActivityLabel::Sleep).unwrap();
        assert!(loss < 1e-12);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }
}
