//! The iTS-LSTM ensemble and its baseline architectures.
//!
//! The ensemble concatenates the features of seven temporal-sliding LSTM
//! networks (1056 values), then runs `fc1 (72) → ReLU → fc2 (18) → ReLU →
//! classifier (4) → softmax`. Dropout hits the concatenated feature and the
//! fc1 output.
//!
//! Baselines share the input/output contract:
//!
//! * `ts-lstm`: the same seven networks with a single affine + softmax head;
//! * `ts-lstm-no-orig`: as above without the "original" group (networks 3, 4, 5);
//! * `single` / `double`: one or two stacked 256-unit LSTMs over all 24 frames,
//!   last hidden state into an affine + softmax head.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Dense;
use crate::error::{Error, Result};
use crate::lstm::{backward_batch, dropout_mask, forward_batch, HiddenGrad, LstmParams, LstmTape};
use crate::numeric::{argmax, softmax_in_place, Matrix, Parameters, Rng};
use crate::skeleton::{FEATURE_WIDTH, NUM_CLASSES, SEQ_LEN};
use crate::ts_lstm::{TsLstmConfig, TsLstmNetwork, TsLstmTape};

pub const HIDDEN: usize = 256;
pub const FC1_WIDTH: usize = 72;
pub const FC2_WIDTH: usize = 18;
pub const DROPOUT_RATE: f64 = 0.2;

/// Network settings `(H_s, D_l, W_l, TS_l, LN)` of the seven ensemble members.
pub const ENSEMBLE_NETWORKS: [TsLstmConfig; 7] = [
    TsLstmConfig::new(HIDDEN, 1, 5, Some(5), Some(128)),
    TsLstmConfig::new(HIDDEN, 1, 11, Some(11), Some(64)),
    TsLstmConfig::new(HIDDEN, 5, 9, Some(9), None),
    TsLstmConfig::new(HIDDEN, 1, 23, None, Some(32)),
    TsLstmConfig::new(HIDDEN, 5, 19, None, None),
    TsLstmConfig::new(HIDDEN, 10, 14, None, None),
    TsLstmConfig::new(HIDDEN, 0, 12, Some(12), Some(64)),
];

/// Temporal scale a network covers. Networks without a sliding stride end on
/// the last frame and make up the "original" group.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelGroup {
    ShortTerm,
    MediumTerm,
    Original,
}

pub fn network_group(index: usize) -> Option<ModelGroup> {
    match index {
        0 | 1 => Some(ModelGroup::ShortTerm),
        2 | 6 => Some(ModelGroup::MediumTerm),
        3..=5 => Some(ModelGroup::Original),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "its-lstm")]
    ItsLstm,
    #[serde(rename = "ts-lstm")]
    TsLstmWithOriginal,
    #[serde(rename = "ts-lstm-no-orig")]
    TsLstmWithoutOriginal,
    #[serde(rename = "double")]
    DoubleLstm,
    #[serde(rename = "single")]
    SingleLstm,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ItsLstm,
        Variant::TsLstmWithOriginal,
        Variant::TsLstmWithoutOriginal,
        Variant::DoubleLstm,
        Variant::SingleLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ItsLstm => "its-lstm",
            Variant::TsLstmWithOriginal => "ts-lstm",
            Variant::TsLstmWithoutOriginal => "ts-lstm-no-orig",
            Variant::DoubleLstm => "double",
            Variant::SingleLstm => "single",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Variant::ItsLstm => "iTS-LSTMs",
            Variant::TsLstmWithOriginal => "TS-LSTMs (with original data)",
            Variant::TsLstmWithoutOriginal => "TS-LSTMs (without original data)",
            Variant::DoubleLstm => "Double LSTMs",
            Variant::SingleLstm => "Single LSTM",
        }
    }

    /// Published accuracy (%) and cross-entropy for this architecture on a
    /// private dataset. Metadata only; these cannot be reproduced here.
    pub fn reference_metrics(self) -> (f64, f64) {
        match self {
            Variant::ItsLstm => (95.30, 0.0748),
            Variant::TsLstmWithOriginal => (94.80, 0.0472),
            Variant::TsLstmWithoutOriginal => (94.36, 0.1142),
            Variant::DoubleLstm => (93.12, 0.0920),
            Variant::SingleLstm => (94.09, 0.0682),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::arg(format!(
                "unknown variant '{s}' (expected one of its-lstm, ts-lstm, ts-lstm-no-orig, double, single)"
            ))
        })
    }
}

/// Shape of a model, independent of its parameter values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub variant: Variant,
    pub seq_len: usize,
    pub input_width: usize,
    pub classes: usize,
    /// Temporal-sliding members, empty for stacked-LSTM variants.
    pub networks: Vec<TsLstmConfig>,
    /// Stacked LSTM layers, zero for temporal-sliding variants.
    pub lstm_layers: usize,
    pub lstm_hidden: usize,
    /// Widths of the ReLU layers between the feature and the classifier.
    pub head_hidden: Vec<usize>,
    pub dropout: f64,
}

impl Architecture {
    pub fn for_variant(variant: Variant) -> Self {
        let base = Architecture {
            variant,
            seq_len: SEQ_LEN,
            input_width: FEATURE_WIDTH,
            classes: NUM_CLASSES,
            networks: Vec::new(),
            lstm_layers: 0,
            lstm_hidden: HIDDEN,
            head_hidden: Vec::new(),
            dropout: DROPOUT_RATE,
        };
        match variant {
            Variant::ItsLstm => Architecture {
                networks: ENSEMBLE_NETWORKS.to_vec(),
                head_hidden: vec![FC1_WIDTH, FC2_WIDTH],
                ..base
            },
            Variant::TsLstmWithOriginal => Architecture {
                networks: ENSEMBLE_NETWORKS.to_vec(),
                ..base
            },
            Variant::TsLstmWithoutOriginal => Architecture {
                networks: ENSEMBLE_NETWORKS
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| network_group(*i) != Some(ModelGroup::Original))
                    .map(|(_, c)| *c)
                    .collect(),
                ..base
            },
            Variant::DoubleLstm => Architecture { lstm_layers: 2, ..base },
            Variant::SingleLstm => Architecture { lstm_layers: 1, ..base },
        }
    }

    /// Same topology as `variant` with every LSTM shrunk to `hidden` units and
    /// projection widths halved. Used for fast gradient checks.
    pub fn reduced(variant: Variant, hidden: usize) -> Self {
        let mut arch = Architecture::for_variant(variant);
        arch.lstm_hidden = hidden;
        for c in &mut arch.networks {
            c.hidden = hidden;
            c.projection = c.projection.map(|w| (w / 2).max(1));
        }
        arch
    }

    pub fn feature_width(&self) -> usize {
        if self.networks.is_empty() {
            self.lstm_hidden
        } else {
            self.networks.iter().map(TsLstmConfig::output_width).sum()
        }
    }

    /// Input width of every head layer followed by the class count.
    pub fn head_widths(&self) -> Vec<usize> {
        let mut w = vec![self.feature_width()];
        w.extend(&self.head_hidden);
        w.push(self.classes);
        w
    }

    /// Dropout acts on the input of head layer `i` when `i` is the first layer
    /// (the encoder feature) or a hidden layer that does not feed the classifier.
    fn dropout_before(&self, i: usize) -> bool {
        let layers = self.head_hidden.len() + 1;
        i == 0 || i + 1 < layers
    }

    pub fn validate(&self) -> Result<()> {
        if self.networks.is_empty() == (self.lstm_layers == 0) {
            return Err(Error::Config(
                "architecture needs either temporal-sliding networks or stacked LSTM layers".into(),
            ));
        }
        for c in &self.networks {
            c.validate(self.seq_len)?;
        }
        if self.classes == 0 || self.input_width == 0 || self.lstm_hidden == 0 {
            return Err(Error::Config("zero-sized architecture dimension".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    TsLstm(Vec<TsLstmNetwork>),
    Stacked(Vec<LstmParams>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub encoder: Encoder,
    pub head: Vec<Dense>,
    /// Seed of the stream the parameters were initialized from.
    pub seed: u64,
}

#[derive(Clone, Debug)]
enum EncoderTape {
    TsLstm(Vec<TsLstmTape>),
    Stacked(Vec<LstmTape>),
}

/// Everything the backward pass needs from one batched forward.
#[derive(Clone, Debug)]
pub struct ModelTape {
    batch: usize,
    encoder: EncoderTape,
    feature: Matrix,
    layer_inputs: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
    pre_activations: Vec<Matrix>,
    probs: Matrix,
}

impl ModelTape {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Encoder output before dropout, `batch × feature_width`.
    pub fn feature(&self) -> &Matrix {
        &self.feature
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }
}

pub fn build_model(arch: &Architecture, rng: &Rng) -> Result<Model> {
    arch.validate()?;
    let encoder = if arch.networks.is_empty() {
        Encoder::Stacked(
            (0..arch.lstm_layers)
                .map(|l| {
                    let width = if l == 0 { arch.input_width } else { arch.lstm_hidden };
                    LstmParams::init(width, arch.lstm_hidden, &mut rng.split_indexed("lstm", l as u64))
                })
                .collect(),
        )
    } else {
        Encoder::TsLstm(
            arch.networks
                .iter()
                .enumerate()
                .map(|(k, c)| TsLstmNetwork::new(*c, arch.input_width, &mut rng.split_indexed("ts-lstm", k as u64)))
                .collect(),
        )
    };
    let widths = arch.head_widths();
    let head = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Dense::init(w[0], w[1], &mut rng.split_indexed("head", i as u64)))
        .collect();
    Ok(Model {
        arch: arch.clone(),
        encoder,
        head,
        seed: rng.seed(),
    })
}

/// The seven-network ensemble with the fc1/fc2 head.
pub fn build_ensemble(rng: &Rng) -> Model {
    build_model(&Architecture::for_variant(Variant::ItsLstm), rng)
        .expect("the ensemble architecture is statically valid")
}

pub fn build_baseline(variant: Variant, rng: &Rng) -> Result<Model> {
    if variant == Variant::ItsLstm {
        return Err(Error::arg("its-lstm is the ensemble, not a baseline"));
    }
    build_model(&Architecture::for_variant(variant), rng)
}

impl Model {
    /// Same architecture, every parameter zero. Also the gradient accumulator.
    pub fn zeros(arch: &Architecture) -> Result<Model> {
        arch.validate()?;
        let encoder = if arch.networks.is_empty() {
            Encoder::Stacked(
                (0..arch.lstm_layers)
                    .map(|l| {
                        let width = if l == 0 { arch.input_width } else { arch.lstm_hidden };
                        LstmParams::zeros(width, arch.lstm_hidden)
                    })
                    .collect(),
            )
        } else {
            Encoder::TsLstm(
                arch.networks
                    .iter()
                    .map(|c| TsLstmNetwork::zeros(*c, arch.input_width))
                    .collect(),
            )
        };
        let head = arch
            .head_widths()
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Ok(Model {
            arch: arch.clone(),
            encoder,
            head,
            seed: 0,
        })
    }

    pub fn zeros_like(&self) -> Model {
        Model::zeros(&self.arch).expect("architecture was validated at construction")
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    pub fn networks(&self) -> &[TsLstmNetwork] {
        match &self.encoder {
            Encoder::TsLstm(n) => n,
            Encoder::Stacked(_) => &[],
        }
    }

    fn check_inputs(&self, inputs: &[&Matrix]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        let want = (self.arch.seq_len, self.arch.input_width);
        for m in inputs {
            if m.shape() != want {
                return Err(Error::Dimension {
                    op: "model forward",
                    left: m.shape(),
                    right: want,
                });
            }
        }
        Ok(())
    }

    fn encode(&self, inputs: &[&Matrix]) -> Result<(Matrix, EncoderTape)> {
        let batch = inputs.len();
        match &self.encoder {
            Encoder::TsLstm(nets) => {
                let outs: Vec<(Matrix, TsLstmTape)> = nets
                    .par_iter()
                    .map(|n| n.forward_batch(inputs))
                    .collect::<Result<_>>()?;
                let mut feature = Matrix::zeros(batch, self.arch.feature_width());
                for b in 0..batch {
                    let row = feature.row_mut(b);
                    let mut off = 0;
                    for (f, _) in &outs {
                        row[off..off + f.cols()].copy_from_slice(f.row(b));
                        off += f.cols();
                    }
                }
                Ok((feature, EncoderTape::TsLstm(outs.into_iter().map(|(_, t)| t).collect())))
            }
            Encoder::Stacked(layers) => {
                let steps = self.arch.seq_len;
                let mut x = Matrix::zeros(steps * batch, self.arch.input_width);
                for t in 0..steps {
                    for (b, seq) in inputs.iter().enumerate() {
                        x.row_mut(t * batch + b).copy_from_slice(seq.row(t));
                    }
                }
                let mut tapes = Vec::with_capacity(layers.len());
                for p in layers {
                    let (hs, tape) = forward_batch(&x, batch, p)?;
                    tapes.push(tape);
                    x = hs;
                }
                let feature = Matrix::from_vec(
                    batch,
                    self.arch.lstm_hidden,
                    x.rows_slice((steps - 1) * batch, batch).to_vec(),
                )?;
                Ok((feature, EncoderTape::Stacked(tapes)))
            }
        }
    }

    /// Batched forward. `Some(rng)` selects training mode (dropout active);
    /// `None` is inference and consumes no randomness.
    /// Returns `batch × classes` probabilities.
    pub fn forward_batch(&self, inputs: &[&Matrix], mut training: Option<&mut Rng>) -> Result<(Matrix, ModelTape)> {
        self.check_inputs(inputs)?;
        let batch = inputs.len();
        let (feature, encoder) = self.encode(inputs)?;

        let layers = self.head.len();
        let mut layer_inputs = Vec::with_capacity(layers);
        let mut masks = Vec::with_capacity(layers);
        let mut pre_activations = Vec::with_capacity(layers.saturating_sub(1));
        let mut a = feature.clone();
        let mut logits = None;
        for (i, layer) in self.head.iter().enumerate() {
            let mask = match training.as_deref_mut() {
                Some(rng) if self.arch.dropout > 0.0 && self.arch.dropout_before(i) => {
                    let m = dropout_mask(a.len(), self.arch.dropout, rng)?;
                    a.as_mut_slice().iter_mut().zip(&m).for_each(|(x, k)| *x *= k);
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            let z = layer.forward(&a)?;
            layer_inputs.push(a);
            if i + 1 < layers {
                let mut h = z.clone();
                h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                pre_activations.push(z);
                a = h;
            } else {
                logits = Some(z);
                a = Matrix::zeros(0, 0);
            }
        }
        let mut probs = logits.expect("head has at least the classifier layer");
        for b in 0..batch {
            softmax_in_place(probs.row_mut(b));
        }
        let tape = ModelTape {
            batch,
            encoder,
            feature,
            layer_inputs,
            masks,
            pre_activations,
            probs: probs.clone(),
        };
        Ok((probs, tape))
    }

    pub fn forward(&self, seq: &Matrix, training: Option<&mut Rng>) -> Result<(Vec<f64>, ModelTape)> {
        let (p, tape) = self.forward_batch(&[seq], training)?;
        Ok((p.into_vec(), tape))
    }

    /// Back-propagates mean cross-entropy through the head into `grad`;
    /// returns the gradient with respect to the (pre-dropout) encoder feature.
    pub fn head_backward(&self, tape: &ModelTape, labels: &[usize], grad: &mut Model) -> Result<Matrix> {
        if labels.len() != tape.batch {
            return Err(Error::state(format!(
                "{} labels for a batch of {}",
                labels.len(),
                tape.batch
            )));
        }
        if tape.layer_inputs.len() != self.head.len() || grad.head.len() != self.head.len() {
            return Err(Error::state("tape or accumulator has a different head depth"));
        }
        let classes = self.arch.classes;
        let mut d = tape.probs.clone();
        let scale = 1.0 / tape.batch as f64;
        for (b, &label) in labels.iter().enumerate() {
            if label >= classes {
                return Err(Error::arg(format!("label {label} out of range for {classes} classes")));
            }
            let row = d.row_mut(b);
            row[label] -= 1.0;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        for i in (0..self.head.len()).rev() {
            let mut dx = self.head[i].backward(&tape.layer_inputs[i], &d, &mut grad.head[i])?;
            if let Some(mask) = &tape.masks[i] {
                dx.as_mut_slice().iter_mut().zip(mask).for_each(|(g, m)| *g *= m);
            }
            if i > 0 {
                let pre = &tape.pre_activations[i - 1];
                dx.as_mut_slice().iter_mut().zip(pre.as_slice()).for_each(|(g, z)| {
                    if *z <= 0.0 {
                        *g = 0.0
                    }
                });
            }
            d = dx;
        }
        Ok(d)
    }

    /// Adds encoder gradients for upstream `dfeature` into `grad`.
    pub fn encoder_backward(&self, tape: &ModelTape, dfeature: &Matrix, grad: &mut Model) -> Result<()> {
        if dfeature.shape() != (tape.batch, self.arch.feature_width()) {
            return Err(Error::state(format!(
                "feature gradient {:?} does not match ({}, {})",
                dfeature.shape(),
                tape.batch,
                self.arch.feature_width()
            )));
        }
        match (&self.encoder, &tape.encoder, &mut grad.encoder) {
            (Encoder::TsLstm(nets), EncoderTape::TsLstm(tapes), Encoder::TsLstm(gnets)) => {
                if tapes.len() != nets.len() || gnets.len() != nets.len() {
                    return Err(Error::state("network count differs between model, tape and gradients"));
                }
                let mut slices = Vec::with_capacity(nets.len());
                let mut off = 0;
                for n in nets {
                    let w = n.output_width();
                    let mut s = Matrix::zeros(tape.batch, w);
                    for b in 0..tape.batch {
                        s.row_mut(b).copy_from_slice(&dfeature.row(b)[off..off + w]);
                    }
                    slices.push(s);
                    off += w;
                }
                gnets
                    .par_iter_mut()
                    .enumerate()
                    .try_for_each(|(k, g)| nets[k].backward_batch(&tapes[k], &slices[k], g))
            }
            (Encoder::Stacked(layers), EncoderTape::Stacked(tapes), Encoder::Stacked(glayers)) => {
                if tapes.len() != layers.len() || glayers.len() != layers.len() {
                    return Err(Error::state("layer count differs between model, tape and gradients"));
                }
                let mut upstream = None;
                for l in (0..layers.len()).rev() {
                    let hg = match &upstream {
                        None => HiddenGrad::Final(dfeature),
                        Some(seq) => HiddenGrad::Sequence(seq),
                    };
                    let dx = backward_batch(&tapes[l], hg, &layers[l], &mut glayers[l])?;
                    upstream = Some(dx);
                }
                Ok(())
            }
            _ => Err(Error::state("encoder kind differs between model, tape and gradients")),
        }
    }

    /// Gradient of the batch-mean cross-entropy with respect to every parameter.
    pub fn backward(&self, tape: &ModelTape, labels: &[usize]) -> Result<Model> {
        let mut grad = self.zeros_like();
        let dfeature = self.head_backward(tape, labels, &mut grad)?;
        self.encoder_backward(tape, &dfeature, &mut grad)?;
        Ok(grad)
    }

    /// Inference-mode class and its probability; ties go to the lowest index.
    pub fn predict(&self, seq: &Matrix) -> Result<(usize, f64)> {
        let (p, _) = self.forward(seq, None)?;
        let c = argmax(&p);
        Ok((c, p[c]))
    }

    pub fn predict_proba(&self, inputs: &[&Matrix]) -> Result<Matrix> {
        Ok(self.forward_batch(inputs, None)?.0)
    }
}

impl Parameters for Model {
    fn params(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        match &self.encoder {
            Encoder::TsLstm(nets) => {
                for (k, n) in nets.iter().enumerate() {
                    out.extend(n.params().into_iter().map(|(s, m)| (format!("net{k}.{s}"), m)));
                }
            }
            Encoder::Stacked(layers) => {
                for (l, p) in layers.iter().enumerate() {
                    out.extend(p.params().into_iter().map(|(s, m)| (format!("lstm{l}.{s}"), m)));
                }
            }
        }
        for (i, d) in self.head.iter().enumerate() {
            out.push((format!("head{i}.w"), &d.w));
            out.push((format!("head{i}.b"), &d.b));
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        match &mut self.encoder {
            Encoder::TsLstm(nets) => {
                for (k, n) in nets.iter_mut().enumerate() {
                    out.extend(n.params_mut().into_iter().map(|(s, m)| (format!("net{k}.{s}"), m)));
                }
            }
            Encoder::Stacked(layers) => {
                for (l, p) in layers.iter_mut().enumerate() {
                    out.extend(p.params_mut().into_iter().map(|(s, m)| (format!("lstm{l}.{s}"), m)));
                }
            }
        }
        for (i, d) in self.head.iter_mut().enumerate() {
            out.push((format!("head{i}.w"), &mut d.w));
            out.push((format!("head{i}.b"), &mut d.b));
        }
        out
    }
}
