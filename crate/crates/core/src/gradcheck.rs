//! Central finite-difference verification of the analytic gradients.
//!
//! The loss is the batch-mean cross-entropy in training mode. Every
//! evaluation replays the same dropout stream, so masks stay fixed while
//! parameters are perturbed. Relative error is
//! `|a − n| / max(|a|, |n|, 1e-6)`; the floor keeps entries whose gradient is
//! numerically zero from dividing by rounding noise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Architecture, Model, Variant};
use crate::numeric::{cross_entropy, Matrix, Parameters, Rng};
use crate::skeleton::NUM_CLASSES;
use crate::synth::{synth_gesture, GestureSpec};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const REL_FLOOR: f64 = 1e-6;
/// LSTM width of the reduced clone.
pub const REDUCED_HIDDEN: usize = 8;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub seed: u64,
    pub checked: usize,
    pub max_relative_error: f64,
    /// `name[index]` of the worst entry.
    pub worst: String,
    pub tensors: Vec<TensorCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

fn batch_loss(model: &Model, inputs: &[&Matrix], labels: &[usize], dropout_seed: u64) -> Result<f64> {
    let (p, _) = model.forward_batch(inputs, Some(&mut Rng::new(dropout_seed)))?;
    let mut sum = 0.0;
    for (b, &l) in labels.iter().enumerate() {
        sum += cross_entropy(p.row(b), l)?;
    }
    Ok(sum / labels.len() as f64)
}

/// Compares analytic and numeric gradients on up to `per_tensor` randomly
/// chosen entries of every parameter tensor (all entries of smaller ones).
pub fn check_model(
    model: &Model,
    inputs: &[&Matrix],
    labels: &[usize],
    dropout_seed: u64,
    per_tensor: usize,
    rng: &mut Rng,
) -> Result<GradcheckReport> {
    let (_, tape) = model.forward_batch(inputs, Some(&mut Rng::new(dropout_seed)))?;
    let grad = model.backward(&tape, labels)?;
    compare_gradients(model, &grad, inputs, labels, dropout_seed, per_tensor, rng)
}

/// Scores a claimed gradient `grad` of `model` against finite differences.
pub fn compare_gradients(
    model: &Model,
    grad: &Model,
    inputs: &[&Matrix],
    labels: &[usize],
    dropout_seed: u64,
    per_tensor: usize,
    rng: &mut Rng,
) -> Result<GradcheckReport> {
    if per_tensor == 0 {
        return Err(Error::arg("need at least one entry per tensor"));
    }
    let grads = grad.params();
    if grads.len() != model.params().len() {
        return Err(Error::state("gradient does not match the model's parameter list"));
    }
    let mut probe = model.clone();
    let mut tensors = Vec::with_capacity(grads.len());
    let (mut worst, mut worst_at) = (0.0, String::new());
    for (t, (name, g)) in grads.iter().enumerate() {
        let mut entries: Vec<usize> = (0..g.len()).collect();
        if g.len() > per_tensor {
            rng.shuffle(&mut entries);
            entries.truncate(per_tensor);
        }
        let mut max = 0.0f64;
        for &k in &entries {
            let orig = probe.params()[t].1.as_slice()[k];
            probe.params_mut()[t].1.as_mut_slice()[k] = orig + STEP;
            let up = batch_loss(&probe, inputs, labels, dropout_seed)?;
            probe.params_mut()[t].1.as_mut_slice()[k] = orig - STEP;
            let down = batch_loss(&probe, inputs, labels, dropout_seed)?;
            probe.params_mut()[t].1.as_mut_slice()[k] = orig;
            let err = relative_error(g.as_slice()[k], (up - down) / (2.0 * STEP));
            if err >= worst {
                worst = err;
                worst_at = format!("{name}[{k}]");
            }
            max = max.max(err);
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            checked: entries.len(),
            max_relative_error: max,
        });
    }
    Ok(GradcheckReport {
        variant: model.variant(),
        seed: 0,
        checked: tensors.iter().map(|t| t.checked).sum(),
        max_relative_error: worst,
        worst: worst_at,
        tensors,
    })
}

/// Gradient check of the reduced clone of `variant` (8-unit LSTMs, halved
/// projections, same topology) on a small batch of synthetic gestures.
pub fn gradcheck_reduced(variant: Variant, seed: u64, per_tensor: usize) -> Result<GradcheckReport> {
    let root = Rng::new(seed);
    let model = build_model(&Architecture::reduced(variant, REDUCED_HIDDEN), &root.split("init"))?;
    let mut data_rng = root.split("data");
    let labels: Vec<usize> = (0..3).map(|i| (i + seed as usize) % NUM_CLASSES).collect();
    let inputs: Vec<Matrix> = labels
        .iter()
        .map(|&c| {
            let spec = GestureSpec {
                class: c,
                rhythm: data_rng.uniform(0.5, 2.0),
                noise_sigma: 0.02,
                amplitude_jitter: 0.2,
                seed: data_rng.next_u64(),
            };
            synth_gesture(&spec)?.model_tensor()
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&Matrix> = inputs.iter().collect();
    let dropout_seed = root.split("dropout").next_u64();
    let mut report = check_model(
        &model,
        &refs,
        &labels,
        dropout_seed,
        per_tensor,
        &mut root.split("entries"),
    )?;
    report.seed = seed;
    Ok(report)
}
