//! Minibatch training with Adam, evaluation reports and the five-way
//! architecture comparison.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_model, Architecture, Model, Variant};
use crate::numeric::{argmax, cross_entropy, AdamState, Matrix, Rng};
use crate::skeleton::{SkeletonSequence, NUM_CLASSES};

/// Batch size used when running inference over a whole set.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping;
    /// `None` trains for `max_epochs`.
    pub patience: Option<usize>,
    pub dropout: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Stop as soon as validation accuracy reaches this value.
    pub target_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 30,
            patience: Some(5),
            dropout: 0.2,
            seed: 0,
            shuffle: true,
            target_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Normalized model inputs and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub inputs: Vec<Matrix>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn from_sequences(seqs: &[SkeletonSequence]) -> Result<Self> {
        let mut out = Dataset {
            ids: Vec::with_capacity(seqs.len()),
            inputs: Vec::with_capacity(seqs.len()),
            labels: Vec::with_capacity(seqs.len()),
        };
        for s in seqs {
            let label = s
                .label
                .ok_or_else(|| Error::Data(format!("sequence {} has no label", s.id)))?;
            if label >= NUM_CLASSES {
                return Err(Error::Data(format!("sequence {} has label {label}", s.id)));
            }
            if !s.is_model_ready() {
                return Err(Error::Precondition(format!(
                    "sequence {} is not model-ready ({} frames, {} missing joints)",
                    s.id,
                    s.len(),
                    s.missing_count()
                )));
            }
            out.ids.push(s.id.clone());
            out.inputs.push(s.model_tensor()?);
            out.labels.push(label);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Per-class shuffled split; `fraction` of each class goes to the second set.
    pub fn stratified_split(&self, fraction: f64, rng: &mut Rng) -> (Dataset, Dataset) {
        let (mut keep, mut held) = (Vec::new(), Vec::new());
        for c in 0..NUM_CLASSES {
            let mut idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            rng.shuffle(&mut idx);
            let k = (idx.len() as f64 * fraction).round() as usize;
            held.extend_from_slice(&idx[..k]);
            keep.extend_from_slice(&idx[k..]);
        }
        keep.sort_unstable();
        held.sort_unstable();
        (self.subset(&keep), self.subset(&held))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training-mode (dropout on) loss over the epoch's batches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochMetrics>,
    /// Epoch whose parameters were returned, if any training happened.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_loss: f64,
    /// `confusion[true][predicted]`
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub count: usize,
}

/// Inference-mode metrics over a labeled set. Consumes no randomness.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::arg("cannot evaluate an empty set"));
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    let mut loss = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let refs: Vec<&Matrix> = data.inputs[start..end].iter().collect();
        let (p, _) = model.forward_batch(&refs, None)?;
        for (b, &label) in data.labels[start..end].iter().enumerate() {
            loss += cross_entropy(p.row(b), label)?;
            confusion[label][argmax(p.row(b))] += 1;
        }
    }
    let correct: usize = (0..NUM_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / data.len() as f64,
        mean_loss: loss / data.len() as f64,
        confusion,
        count: data.len(),
    })
}

pub fn train(model: Model, train_set: &Dataset, val_set: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    train_with_log(model, train_set, val_set, cfg, |_| {})
}

/// Trains with Adam on batch-mean cross-entropy. `on_epoch` sees every
/// epoch's metrics as soon as they are known.
///
/// With a non-empty validation set the parameters of the lowest validation
/// loss are returned; otherwise the final parameters are.
pub fn train_with_log(
    mut model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((model, history));
    }
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    model.arch.dropout = cfg.dropout;
    let root = Rng::new(cfg.seed);
    let mut order_rng = root.split("shuffle");
    let mut dropout_rng = root.split("dropout");
    let mut adam = AdamState::for_params(cfg.learning_rate, &model)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0;

    for epoch in 0..cfg.max_epochs {
        if cfg.shuffle {
            order_rng.shuffle(&mut order);
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&Matrix> = batch.iter().map(|&i| &train_set.inputs[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();
            let (p, tape) = model.forward_batch(&refs, Some(&mut dropout_rng))?;
            for (b, &l) in labels.iter().enumerate() {
                loss_sum += cross_entropy(p.row(b), l)?;
                correct += usize::from(argmax(p.row(b)) == l);
            }
            let grad = model.backward(&tape, &labels)?;
            adam.step_params(&mut model, &grad)?;
        }
        let mut metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss: None,
            val_accuracy: None,
        };
        let mut stop = false;
        if !val_set.is_empty() {
            let report = evaluate(&model, val_set)?;
            metrics.val_loss = Some(report.mean_loss);
            metrics.val_accuracy = Some(report.accuracy);
            if best.as_ref().is_none_or(|(l, _)| report.mean_loss < *l) {
                best = Some((report.mean_loss, model.clone()));
                history.best_epoch = Some(epoch);
                stale = 0;
            } else {
                stale += 1;
            }
            stop |= cfg.patience.is_some_and(|p| stale >= p);
            stop |= cfg.target_accuracy.is_some_and(|t| report.accuracy >= t);
        } else {
            history.best_epoch = Some(epoch);
        }
        on_epoch(&metrics);
        history.epochs.push(metrics);
        if stop {
            break;
        }
    }
    let model = match best {
        Some((_, m)) => m,
        None => model,
    };
    Ok((model, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub title: String,
    pub runs: Vec<RunResult>,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub mean_loss: f64,
    pub min_loss: f64,
    pub max_loss: f64,
    /// Published accuracy in percent; measured on a private dataset.
    pub reference_accuracy_pct: f64,
    pub reference_loss: f64,
    pub reference_reproducible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub train_count: usize,
    pub validation_count: usize,
    pub test_count: usize,
    pub rows: Vec<VariantSummary>,
}

impl Comparison {
    pub fn row(&self, v: Variant) -> Option<&VariantSummary> {
        self.rows.iter().find(|r| r.variant == v)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(
            s,
            "seeds {} | train {} / val {} / test {}",
            seeds.join(","),
            self.train_count,
            self.validation_count,
            self.test_count
        );
        let _ = writeln!(
            s,
            "{:<34} {:>22} {:>24} {:>18}",
            "model", "acc % mean [min,max]", "loss mean [min,max]", "reference*"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<34} {:>6.2} [{:>6.2},{:>6.2}] {:>8.4} [{:.4},{:.4}] {:>8.2} / {:.4}",
                r.title,
                100.0 * r.mean_accuracy,
                100.0 * r.min_accuracy,
                100.0 * r.max_accuracy,
                r.mean_loss,
                r.min_loss,
                r.max_loss,
                r.reference_accuracy_pct,
                r.reference_loss
            );
        }
        s.push_str("* published values on a private dataset; not reproducible here\n");
        s
    }
}

/// Fraction of the training set held out for early stopping in comparisons.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Trains every requested variant once per seed on the same data. Each seed
/// fixes the validation hold-out, the initialization and the training stream.
pub fn compare_models(
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    seeds: &[u64],
    variants: &[Variant],
    mut progress: impl FnMut(Variant, u64, &EpochMetrics),
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::arg("comparison needs at least one seed"));
    }
    let mut runs: Vec<Vec<RunResult>> = vec![Vec::new(); variants.len()];
    let (mut n_train, mut n_val) = (0, 0);
    for &seed in seeds {
        let mut split_rng = Rng::new(seed).split("validation");
        let (fit, val) = train_set.stratified_split(VALIDATION_FRACTION, &mut split_rng);
        n_train = fit.len();
        n_val = val.len();
        for (k, &v) in variants.iter().enumerate() {
            let model = build_model(&Architecture::for_variant(v), &Rng::new(seed).split("init"))?;
            let run_cfg = TrainConfig { seed, ..*cfg };
            let (model, hist) = train_with_log(model, &fit, &val, &run_cfg, |m| progress(v, seed, m))?;
            let report = evaluate(&model, test_set)?;
            runs[k].push(RunResult {
                seed,
                accuracy: report.accuracy,
                loss: report.mean_loss,
                epochs: hist.len(),
            });
        }
    }
    let rows = variants
        .iter()
        .zip(runs)
        .map(|(&v, runs)| {
            let acc: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let loss: Vec<f64> = runs.iter().map(|r| r.loss).collect();
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
            let min = |x: &[f64]| x.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = |x: &[f64]| x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let (ref_acc, ref_loss) = v.reference_metrics();
            VariantSummary {
                variant: v,
                title: v.title().to_string(),
                mean_accuracy: mean(&acc),
                min_accuracy: min(&acc),
                max_accuracy: max(&acc),
                mean_loss: mean(&loss),
                min_loss: min(&loss),
                max_loss: max(&loss),
                runs,
                reference_accuracy_pct: ref_acc,
                reference_loss: ref_loss,
                reference_reproducible: false,
            }
        })
        .collect();
    Ok(Comparison {
        seeds: seeds.to_vec(),
        train_count: n_train,
        validation_count: n_val,
        test_count: test_set.len(),
        rows,
    })
}
