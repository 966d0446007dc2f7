//! Minibatch training with Adam on the MAE objective and early stopping on a
//! held-out validation set.

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::{empty_masks, encode_target, fill_mask_row, mae_loss, Arch, ModelInput, ModelSpec, NnError, TrainedModel};
use crate::dataset::Corpus;

const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { epochs: 200, lr: 0.001, batch: 256, patience: 10, seed: 0 }
    }
}

/// Network inputs with codec-encoded targets, one row per example.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub inputs: Vec<ModelInput>,
    pub targets: Array2<f64>,
}

impl TrainData {
    pub fn new(inputs: Vec<ModelInput>, targets: Array2<f64>) -> Result<Self, NnError> {
        if inputs.len() != targets.nrows() {
            return Err(NnError::Shape(format!("{} inputs, {} targets", inputs.len(), targets.nrows())));
        }
        Ok(TrainData { inputs, targets })
    }

    pub fn from_corpus(corpus: &Corpus, spec: &ModelSpec) -> Result<Self, NnError> {
        let dims = spec.codec.dims();
        let mut targets = Array2::zeros((corpus.len(), dims));
        for (i, r) in corpus.records.iter().enumerate() {
            let t = encode_target(&r.truth, spec.codec)?;
            targets.row_mut(i).assign(&ndarray::ArrayView1::from(&t));
        }
        let inputs = match spec.arch {
            Arch::Feedforward => corpus.records.iter().map(|r| ModelInput::Frame(r.features)).collect(),
            Arch::Recurrent => corpus.sequences.iter().map(|s| ModelInput::Sequence(*s)).collect(),
        };
        Self::new(inputs, targets)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> TrainData {
        TrainData { inputs: idx.iter().map(|&i| self.inputs[i]).collect(), targets: self.targets.select(ndarray::Axis(0), idx) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

/// Per-epoch losses; epoch 0 is the untrained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub epochs: Vec<EpochLoss>,
}

impl LossHistory {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,train_mae,val_mae")?;
        for e in &self.epochs {
            writeln!(out, "{},{},{}", e.epoch, e.train_mae, e.val_mae)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Stops once the best validation loss has not strictly improved for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, since: 0 }
    }

    /// Records an epoch's loss; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val: f64) -> (bool, bool) {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience)
        }
    }
}

impl TrainedModel {
    /// Dropout-off predictions, one row per input.
    pub fn predict_many(&self, inputs: &[ModelInput]) -> Result<Array2<f64>, NnError> {
        let mut out = Array2::zeros((inputs.len(), self.spec.output_dim()));
        let w = self.weights();
        for (k, chunk) in inputs.chunks(EVAL_CHUNK).enumerate() {
            let x = self.input_matrix::<f64>(chunk)?;
            let (y, _) = self.forward_with(&w, x.view(), None, false);
            out.slice_mut(s![k * EVAL_CHUNK..k * EVAL_CHUNK + chunk.len(), ..]).assign(&y);
        }
        Ok(out)
    }

    pub fn evaluate_mae(&self, data: &TrainData) -> Result<f64, NnError> {
        let pred = self.predict_many(&data.inputs)?;
        mae_loss(pred.view(), data.targets.view())
    }
}

fn mae_grad(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = pred.len() as f64;
    let mut d = &pred - &target;
    d.mapv_inplace(|v| if v > 0.0 { 1.0 / n } else if v < 0.0 { -1.0 / n } else { 0.0 });
    d
}

/// Trains a fresh model and returns the parameters of the best validation
/// epoch together with the loss history.
pub fn train(
    spec: ModelSpec,
    train_set: &TrainData,
    val_set: &TrainData,
    hyper: &Hyper,
) -> Result<(TrainedModel, LossHistory), NnError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnError::EmptyDataset(format!("train {} / validation {}", train_set.len(), val_set.len())));
    }
    if train_set.targets.ncols() != spec.output_dim() || val_set.targets.ncols() != spec.output_dim() {
        return Err(NnError::Shape(format!("targets need {} columns", spec.output_dim())));
    }
    if hyper.batch == 0 {
        return Err(NnError::InvalidSpec("batch size 0".into()));
    }
    let mut model = TrainedModel::init(spec, hyper.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5E_ED0F_7A1A);
    let mut adam = AdamState::new(model.param_count());
    let mut history = LossHistory::default();

    let initial_val = model.evaluate_mae(val_set)?;
    let initial_train = model.evaluate_mae(train_set)?;
    history.epochs.push(EpochLoss { epoch: 0, train_mae: initial_train, val_mae: initial_val });
    let mut stopper = EarlyStopping::new(hyper.patience);
    stopper.observe(0, initial_val);
    let mut best = model.params.clone();
    let mut epochs_run = 0;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(hyper.batch) {
            let inputs: Vec<ModelInput> = batch.iter().map(|&i| train_set.inputs[i]).collect();
            let target = train_set.targets.select(ndarray::Axis(0), batch);
            let x = model.input_matrix::<f64>(&inputs)?;
            let mut masks = empty_masks::<f64>(&spec, batch.len());
            for r in 0..batch.len() {
                fill_mask_row(&mut masks, r, spec.dropout, &mut rng);
            }
            let (out, cache) = model.forward_with(&model.weights(), x.view(), Some(&masks), true);
            let loss = mae_loss(out.view(), target.view())?;
            loss_sum += loss * batch.len() as f64;
            let d_out = mae_grad(out.view(), target.view());
            let grads = model.backward(&cache.expect("cache"), d_out.view());
            adam_step(&mut model.params, &grads, &mut adam, hyper.lr);
        }
        model.f32_params = Default::default();
        let train_mae = loss_sum / train_set.len() as f64;
        let val_mae = model.evaluate_mae(val_set)?;
        history.epochs.push(EpochLoss { epoch, train_mae, val_mae });
        epochs_run = epoch;
        if !train_mae.is_finite() || !val_mae.is_finite() {
            return Err(NnError::TrainingFailed { msg: format!("loss diverged at epoch {epoch}"), history });
        }
        log::debug!("epoch {epoch}: train {train_mae:.5} val {val_mae:.5}");
        let (improved, stop) = stopper.observe(epoch, val_mae);
        if improved {
            best.clone_from(&model.params);
        }
        if stop {
            log::info!("early stop at epoch {epoch}, best epoch {}", stopper.best_epoch);
            break;
        }
    }
    let meta = super::TrainingMeta {
        seed: hyper.seed,
        epochs_run,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        initial_val_loss: initial_val,
    };
    Ok((TrainedModel::from_parts(spec, best, meta)?, history))
}
