//! Feedforward and recurrent estimators written against `ndarray`, with
//! SELU activations, inverted dropout, Adam and an MAE objective.
//!
//! Parameters live in one flat `f64` vector described by a [`Layout`]. The
//! same kernels run in `f64` for training and in `f32` for batched
//! Monte-Carlo inference.

pub mod adam;
pub mod codec;
mod ff;
pub mod io;
mod lstm;
pub mod scalar;
pub mod train;

use std::sync::OnceLock;

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{FeatureVector, SequenceSample, FEATURE_DIM, SEQ_LEN, STEP_DIM};
use crate::rotmath::RotError;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use codec::{decode_prediction, encode_target, TargetCodec};
pub use io::{load_model, save_model};
pub use scalar::Scalar;
pub use train::{train, EarlyStopping, Hyper, LossHistory, TrainData};

pub const SELU_ALPHA: f64 = 1.6733;
pub const SELU_LAMBDA: f64 = 1.0507;

pub const DEFAULT_WIDTH: usize = 128;
pub const DEFAULT_FF_DEPTH: usize = 5;
pub const DEFAULT_RNN_DEPTH: usize = 4;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("dropout rate is zero, Monte-Carlo sampling has no stochasticity")]
    NoStochasticity,
    #[error("decode error: {0}")]
    Decode(#[from] RotError),
    #[error("training failed: {msg}")]
    TrainingFailed { msg: String, history: LossHistory },
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * (SELU_ALPHA * x.exp() - SELU_ALPHA)
    }
}

pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Mean absolute difference over every element.
pub fn mae_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64, NnError> {
    if pred.dim() != target.dim() {
        return Err(NnError::Shape(format!("pred {:?} vs target {:?}", pred.dim(), target.dim())));
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.iter().zip(target.iter()).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    Feedforward,
    Recurrent,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Feedforward => "ff",
            Arch::Recurrent => "rnn",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ff" | "feedforward" => Ok(Arch::Feedforward),
            "rnn" | "lstm" | "recurrent" => Ok(Arch::Recurrent),
            other => Err(format!("unknown architecture '{other}' (expected ff or rnn)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub width: usize,
    pub depth: usize,
    pub dropout: f64,
    pub codec: TargetCodec,
}

impl ModelSpec {
    /// Width 128; five feedforward layers or four LSTM layers; p = 0.2.
    pub fn new(arch: Arch, codec: TargetCodec) -> Self {
        let depth = match arch {
            Arch::Feedforward => DEFAULT_FF_DEPTH,
            Arch::Recurrent => DEFAULT_RNN_DEPTH,
        };
        ModelSpec { arch, width: DEFAULT_WIDTH, depth, dropout: DEFAULT_DROPOUT, codec }
    }

    pub fn input_dim(&self) -> usize {
        match self.arch {
            Arch::Feedforward => FEATURE_DIM,
            Arch::Recurrent => STEP_DIM,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.codec.dims()
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.width == 0 || self.depth == 0 {
            return Err(NnError::InvalidSpec(format!("width {} depth {}", self.width, self.depth)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(NnError::InvalidSpec(format!("dropout rate {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Named tensors packed back to back. Feedforward: `w{l}, b{l}` per layer
/// then `w_out, b_out`. Recurrent: `wx{l}, wh{l}, b{l}` per layer (gate
/// blocks i, f, g, o along columns) then the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub total: usize,
}

impl Layout {
    pub fn for_spec(spec: &ModelSpec) -> Layout {
        let mut tensors = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            tensors.push(TensorInfo { name, rows, cols, offset });
            offset += rows * cols;
        };
        let h = spec.width;
        let mut fan = spec.input_dim();
        for l in 0..spec.depth {
            match spec.arch {
                Arch::Feedforward => {
                    push(format!("w{l}"), fan, h);
                    push(format!("b{l}"), 1, h);
                }
                Arch::Recurrent => {
                    push(format!("wx{l}"), fan, 4 * h);
                    push(format!("wh{l}"), h, 4 * h);
                    push(format!("b{l}"), 1, 4 * h);
                }
            }
            fan = h;
        }
        push("w_out".into(), h, spec.output_dim());
        push("b_out".into(), 1, spec.output_dim());
        Layout { tensors, total: offset }
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        let t = &self.tensors[i];
        t.offset..t.offset + t.rows * t.cols
    }
}

pub(crate) struct Weights<'a, T> {
    layout: &'a Layout,
    data: &'a [T],
}

impl<'a, T> Weights<'a, T> {
    pub(crate) fn new(layout: &'a Layout, data: &'a [T]) -> Self {
        Weights { layout, data }
    }

    fn get(&self, i: usize) -> ArrayView2<'a, T> {
        let t = &self.layout.tensors[i];
        ArrayView2::from_shape((t.rows, t.cols), &self.data[self.layout.range(i)]).expect("layout")
    }
}

pub(crate) struct GradBuf<'a> {
    layout: &'a Layout,
    pub(crate) data: Vec<f64>,
}

impl<'a> GradBuf<'a> {
    pub(crate) fn new(layout: &'a Layout) -> Self {
        GradBuf { layout, data: vec![0.0; layout.total] }
    }

    fn set(&mut self, i: usize, g: &Array2<f64>) {
        let t = &self.layout.tensors[i];
        let r = self.layout.range(i);
        let mut view = ArrayViewMut2::from_shape((t.rows, t.cols), &mut self.data[r]).expect("layout");
        view.assign(g);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub initial_val_loss: f64,
}

/// One network input: a single frame for feedforward models, a window for
/// recurrent ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelInput {
    Frame(FeatureVector),
    Sequence(SequenceSample),
}

impl ModelInput {
    /// Arm lengths carried in the (latest) feature vector.
    pub fn arm_lengths(&self) -> (f64, f64) {
        let f = match self {
            ModelInput::Frame(f) => f,
            ModelInput::Sequence(s) => s.last(),
        };
        (f.l_u(), f.l_l())
    }
}

pub(crate) enum Cache<T> {
    Ff(ff::FfCache<T>),
    Lstm(lstm::LstmCache<T>),
}

#[derive(Debug)]
pub struct TrainedModel {
    spec: ModelSpec,
    layout: Layout,
    params: Vec<f64>,
    pub meta: TrainingMeta,
    f32_params: OnceLock<Vec<f32>>,
}

impl Clone for TrainedModel {
    fn clone(&self) -> Self {
        TrainedModel {
            spec: self.spec,
            layout: self.layout.clone(),
            params: self.params.clone(),
            meta: self.meta.clone(),
            f32_params: OnceLock::new(),
        }
    }
}

impl PartialEq for TrainedModel {
    fn eq(&self, o: &Self) -> bool {
        self.spec == o.spec && self.layout == o.layout && self.meta == o.meta && self.params == o.params
    }
}

impl TrainedModel {
    /// Fresh model: Gaussian weights with variance `1 / fan_in`, zero biases,
    /// LSTM forget-gate bias +1.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = Layout::for_spec(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        let h = spec.width;
        for (i, t) in layout.tensors.iter().enumerate() {
            let r = layout.range(i);
            if t.name.starts_with('w') {
                let fan_in = match spec.arch {
                    Arch::Recurrent if t.name != "w_out" => {
                        let l = i / 3;
                        (if l == 0 { spec.input_dim() } else { h }) + h
                    }
                    _ => t.rows,
                };
                let sd = (1.0 / fan_in as f64).sqrt();
                for p in &mut params[r] {
                    *p = sd * rng.sample::<f64, _>(StandardNormal);
                }
            } else if spec.arch == Arch::Recurrent && t.name != "b_out" {
                params[r][h..2 * h].fill(1.0);
            }
        }
        Self::from_parts(spec, params, TrainingMeta { seed, ..Default::default() })
    }

    pub fn from_parts(spec: ModelSpec, params: Vec<f64>, meta: TrainingMeta) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = Layout::for_spec(&spec);
        if params.len() != layout.total {
            return Err(NnError::Shape(format!("{} parameters, layout needs {}", params.len(), layout.total)));
        }
        Ok(TrainedModel { spec, layout, params, meta, f32_params: OnceLock::new() })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub(crate) fn weights(&self) -> Weights<'_, f64> {
        Weights::new(&self.layout, &self.params)
    }

    fn weights_f32(&self) -> Weights<'_, f32> {
        let data = self.f32_params.get_or_init(|| self.params.iter().map(|&p| p as f32).collect());
        Weights::new(&self.layout, data)
    }

    /// Stacks inputs into the kernel layout: `B x 16` rows for feedforward,
    /// step-major `6B x 17` rows for recurrent models.
    pub(crate) fn input_matrix<T: Scalar>(&self, inputs: &[ModelInput]) -> Result<Array2<T>, NnError> {
        let b = inputs.len();
        match self.spec.arch {
            Arch::Feedforward => {
                let mut x = Array2::zeros((b, FEATURE_DIM));
                for (r, inp) in inputs.iter().enumerate() {
                    let ModelInput::Frame(f) = inp else {
                        return Err(NnError::Shape("feedforward model needs a single feature vector".into()));
                    };
                    for (j, &v) in f.0.iter().enumerate() {
                        x[[r, j]] = T::of(v);
                    }
                }
                Ok(x)
            }
            Arch::Recurrent => {
                let mut x = Array2::zeros((SEQ_LEN * b, STEP_DIM));
                for (r, inp) in inputs.iter().enumerate() {
                    let ModelInput::Sequence(s) = inp else {
                        return Err(NnError::Shape("recurrent model needs a six-step window".into()));
                    };
                    let flat = s.flatten();
                    for t in 0..SEQ_LEN {
                        for j in 0..STEP_DIM {
                            x[[t * b + r, j]] = T::of(flat[t * STEP_DIM + j]);
                        }
                    }
                }
                Ok(x)
            }
        }
    }

    pub(crate) fn forward_with<T: Scalar>(
        &self,
        w: &Weights<'_, T>,
        x: ArrayView2<'_, T>,
        masks: Option<&[Array2<T>]>,
        keep_cache: bool,
    ) -> (Array2<T>, Option<Cache<T>>) {
        match self.spec.arch {
            Arch::Feedforward => {
                let (out, c) = ff::forward(w, self.spec.depth, x, masks, keep_cache);
                (out, c.map(Cache::Ff))
            }
            Arch::Recurrent => {
                let (out, c) = lstm::forward(w, self.spec.depth, self.spec.width, x, masks, keep_cache);
                (out, c.map(Cache::Lstm))
            }
        }
    }

    /// Gradient of `sum(d_out * output)` with respect to every parameter.
    pub(crate) fn backward(&self, cache: &Cache<f64>, d_out: ArrayView2<'_, f64>) -> Vec<f64> {
        let w = self.weights();
        let mut g = GradBuf::new(&self.layout);
        match cache {
            Cache::Ff(c) => ff::backward(&w, self.spec.depth, c, d_out, &mut g),
            Cache::Lstm(c) => lstm::backward(&w, self.spec.depth, self.spec.width, c, d_out, &mut g),
        }
        g.data
    }

    fn seeded_masks(&self, rows: usize, mask_seed: Option<u64>) -> Option<Vec<Array2<f64>>> {
        mask_seed.map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = empty_masks(&self.spec, rows);
            for r in 0..rows {
                fill_mask_row(&mut m, r, self.spec.dropout, &mut rng);
            }
            m
        })
    }

    /// Batch output under explicit `params` (same layout as the model). With
    /// `mask_seed`, one dropout mask per row is drawn from a generator seeded
    /// by it; without, dropout is off.
    pub fn forward_batch(
        &self,
        params: &[f64],
        inputs: &[ModelInput],
        mask_seed: Option<u64>,
    ) -> Result<Array2<f64>, NnError> {
        if params.len() != self.layout.total {
            return Err(NnError::Shape(format!("{} parameters, expected {}", params.len(), self.layout.total)));
        }
        let x = self.input_matrix::<f64>(inputs)?;
        let masks = self.seeded_masks(inputs.len(), mask_seed);
        let (out, _) = self.forward_with(&Weights::new(&self.layout, params), x.view(), masks.as_deref(), false);
        Ok(out)
    }

    /// Gradient of `sum(d_out * forward_batch(params, inputs, mask_seed))`
    /// at the model's own parameters, by backpropagation.
    pub fn gradient(
        &self,
        inputs: &[ModelInput],
        mask_seed: Option<u64>,
        d_out: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>, NnError> {
        if d_out.dim() != (inputs.len(), self.spec.output_dim()) {
            return Err(NnError::Shape(format!("d_out is {:?}", d_out.dim())));
        }
        let x = self.input_matrix::<f64>(inputs)?;
        let masks = self.seeded_masks(inputs.len(), mask_seed);
        let (_, cache) = self.forward_with(&self.weights(), x.view(), masks.as_deref(), true);
        Ok(self.backward(&cache.expect("cache requested"), d_out))
    }

    /// One `f64` forward pass. With `rng`, a fresh dropout mask is drawn
    /// from it; without, dropout is off.
    pub fn predict_raw<R: Rng + ?Sized>(&self, input: &ModelInput, rng: Option<&mut R>) -> Result<Vec<f64>, NnError> {
        let x = self.input_matrix::<f64>(std::slice::from_ref(input))?;
        let masks = rng.map(|r| {
            let mut m = empty_masks(&self.spec, 1);
            fill_mask_row(&mut m, 0, self.spec.dropout, r);
            m
        });
        let (out, _) = self.forward_with(&self.weights(), x.view(), masks.as_deref(), false);
        Ok(out.row(0).to_vec())
    }

    /// `passes` dropout-on forward passes of one input, batched in `f32`.
    /// Pass `i` draws its mask from a generator seeded by
    /// `pass_seed(seed, i)`, so the result does not depend on batching.
    pub fn mc_raw(&self, input: &ModelInput, passes: usize, seed: u64) -> Result<Vec<Vec<f64>>, NnError> {
        let x = self.input_matrix::<f32>(std::slice::from_ref(input))?;
        let mut masks = empty_masks::<f32>(&self.spec, passes);
        for i in 0..passes {
            let mut rng = ChaCha8Rng::seed_from_u64(pass_seed(seed, i as u64));
            fill_mask_row(&mut masks, i, self.spec.dropout, &mut rng);
        }
        let (out, _) = self.forward_with(&self.weights_f32(), x.view(), Some(&masks), false);
        Ok(out.outer_iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect())
    }
}

pub fn ff_forward<R: Rng + ?Sized>(
    model: &TrainedModel,
    x: &FeatureVector,
    dropout_on: bool,
    rng: &mut R,
) -> Result<Vec<f64>, NnError> {
    if model.spec.arch != Arch::Feedforward {
        return Err(NnError::Shape("ff_forward needs a feedforward model".into()));
    }
    model.predict_raw(&ModelInput::Frame(*x), dropout_on.then_some(rng))
}

pub fn rnn_forward<R: Rng + ?Sized>(
    model: &TrainedModel,
    s: &SequenceSample,
    dropout_on: bool,
    rng: &mut R,
) -> Result<Vec<f64>, NnError> {
    if model.spec.arch != Arch::Recurrent {
        return Err(NnError::Shape("rnn_forward needs a recurrent model".into()));
    }
    model.predict_raw(&ModelInput::Sequence(*s), dropout_on.then_some(rng))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `i`-th stochastic pass under `master`.
pub fn pass_seed(master: u64, i: u64) -> u64 {
    splitmix64(master ^ splitmix64(i))
}

pub(crate) fn empty_masks<T: Scalar>(spec: &ModelSpec, rows: usize) -> Vec<Array2<T>> {
    (0..spec.depth).map(|_| Array2::zeros((rows, spec.width))).collect()
}

/// Draws row `row` of every dropout site, site by site, unit by unit. Kept
/// units are scaled by `1 / (1 - p)`.
pub(crate) fn fill_mask_row<T: Scalar, R: Rng + ?Sized>(masks: &mut [Array2<T>], row: usize, p: f64, rng: &mut R) {
    let keep = T::of(1.0 / (1.0 - p));
    for m in masks.iter_mut() {
        for v in m.row_mut(row).iter_mut() {
            *v = if rng.random::<f64>() >= p { keep } else { T::zero() };
        }
    }
}
