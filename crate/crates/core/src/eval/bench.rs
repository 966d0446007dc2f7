use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_metrics, kfold_by_session, kfold_split, position_errors, summarize, ErrorRecord, EvalError, Field, Fold,
    Histogram, MetricSummary, SplitStrategy, PURGE_GAP,
};
use crate::dataset::Corpus;
use crate::nn::{
    decode_prediction, pass_seed, train, Arch, Hyper, ModelInput, ModelSpec, TargetCodec, TrainData, TrainedModel,
    DEFAULT_DROPOUT, DEFAULT_FF_DEPTH, DEFAULT_RNN_DEPTH, DEFAULT_WIDTH,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub folds: usize,
    pub split: SplitStrategy,
    pub width: usize,
    pub ff_depth: usize,
    pub rnn_depth: usize,
    pub dropout: f64,
    pub hyper: Hyper,
    /// Tail of each training split held out for early stopping.
    pub val_fraction: f64,
    pub cells: Vec<(Arch, TargetCodec)>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            folds: 10,
            split: SplitStrategy::TimeBlocks,
            width: DEFAULT_WIDTH,
            ff_depth: DEFAULT_FF_DEPTH,
            rnn_depth: DEFAULT_RNN_DEPTH,
            dropout: DEFAULT_DROPOUT,
            hyper: Hyper::default(),
            val_fraction: 0.1,
            cells: full_matrix(),
        }
    }
}

impl BenchConfig {
    /// Reduced networks and schedule that keep the 10-fold matrix within
    /// desk-scale budgets on a single CPU core.
    pub fn desk() -> Self {
        BenchConfig {
            width: 32,
            ff_depth: 2,
            rnn_depth: 2,
            hyper: Hyper { epochs: 20, patience: 5, ..Hyper::default() },
            ..BenchConfig::default()
        }
    }
}

/// Both architectures crossed with every codec, in a fixed order that also
/// defines each cell's seed.
pub fn full_matrix() -> Vec<(Arch, TargetCodec)> {
    [Arch::Feedforward, Arch::Recurrent].into_iter().flat_map(|a| TargetCodec::ALL.map(|c| (a, c))).collect()
}

impl BenchConfig {
    fn spec(&self, arch: Arch, codec: TargetCodec) -> ModelSpec {
        let depth = match arch {
            Arch::Feedforward => self.ff_depth,
            Arch::Recurrent => self.rnn_depth,
        };
        ModelSpec { width: self.width, depth, dropout: self.dropout, ..ModelSpec::new(arch, codec) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerField {
    pub wrist: f64,
    pub elbow: f64,
    pub combined: f64,
}

impl PerField {
    fn from_fn(mut f: impl FnMut(Field) -> f64) -> Self {
        PerField { wrist: f(Field::Wrist), elbow: f(Field::Elbow), combined: f(Field::Combined) }
    }

    pub fn get(&self, field: Field) -> f64 {
        match field {
            Field::Wrist => self.wrist,
            Field::Elbow => self.elbow,
            Field::Combined => self.combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub mean: PerField,
    pub rmse: PerField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub arch: Arch,
    pub codec: TargetCodec,
    /// Summaries over the pooled test errors of all folds.
    pub wrist: Option<MetricSummary>,
    pub elbow: Option<MetricSummary>,
    pub combined: Option<MetricSummary>,
    /// Standard deviation across folds of the per-fold mean and RMSE.
    pub fold_mean_std: Option<PerField>,
    pub fold_rmse_std: Option<PerField>,
    pub folds: Vec<FoldStats>,
    pub seconds: f64,
    pub error: Option<String>,
}

impl CellResult {
    pub fn label(&self) -> String {
        format!("{}_{}", self.arch.name(), self.codec.name())
    }

    pub fn summary(&self, field: Field) -> Option<&MetricSummary> {
        match field {
            Field::Wrist => self.wrist.as_ref(),
            Field::Elbow => self.elbow.as_ref(),
            Field::Combined => self.combined.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub n_samples: usize,
    pub cells: Vec<CellResult>,
}

impl BenchReport {
    pub fn cell(&self, arch: Arch, codec: TargetCodec) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.arch == arch && c.codec == codec)
    }

    /// One row per cell: `arch,codec` then mean/median/rmse/std for wrist,
    /// elbow and combined, in meters. Failed cells leave the numbers empty.
    pub fn write_results_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header = vec!["arch".to_string(), "codec".to_string()];
        for f in Field::ALL {
            for s in ["mean", "median", "rmse", "std"] {
                header.push(format!("{}_{s}", f.name()));
            }
        }
        writeln!(out, "{}", header.join(","))?;
        for c in &self.cells {
            let mut row = vec![c.arch.name().to_string(), c.codec.name().to_string()];
            for f in Field::ALL {
                match c.summary(f) {
                    Some(m) => row.extend([m.mean, m.median, m.rmse, m.std].map(|v| v.to_string())),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Dropout-off position errors of `model` on the examples `idx`.
pub fn evaluate_model(model: &TrainedModel, corpus: &Corpus, idx: &[usize]) -> Result<Vec<ErrorRecord>, EvalError> {
    let spec = model.spec();
    let inputs: Vec<ModelInput> = idx
        .iter()
        .map(|&i| match spec.arch {
            Arch::Feedforward => ModelInput::Frame(corpus.records[i].features),
            Arch::Recurrent => ModelInput::Sequence(corpus.sequences[i]),
        })
        .collect();
    let raw = model.predict_many(&inputs)?;
    idx.iter()
        .zip(&inputs)
        .zip(raw.rows())
        .map(|((&i, input), row)| {
            let (l_u, l_l) = input.arm_lengths();
            let pose = decode_prediction(row.as_slice().expect("contiguous row"), l_u, l_l, spec.codec)?;
            position_errors(&pose, &corpus.records[i].truth)
        })
        .collect()
}

fn fold_std(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    summarize(&v).map(|s| s.std).unwrap_or(0.0)
}

fn run_cell(
    corpus: &Corpus,
    folds: &[Fold],
    cfg: &BenchConfig,
    arch: Arch,
    codec: TargetCodec,
    cell_seed: u64,
    hist_dir: Option<&Path>,
) -> Result<(Vec<ErrorRecord>, Vec<FoldStats>), EvalError> {
    let spec = cfg.spec(arch, codec);
    let data = TrainData::from_corpus(corpus, &spec)?;
    let mut pooled = Vec::new();
    let mut stats = Vec::new();
    for (k, fold) in folds.iter().enumerate() {
        let n_val = ((fold.train.len() as f64 * cfg.val_fraction).ceil() as usize).clamp(1, fold.train.len().max(1));
        let (fit_idx, val_idx) = fold.train.split_at(fold.train.len().saturating_sub(n_val));
        let hyper = Hyper { seed: pass_seed(cell_seed, k as u64), ..cfg.hyper };
        let (model, _) = train(spec, &data.subset(fit_idx), &data.subset(val_idx), &hyper)?;
        let errors = evaluate_model(&model, corpus, &fold.test)?;
        if let Some(dir) = hist_dir {
            Histogram::from_errors_m(errors.iter().map(|e| e.wrist_err))
                .save_csv(dir.join(format!("{}_{}_fold{k:02}.csv", arch.name(), codec.name())))?;
        }
        let mean = PerField::from_fn(|f| aggregate_metrics(&errors, f).map(|s| s.mean).unwrap_or(f64::NAN));
        let rmse = PerField::from_fn(|f| aggregate_metrics(&errors, f).map(|s| s.rmse).unwrap_or(f64::NAN));
        log::info!(
            "{}+{} fold {}/{}: combined mean {:.2} cm after {} epochs",
            arch.name(),
            codec.name(),
            k + 1,
            folds.len(),
            mean.combined * 100.0,
            model.meta.epochs_run
        );
        stats.push(FoldStats {
            fold: k,
            n_train: fit_idx.len(),
            n_test: fold.test.len(),
            epochs_run: model.meta.epochs_run,
            best_epoch: model.meta.best_epoch,
            mean,
            rmse,
        });
        pooled.extend(errors);
    }
    Ok((pooled, stats))
}

/// Cross-validates every configured cell. A failing cell is reported with its
/// error and the remaining cells still run. With `out_dir`, writes
/// `results.csv`, `summary.json` and `hist/<arch>_<codec>_foldNN.csv`.
pub fn bench_matrix(corpus: &Corpus, cfg: &BenchConfig, out_dir: Option<&Path>) -> Result<BenchReport, EvalError> {
    let folds = match cfg.split {
        SplitStrategy::TimeBlocks => kfold_split(corpus.len(), cfg.folds, PURGE_GAP)?,
        SplitStrategy::BySession => {
            let sessions: Vec<u32> = corpus.records.iter().map(|r| r.session).collect();
            kfold_by_session(&sessions, cfg.folds, cfg.hyper.seed)?
        }
    };
    let hist_dir = out_dir.map(|d| d.join("hist"));
    if let Some(d) = &hist_dir {
        std::fs::create_dir_all(d)?;
    }
    let order = full_matrix();
    let mut cells = Vec::new();
    for &(arch, codec) in &cfg.cells {
        let index = order.iter().position(|&c| c == (arch, codec)).expect("cell in matrix") as u64;
        let start = Instant::now();
        let outcome = run_cell(corpus, &folds, cfg, arch, codec, pass_seed(cfg.hyper.seed, index), hist_dir.as_deref());
        let seconds = start.elapsed().as_secs_f64();
        let cell = match outcome {
            Ok((pooled, stats)) => CellResult {
                arch,
                codec,
                wrist: Some(aggregate_metrics(&pooled, Field::Wrist)?),
                elbow: Some(aggregate_metrics(&pooled, Field::Elbow)?),
                combined: Some(aggregate_metrics(&pooled, Field::Combined)?),
                fold_mean_std: Some(PerField::from_fn(|f| {
                    fold_std(stats.iter().map(|s| s.mean.get(f)))
                })),
                fold_rmse_std: Some(PerField::from_fn(|f| {
                    fold_std(stats.iter().map(|s| s.rmse.get(f)))
                })),
                folds: stats,
                seconds,
                error: None,
            },
            Err(e) => {
                log::warn!("{}+{} failed: {e}", arch.name(), codec.name());
                CellResult {
                    arch,
                    codec,
                    wrist: None,
                    elbow: None,
                    combined: None,
                    fold_mean_std: None,
                    fold_rmse_std: None,
                    folds: Vec::new(),
                    seconds,
                    error: Some(e.to_string()),
                }
            }
        };
        cells.push(cell);
    }
    let report = BenchReport { config: cfg.clone(), n_samples: corpus.len(), cells };
    if let Some(dir) = out_dir {
        let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("results.csv"))?);
        report.write_results_csv(&mut csv)?;
        csv.flush()?;
        std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}
