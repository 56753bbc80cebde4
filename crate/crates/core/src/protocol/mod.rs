//! The experimental procedure: per-series splits, covariate standardization,
//! window sampling, step-budgeted training with best-checkpoint retention,
//! learning-rate selection and test-window evaluation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::adapters::{CompositeModel, TrainingWindow};
use crate::backbone::{BackboneConfig, BackboneParams};
use crate::error::{Error, Result};
use crate::forecast::{composite_forecast, sample_forecast, ForecastInput, ForecastResult, Sampling};
use crate::metrics::{mase, seasonality_for_frequency, wql, MetricReport, QuantileForecast};
use crate::nn::params::Parameters;
use crate::nn::rng::RngStream;
use crate::nn::{adam_step, AdamState};
use crate::synthgen::{Dataset, TimeSeriesRecord};
use crate::tokenizer::{tokenize_series, tokenize_with_scale, TokenizerConfig};
use crate::windows::{sample_window_bounds, window_scale};


const BATCH_STREAM: u64 = 1;
const VALIDATION_STREAM: u64 = 2;
const TEST_STREAM: u64 = 3;

/// Per-series partition: `[0, context_end)` for training, then the
/// validation window, then the test window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub context_end: usize,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

pub fn split_series(len: usize, prediction_length: usize) -> Result<SplitSpec> {
    let h = prediction_length;
    if h == 0 || len < 3 * h {
        return Err(Error::Input(format!(
            "series of length {len} is too short for prediction length {h}"
        )));
    }
    Ok(SplitSpec {
        context_end: len - 2 * h,
        validation: len - 2 * h..len - h,
        test: len - h..len,
    })
}

pub fn split_dataset(records: &[TimeSeriesRecord], prediction_length: usize) -> Result<Vec<SplitSpec>> {
    records.iter().map(|r| split_series(r.len(), prediction_length)).collect()
}

/// Divides each covariate dimension of each series by its mean absolute value
/// over that series' training context (divisor 1 for an all-zero dimension).
/// Returns the rescaled records and the divisors.
pub fn standardize_covariates(
    records: &[TimeSeriesRecord],
    splits: &[SplitSpec],
) -> Result<(Vec<TimeSeriesRecord>, Vec<Vec<f64>>)> {
    if records.len() != splits.len() {
        return Err(Error::shape("one split per series is required"));
    }
    let mut out = Vec::with_capacity(records.len());
    let mut factors = Vec::with_capacity(records.len());
    for (r, s) in records.iter().zip(splits) {
        let c = r.covariate_dim();
        if r.covariates.len() != r.len() || r.covariates.iter().any(|row| row.len() != c) {
            return Err(Error::shape(format!("covariates of {} are not {}x{c}", r.series_id, r.len())));
        }
        let n = s.context_end;
        let f: Vec<f64> = (0..c)
            .map(|j| {
                let m = r.covariates[..n].iter().map(|row| row[j].abs()).sum::<f64>() / n as f64;
                if m > 0.0 {
                    m
                } else {
                    1.0
                }
            })
            .collect();
        let mut scaled = r.clone();
        for row in &mut scaled.covariates {
            for (v, d) in row.iter_mut().zip(&f) {
                *v /= d;
            }
        }
        out.push(scaled);
        factors.push(f);
    }
    Ok((out, factors))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    pub series_id: String,
    pub target: Vec<f64>,
    /// Row-major `len x c`.
    pub covariates: Vec<f64>,
    pub split: SplitSpec,
}

impl PreparedSeries {
    pub fn covariate_rows(&self, c: usize, rows: Range<usize>) -> &[f64] {
        &self.covariates[rows.start * c..rows.end * c]
    }
}

/// A split, standardized dataset ready for training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub dataset_id: String,
    pub frequency: String,
    pub prediction_length: usize,
    pub covariate_dim: usize,
    pub series: Vec<PreparedSeries>,
    pub covariate_scales: Vec<Vec<f64>>,
}

impl PreparedDataset {
    /// Splits and standardizes `records`.
    pub fn new(dataset_id: &str, frequency: &str, records: &[TimeSeriesRecord], prediction_length: usize) -> Result<Self> {
        let splits = split_dataset(records, prediction_length)?;
        let (scaled, factors) = standardize_covariates(records, &splits)?;
        Self::assemble(dataset_id, frequency, &scaled, splits, factors, prediction_length)
    }

    /// Splits `records` but keeps covariates as given.
    pub fn unscaled(dataset_id: &str, frequency: &str, records: &[TimeSeriesRecord], prediction_length: usize) -> Result<Self> {
        let splits = split_dataset(records, prediction_length)?;
        let factors = records.iter().map(|r| vec![1.0; r.covariate_dim()]).collect();
        Self::assemble(dataset_id, frequency, records, splits, factors, prediction_length)
    }

    pub fn from_dataset(dataset: &Dataset) -> Result<Self> {
        Self::new(&dataset.id(), dataset.frequency(), &dataset.records, dataset.spec.prediction_length)
    }

    fn assemble(
        dataset_id: &str,
        frequency: &str,
        records: &[TimeSeriesRecord],
        splits: Vec<SplitSpec>,
        covariate_scales: Vec<Vec<f64>>,
        prediction_length: usize,
    ) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Input(format!("dataset {dataset_id} has no series")));
        };
        let c = first.covariate_dim();
        if records.iter().any(|r| r.covariate_dim() != c) {
            return Err(Error::shape("series disagree on covariate dimension"));
        }
        let series = records
            .iter()
            .zip(splits)
            .map(|(r, split)| PreparedSeries {
                series_id: r.series_id.clone(),
                target: r.target.clone(),
                covariates: r.covariates.iter().flatten().copied().collect(),
                split,
            })
            .collect();
        Ok(Self {
            dataset_id: dataset_id.to_string(),
            frequency: frequency.to_string(),
            prediction_length,
            covariate_dim: c,
            series,
            covariate_scales,
        })
    }
}

/// A random training window from the context region of `series`, tokenized
/// with the scale of its leading `forecast_context` values.
pub fn sample_training_window(
    config: &BackboneConfig,
    series: &PreparedSeries,
    c: usize,
    tokenizer: &TokenizerConfig,
    rng: &mut RngStream,
) -> Result<TrainingWindow> {
    let (start, len) = sample_window_bounds(series.split.context_end, config.context_length + 1, rng)?;
    let values = &series.target[start..start + len];
    let scale = window_scale(values, config.forecast_context(), tokenizer)?;
    Ok(TrainingWindow {
        tokens: tokenize_with_scale(values, scale, tokenizer),
        covariates: series.covariate_rows(c, start..start + len).to_vec(),
        values: values.iter().map(|v| v / scale).collect(),
    })
}

/// Anything that can forecast a prepared series.
#[derive(Debug, Clone, Copy)]
pub enum Forecaster<'a> {
    Backbone(&'a BackboneParams),
    Composite(&'a CompositeModel),
}

impl Forecaster<'_> {
    fn backbone(&self) -> &BackboneParams {
        match self {
            Forecaster::Backbone(b) => b,
            Forecaster::Composite(m) => &m.backbone,
        }
    }

    /// Forecast of `horizon` steps after `origin`, conditioned on at most the
    /// model's forecast context before it.
    #[allow(clippy::too_many_arguments)]
    pub fn forecast(
        &self,
        series: &PreparedSeries,
        c: usize,
        origin: usize,
        horizon: usize,
        n_samples: usize,
        tokenizer: &TokenizerConfig,
        sampling: Sampling,
        rng: &mut RngStream,
    ) -> Result<ForecastResult> {
        if origin + horizon > series.target.len() {
            return Err(Error::Input("forecast window runs past the series".into()));
        }
        let start = origin - self.backbone().config.forecast_context().min(origin);
        let ctx = tokenize_series(&series.target[start..origin], tokenizer)?;
        match self {
            Forecaster::Backbone(b) => sample_forecast(b, &ctx.tokens, ctx.scale, horizon, n_samples, tokenizer, sampling, rng),
            Forecaster::Composite(m) => {
                let input = ForecastInput {
                    context_tokens: &ctx.tokens,
                    covariates: series.covariate_rows(c, start..origin + horizon),
                    scale: ctx.scale,
                    horizon,
                    n_samples,
                };
                composite_forecast(m, &input, tokenizer, sampling, rng)
            }
        }
    }
}

fn to_quantiles(r: &ForecastResult) -> QuantileForecast {
    QuantileForecast {
        levels: r.levels.clone(),
        values: r.quantile_matrix.clone(),
    }
}

/// Pooled WQL of validation-window forecasts. Each series draws from its own
/// stream derived from `seed`, so repeated calls see identical randomness.
pub fn validation_wql(
    model: Forecaster<'_>,
    data: &PreparedDataset,
    n_samples: usize,
    seed: u64,
    tokenizer: &TokenizerConfig,
) -> Result<f64> {
    let base = RngStream::new(seed, VALIDATION_STREAM);
    let mut forecasts = Vec::with_capacity(data.series.len());
    let mut actuals = Vec::with_capacity(data.series.len());
    for (i, s) in data.series.iter().enumerate() {
        let mut rng = base.derive(i as u64);
        let h = s.split.validation.len();
        let r = model.forecast(s, data.covariate_dim, s.split.context_end, h, n_samples, tokenizer, Sampling::Categorical, &mut rng)?;
        forecasts.push(to_quantiles(&r));
        actuals.push(s.target[s.split.validation.clone()].to_vec());
    }
    wql(&forecasts, &actuals, &forecasts[0].levels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_grid: Vec<f64>,
    pub max_steps: usize,
    pub checkpoint_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Sample paths per series when scoring a checkpoint on validation.
    pub val_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_grid: vec![1e-2, 1e-3, 1e-4],
            max_steps: 1500,
            checkpoint_every: 100,
            batch_size: 32,
            seed: 0,
            val_samples: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint_every == 0 || !self.max_steps.is_multiple_of(self.checkpoint_every) {
            return Err(Error::Config(format!(
                "max_steps {} must be a multiple of checkpoint_every {}",
                self.max_steps, self.checkpoint_every
            )));
        }
        if self.batch_size == 0 || self.val_samples == 0 {
            return Err(Error::Config("batch_size and val_samples must be positive".into()));
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|lr| !(lr.is_finite() && *lr >= 0.0)) {
            return Err(Error::Config("learning-rate grid must be non-empty and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    /// Loss of the batch used for this step's update; absent at step 0.
    pub train_loss: Option<f64>,
    /// Validation WQL after this step, on checkpoint steps only.
    pub val_wql: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub lr: f64,
    pub best: CompositeModel,
    pub best_step: usize,
    pub best_val_wql: f64,
    pub trace: Vec<TraceRow>,
}

/// Adam training for `cfg.max_steps` steps. The initial model counts as the
/// step-0 checkpoint; every `checkpoint_every` steps the validation WQL is
/// computed and the retained checkpoint is replaced on strict improvement.
pub fn train_once(
    mut model: CompositeModel,
    data: &PreparedDataset,
    lr: f64,
    cfg: &TrainConfig,
    tokenizer: &TokenizerConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.covariate_dim != model.covariate_dim() {
        return Err(Error::Config(format!(
            "model expects {} covariates, dataset has {}",
            model.covariate_dim(),
            data.covariate_dim
        )));
    }
    let mut batch_rng = RngStream::new(cfg.seed, BATCH_STREAM);
    let val = |m: &CompositeModel, step: usize| -> Result<f64> {
        let v = validation_wql(Forecaster::Composite(m), data, cfg.val_samples, cfg.seed, tokenizer)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Training {
                step,
                reason: "non-finite validation WQL".into(),
            })
        }
    };
    let mut best_val = val(&model, 0)?;
    let mut best = model.clone();
    let mut best_step = 0;
    let mut trace = vec![TraceRow {
        step: 0,
        train_loss: None,
        val_wql: Some(best_val),
    }];
    let mut adam = AdamState::new(lr);
    let config = model.backbone.config;
    for step in 1..=cfg.max_steps {
        let mut windows = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let i = batch_rng.int_inclusive(0, data.series.len() - 1);
            windows.push(sample_training_window(&config, &data.series[i], data.covariate_dim, tokenizer, &mut batch_rng)?);
        }
        let mut grads = model.zeros_like();
        let loss = model.batch_loss(&windows, Some(&mut grads))?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                reason: format!("loss became {loss}"),
            });
        }
        adam_step(&mut model, &grads, &mut adam).map_err(|e| Error::Training {
            step,
            reason: e.to_string(),
        })?;
        let mut row = TraceRow {
            step,
            train_loss: Some(loss),
            val_wql: None,
        };
        if step % cfg.checkpoint_every == 0 {
            let v = val(&model, step)?;
            if v < best_val {
                best_val = v;
                best = model.clone();
                best_step = step;
            }
            row.val_wql = Some(v);
        }
        trace.push(row);
    }
    log::debug!("lr {lr:e}: best validation WQL {best_val:.4} at step {best_step}");
    Ok(TrainOutcome {
        lr,
        best,
        best_step,
        best_val_wql: best_val,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub lr: f64,
    pub best_val_wql: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub lr: f64,
    pub outcome: TrainOutcome,
    pub candidates: Vec<Candidate>,
}

/// Trains one model per learning rate, each from a fresh `factory()` model,
/// and keeps the one with the lowest best validation WQL. Ties go to the
/// smaller learning rate; runs that fail with a training error are excluded.
pub fn select_learning_rate(
    factory: impl Fn() -> Result<CompositeModel>,
    data: &PreparedDataset,
    cfg: &TrainConfig,
    tokenizer: &TokenizerConfig,
) -> Result<Selection> {
    cfg.validate()?;
    let mut grid = cfg.lr_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut candidates = Vec::with_capacity(grid.len());
    let mut chosen: Option<TrainOutcome> = None;
    for lr in grid {
        match train_once(factory()?, data, lr, cfg, tokenizer) {
            Ok(out) => {
                candidates.push(Candidate {
                    lr,
                    best_val_wql: Some(out.best_val_wql),
                    error: None,
                });
                if chosen.as_ref().is_none_or(|c| out.best_val_wql < c.best_val_wql) {
                    chosen = Some(out);
                }
            }
            Err(e @ Error::Training { .. }) => {
                log::warn!("learning rate {lr:e} excluded: {e}");
                candidates.push(Candidate {
                    lr,
                    best_val_wql: None,
                    error: Some(e.to_string()),
                });
            }
            Err(e) => return Err(e),
        }
    }
    match chosen {
        Some(outcome) => Ok(Selection {
            lr: outcome.lr,
            outcome,
            candidates,
        }),
        None => Err(Error::AllCandidatesFailed(
            candidates
                .iter()
                .map(|c| format!("lr {:e}: {}", c.lr, c.error.as_deref().unwrap_or("?")))
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub sampling: Sampling,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 100,
            seed: 0,
            sampling: Sampling::Categorical,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricReport,
    pub forecasts: Vec<ForecastResult>,
}

/// Scores test-window forecasts: WQL pooled over series, MASE of the median
/// path per series (series with an undefined MASE are excluded from the mean
/// and from `n_series_scored`).
pub fn evaluate_model(
    model: Forecaster<'_>,
    data: &PreparedDataset,
    model_id: &str,
    variant: &str,
    eval: &EvalConfig,
    tokenizer: &TokenizerConfig,
) -> Result<Evaluation> {
    let seasonality = seasonality_for_frequency(&data.frequency);
    let base = RngStream::new(eval.seed, TEST_STREAM);
    let mut forecasts = Vec::with_capacity(data.series.len());
    let mut quantiles = Vec::with_capacity(data.series.len());
    let mut actuals = Vec::with_capacity(data.series.len());
    let mut per_series_wql = Vec::with_capacity(data.series.len());
    let mut per_series_mase = Vec::with_capacity(data.series.len());
    for (i, s) in data.series.iter().enumerate() {
        let mut rng = base.derive(i as u64);
        let origin = s.split.test.start;
        let r = model.forecast(s, data.covariate_dim, origin, s.split.test.len(), eval.n_samples, tokenizer, eval.sampling, &mut rng)?;
        let q = to_quantiles(&r);
        let actual = s.target[s.split.test.clone()].to_vec();
        per_series_wql.push(wql(std::slice::from_ref(&q), std::slice::from_ref(&actual), &q.levels).unwrap_or(f64::NAN));
        let median = q
            .level(0.5)
            .ok_or_else(|| Error::Input("forecast lacks the median level".into()))?;
        per_series_mase.push(match mase(median, &actual, &s.target[..origin], seasonality) {
            Ok(m) => Some(m),
            Err(Error::UndefinedMetric(msg)) => {
                log::warn!("{}: MASE undefined ({msg}); series excluded", s.series_id);
                None
            }
            Err(e) => return Err(e),
        });
        quantiles.push(q);
        actuals.push(actual);
        forecasts.push(r);
    }
    let pooled = wql(&quantiles, &actuals, &quantiles[0].levels)?;
    let defined: Vec<f64> = per_series_mase.iter().flatten().copied().collect();
    let mean_mase = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(Evaluation {
        report: MetricReport {
            dataset_id: data.dataset_id.clone(),
            model_id: model_id.to_string(),
            variant: variant.to_string(),
            wql: pooled,
            mase: mean_mase,
            n_series_scored: defined.len(),
            seed: eval.seed,
            per_series_wql,
            per_series_mase,
        },
        forecasts,
    })
}
