//! Autoregressive sample-path forecasting for a backbone, optionally wrapped
//! with covariate adapters.

use serde::{Deserialize, Serialize};

use crate::adapters::CompositeModel;
use crate::backbone::{BackboneParams, KvCache};
use crate::error::{Error, Result};
use crate::metrics::{default_levels, quantiles_from_samples};
use crate::nn::rng::RngStream;
use crate::nn::softmax;
use crate::tokenizer::{detokenize, quantize, TokenizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sampling {
    /// Draw from softmax(logits).
    Categorical,
    /// Take the most likely token; every path is identical.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// `n_samples x horizon`, in the units of the original series.
    pub sample_paths: Vec<Vec<f64>>,
    /// `levels x horizon`
    pub quantile_matrix: Vec<Vec<f64>>,
    pub levels: Vec<f64>,
}

/// Everything a forecast needs besides the model.
#[derive(Debug, Clone, Copy)]
pub struct ForecastInput<'a> {
    pub context_tokens: &'a [usize],
    /// Covariate rows for the context followed by the horizon
    /// (`(context + horizon) x c`); ignored by a plain backbone.
    pub covariates: &'a [f64],
    pub scale: f64,
    pub horizon: usize,
    pub n_samples: usize,
}

enum Model<'a> {
    Plain(&'a BackboneParams),
    Composite(&'a CompositeModel),
}

impl Model<'_> {
    fn backbone(&self) -> &BackboneParams {
        match self {
            Model::Plain(b) => b,
            Model::Composite(m) => &m.backbone,
        }
    }

    fn cov_dim(&self) -> usize {
        match self {
            Model::Plain(_) => 0,
            Model::Composite(m) => m.covariate_dim(),
        }
    }

    fn embed(&self, tokens: &[usize], cov: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Plain(b) => b.embed_sequence(tokens),
            Model::Composite(m) => m.embed_rows(tokens, cov),
        }
    }

    fn logits(&self, h: &[f64], cov: &[f64], rows: usize) -> Result<Vec<f64>> {
        match self {
            Model::Plain(b) => Ok(b.logits_rows(h, rows)),
            Model::Composite(m) => m.output_logits(h, cov, rows),
        }
    }

    fn point(&self) -> Option<&CompositeModel> {
        match self {
            Model::Composite(m) if m.variant.is_point() => Some(m),
            _ => None,
        }
    }
}

/// Sample-path forecast of a covariate-free backbone.
#[allow(clippy::too_many_arguments)]
pub fn sample_forecast(
    params: &BackboneParams,
    context_tokens: &[usize],
    scale: f64,
    horizon: usize,
    n_samples: usize,
    tokenizer: &TokenizerConfig,
    sampling: Sampling,
    rng: &mut RngStream,
) -> Result<ForecastResult> {
    let input = ForecastInput {
        context_tokens,
        covariates: &[],
        scale,
        horizon,
        n_samples,
    };
    run(Model::Plain(params), &input, tokenizer, sampling, rng)
}

/// Sample-path forecast of a composite model fed with known covariates over
/// context and horizon. The point variant yields `n_samples` identical paths.
pub fn composite_forecast(
    model: &CompositeModel,
    input: &ForecastInput<'_>,
    tokenizer: &TokenizerConfig,
    sampling: Sampling,
    rng: &mut RngStream,
) -> Result<ForecastResult> {
    run(Model::Composite(model), input, tokenizer, sampling, rng)
}

fn repeat_row(row: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * n);
    for _ in 0..n {
        out.extend_from_slice(row);
    }
    out
}

fn draw(probs: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.uniform(0.0, 1.0);
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

fn run(model: Model<'_>, input: &ForecastInput<'_>, tokenizer: &TokenizerConfig, sampling: Sampling, rng: &mut RngStream) -> Result<ForecastResult> {
    let bb = model.backbone();
    let (d, v) = (bb.config.d_model, bb.config.vocab_size);
    let c = model.cov_dim();
    let ctx = input.context_tokens;
    let horizon = input.horizon;
    if input.n_samples == 0 || horizon == 0 {
        return Err(Error::Input("need at least one sample and one step".into()));
    }
    if ctx.is_empty() {
        return Err(Error::Input("empty forecast context".into()));
    }
    if ctx.len() + horizon - 1 > bb.config.context_length {
        return Err(Error::Input(format!(
            "context {} plus horizon {horizon} exceeds the model length {}",
            ctx.len(),
            bb.config.context_length
        )));
    }
    if !(input.scale.is_finite() && input.scale > 0.0) {
        return Err(Error::Input(format!("invalid scale {}", input.scale)));
    }
    if input.covariates.len() != (ctx.len() + horizon) * c {
        return Err(Error::shape(format!(
            "expected {} covariate values, got {}",
            (ctx.len() + horizon) * c,
            input.covariates.len()
        )));
    }
    let cov_row = |i: usize| &input.covariates[i * c..(i + 1) * c];

    let mut cache = KvCache::new(bb);
    let mut last = Vec::new();
    for (j, &tok) in ctx.iter().enumerate() {
        let e = model.embed(&[tok], cov_row(j))?;
        last = bb.decode_step(std::slice::from_mut(&mut cache), &e)?;
    }

    if let Some(m) = model.point() {
        let mut h = last;
        let mut path = Vec::with_capacity(horizon);
        for k in 0..horizon {
            let pos = ctx.len() + k;
            let f = m.point_rows(&h, cov_row(pos), 1)?[0];
            path.push(f * input.scale);
            if k + 1 < horizon {
                let e = model.embed(&[quantize(f, tokenizer)], cov_row(pos))?;
                h = bb.decode_step(std::slice::from_mut(&mut cache), &e)?;
            }
        }
        return finish(vec![path; input.n_samples]);
    }

    let s = input.n_samples;
    let mut caches = vec![cache; s];
    let mut h = repeat_row(&last, s);
    let mut tokens = vec![Vec::with_capacity(horizon); s];
    for k in 0..horizon {
        let pos = ctx.len() + k;
        let logits = model.logits(&h, &repeat_row(cov_row(pos), s), s)?;
        let mut step = Vec::with_capacity(s);
        for r in 0..s {
            let row = &logits[r * v..(r + 1) * v];
            let tok = match sampling {
                Sampling::Greedy => argmax(row),
                Sampling::Categorical => draw(&softmax(row), rng),
            };
            tokens[r].push(tok);
            step.push(tok);
        }
        if k + 1 < horizon {
            let e = model.embed(&step, &repeat_row(cov_row(pos), s))?;
            debug_assert_eq!(e.len(), s * d);
            h = bb.decode_step(&mut caches, &e)?;
        }
    }
    let paths = tokens
        .iter()
        .map(|t| detokenize(t, input.scale, tokenizer))
        .collect::<Result<Vec<_>>>()?;
    finish(paths)
}

fn finish(paths: Vec<Vec<f64>>) -> Result<ForecastResult> {
    let levels = default_levels();
    let q = quantiles_from_samples(&paths, &levels)?;
    Ok(ForecastResult {
        sample_paths: paths,
        quantile_matrix: q.values,
        levels,
    })
}
