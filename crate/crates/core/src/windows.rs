//! Training-window sampling shared by pretraining and adapter training.

use crate::error::{Error, Result};
use crate::nn::rng::RngStream;
use crate::tokenizer::{mean_abs_scale, tokenize_with_scale, TokenizerConfig};

/// Scale of a window: mean |value| over its leading `context` observations
/// (never including the final value).
pub fn window_scale(values: &[f64], context: usize, cfg: &TokenizerConfig) -> Result<f64> {
    let n = context.min(values.len().saturating_sub(1)).max(1);
    mean_abs_scale(&values[..n.min(values.len())], cfg.scale_epsilon)
}

/// Uniform window start such that `len` values fit before `region_end`.
/// Returns `(start, len)` with `len` shrunk when the region is short.
pub fn sample_window_bounds(region_end: usize, len: usize, rng: &mut RngStream) -> Result<(usize, usize)> {
    if region_end < 2 {
        return Err(Error::Input(format!(
            "region of length {region_end} cannot hold a training window"
        )));
    }
    let len = len.min(region_end);
    let start = rng.int_inclusive(0, region_end - len);
    Ok((start, len))
}

/// Samples a window from `series[..region_end]` and tokenizes it with the
/// scale of its leading `context` values.
pub fn sample_token_window(
    series: &[f64],
    region_end: usize,
    len: usize,
    context: usize,
    cfg: &TokenizerConfig,
    rng: &mut RngStream,
) -> Result<(Vec<usize>, f64)> {
    let (start, len) = sample_window_bounds(region_end.min(series.len()), len, rng)?;
    let values = &series[start..start + len];
    let scale = window_scale(values, context, cfg)?;
    Ok((tokenize_with_scale(values, scale, cfg), scale))
}
