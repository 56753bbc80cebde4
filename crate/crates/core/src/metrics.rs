//! Probabilistic forecast scoring: quantile loss, weighted quantile loss,
//! MASE, empirical quantiles and cross-model aggregation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The nine evaluation levels 0.1, 0.2, ..., 0.9.
pub fn default_levels() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Quantile values per level (rows) and horizon step (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Row for `level`, if present.
    pub fn level(&self, level: f64) -> Option<&[f64]> {
        self.levels
            .iter()
            .position(|l| (l - level).abs() < 1e-12)
            .map(|i| self.values[i].as_slice())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            levels: self.levels.clone(),
            values: self
                .values
                .iter()
                .map(|r| r.iter().map(|v| v * c).collect())
                .collect(),
        }
    }
}

/// Scores of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset_id: String,
    pub model_id: String,
    pub variant: String,
    pub wql: f64,
    /// Mean over series whose MASE is defined; NaN when none is.
    pub mase: f64,
    pub n_series_scored: usize,
    pub seed: u64,
    pub per_series_wql: Vec<f64>,
    pub per_series_mase: Vec<Option<f64>>,
}

fn check_level(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("quantile level {alpha} outside (0, 1)")))
    }
}

/// Pinball loss: `alpha (x - q)` if `x > q`, else `(1 - alpha)(q - x)`.
pub fn quantile_loss(q: f64, x: f64, alpha: f64) -> Result<f64> {
    check_level(alpha)?;
    Ok(if x > q {
        alpha * (x - q)
    } else {
        (1.0 - alpha) * (q - x)
    })
}

/// Weighted quantile loss pooled over all series and horizon steps:
/// the mean over levels of `2 Σ QL / Σ |x|`.
pub fn wql(forecasts: &[QuantileForecast], actuals: &[Vec<f64>], levels: &[f64]) -> Result<f64> {
    let per_level = wql_per_level(forecasts, actuals, levels)?;
    Ok(per_level.iter().sum::<f64>() / per_level.len() as f64)
}

/// `WQL_alpha` for each requested level.
pub fn wql_per_level(
    forecasts: &[QuantileForecast],
    actuals: &[Vec<f64>],
    levels: &[f64],
) -> Result<Vec<f64>> {
    if forecasts.len() != actuals.len() {
        return Err(Error::shape(format!(
            "{} forecasts for {} actual series",
            forecasts.len(),
            actuals.len()
        )));
    }
    if levels.is_empty() {
        return Err(Error::Input("no quantile levels".into()));
    }
    let denom: f64 = actuals.iter().flatten().map(|x| x.abs()).sum();
    if denom <= 0.0 {
        return Err(Error::UndefinedMetric("WQL with all-zero actuals".into()));
    }
    levels
        .iter()
        .map(|&alpha| {
            check_level(alpha)?;
            let mut num = 0.0;
            for (f, x) in forecasts.iter().zip(actuals) {
                let q = f.level(alpha).ok_or_else(|| {
                    Error::Input(format!("forecast does not contain level {alpha}"))
                })?;
                if q.len() != x.len() {
                    return Err(Error::shape(format!(
                        "forecast horizon {} vs actual horizon {}",
                        q.len(),
                        x.len()
                    )));
                }
                for (qv, xv) in q.iter().zip(x) {
                    num += quantile_loss(*qv, *xv, alpha)?;
                }
            }
            Ok(2.0 * num / denom)
        })
        .collect()
}

/// Mean absolute scaled error with seasonal-naive in-sample denominator.
pub fn mase(pred: &[f64], actual: &[f64], context: &[f64], seasonality: usize) -> Result<f64> {
    let (c, s, h) = (context.len(), seasonality, pred.len());
    if s < 1 || c <= s {
        return Err(Error::Input(format!(
            "MASE needs context length > seasonality >= 1 (got C={c}, S={s})"
        )));
    }
    if h == 0 || actual.len() != h {
        return Err(Error::shape(format!(
            "prediction length {h} vs actual length {}",
            actual.len()
        )));
    }
    let denom: f64 = (0..c - s).map(|t| (context[t] - context[t + s]).abs()).sum();
    if denom <= 0.0 {
        return Err(Error::UndefinedMetric(
            "seasonally constant context gives a zero MASE denominator".into(),
        ));
    }
    let num: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum();
    Ok((c - s) as f64 / h as f64 * num / denom)
}

/// Season length implied by a frequency tag.
pub fn seasonality_for_frequency(freq: &str) -> usize {
    match freq.trim().to_ascii_uppercase().as_str() {
        "D" | "1D" | "DAILY" => 7,
        "H" | "1H" | "HOURLY" => 24,
        "15T" | "15MIN" | "15MIN." => 96,
        other => {
            log::warn!("unknown frequency tag {other:?}; using seasonality 1");
            1
        }
    }
}

/// Empirical quantile of sorted values, linear interpolation between order
/// statistics at position `(n - 1) * alpha`.
pub fn empirical_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per-step empirical quantiles of `samples` (`n` paths of equal length).
pub fn quantiles_from_samples(samples: &[Vec<f64>], levels: &[f64]) -> Result<QuantileForecast> {
    let Some(first) = samples.first() else {
        return Err(Error::Input("need at least one sample path".into()));
    };
    let h = first.len();
    if samples.iter().any(|p| p.len() != h) {
        return Err(Error::shape("sample paths have different lengths"));
    }
    for &l in levels {
        check_level(l)?;
    }
    let mut values = vec![vec![0.0; h]; levels.len()];
    let mut column = Vec::with_capacity(samples.len());
    for t in 0..h {
        column.clear();
        column.extend(samples.iter().map(|p| p[t]));
        column.sort_by(f64::total_cmp);
        for (li, &l) in levels.iter().enumerate() {
            values[li][t] = empirical_quantile(&column, l);
        }
    }
    Ok(QuantileForecast {
        levels: levels.to_vec(),
        values,
    })
}

/// Geometric mean of `score / baseline` over entries where both are present.
pub fn agg_relative_score(scores: &[Option<f64>], baseline: &[Option<f64>]) -> Result<f64> {
    if scores.len() != baseline.len() {
        return Err(Error::Aggregation(format!(
            "{} scores vs {} baseline entries",
            scores.len(),
            baseline.len()
        )));
    }
    let mut log_sum = 0.0;
    let mut n = 0usize;
    for (s, b) in scores.iter().zip(baseline) {
        let (Some(s), Some(b)) = (s, b) else { continue };
        if !(s.is_finite() && b.is_finite()) {
            continue;
        }
        if *s <= 0.0 || *b <= 0.0 {
            return Err(Error::Aggregation(format!(
                "non-positive entry (score {s}, baseline {b})"
            )));
        }
        log_sum += (s / b).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Aggregation("no dataset with both scores defined".into()));
    }
    Ok((log_sum / n as f64).exp())
}

/// Mean rank per model (column) over datasets (rows); lower score is better,
/// ties share the average of the ranks they span, missing entries are
/// excluded and the remaining models ranked among themselves.
pub fn average_rank(scores: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
    let Some(first) = scores.first() else {
        return Err(Error::Aggregation("no datasets to rank".into()));
    };
    let m = first.len();
    if m < 2 {
        return Err(Error::Aggregation("ranking needs at least two models".into()));
    }
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for row in scores {
        if row.len() != m {
            return Err(Error::Aggregation("ragged score matrix".into()));
        }
        let present: Vec<(usize, f64)> = row
            .iter()
            .enumerate()
            .filter_map(|(j, v)| v.filter(|x| !x.is_nan()).map(|x| (j, x)))
            .collect();
        for &(j, v) in &present {
            let below = present.iter().filter(|(_, w)| *w < v).count();
            let equal = present.iter().filter(|(_, w)| *w == v).count();
            sums[j] += below as f64 + (equal as f64 + 1.0) / 2.0;
            counts[j] += 1;
        }
    }
    Ok(sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect())
}
