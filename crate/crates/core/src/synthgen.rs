//! Synthetic benchmark of target series driven by a single covariate:
//! four main-signal families, four covariate kinds and two combination
//! operators, 32 datasets in total.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::rng::{mix_seed, RngStream};

/// Reference length the event counts below are quoted for.
pub const PAPER_LENGTH: usize = 1827;
const PAPER_SPIKES: usize = 500;
const PAPER_STEPS: usize = 125;
const PAPER_BELLS: usize = 125;
const PAPER_MAX_DURATION: usize = 30;
const STEP_RETRIES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Single,
    Simple,
    Diverse,
    Noisy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    Spikes,
    Steps,
    Bells,
    Arp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operator {
    Add,
    Mult,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleProfile {
    Paper,
    Desk,
}

impl SignalKind {
    pub const ALL: [SignalKind; 4] = [Self::Single, Self::Simple, Self::Diverse, Self::Noisy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Simple => "simple",
            Self::Diverse => "diverse",
            Self::Noisy => "noisy",
        }
    }

    /// Single and Simple signals form the "simple" collection.
    pub fn is_simple(self) -> bool {
        matches!(self, Self::Single | Self::Simple)
    }
}

impl CovariateKind {
    pub const ALL: [CovariateKind; 4] = [Self::Spikes, Self::Steps, Self::Bells, Self::Arp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Spikes => "spikes",
            Self::Steps => "steps",
            Self::Bells => "bells",
            Self::Arp => "arp",
        }
    }
}

impl Operator {
    pub const ALL: [Operator; 2] = [Self::Add, Self::Mult];

    pub fn name(self) -> &'static str {
        match self {
            Self::Add => "add",
            Self::Mult => "mult",
        }
    }
}

impl ScaleProfile {
    pub fn length(self) -> usize {
        match self {
            Self::Paper => PAPER_LENGTH,
            Self::Desk => 512,
        }
    }

    pub fn n_series(self) -> usize {
        match self {
            Self::Paper => 100,
            Self::Desk => 20,
        }
    }

    pub fn prediction_length(self) -> usize {
        match self {
            Self::Paper => 30,
            Self::Desk => 24,
        }
    }
}

impl std::str::FromStr for ScaleProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            other => Err(Error::Config(format!("unknown scale profile {other:?}"))),
        }
    }
}

/// Event counts for a given series length, scaled from the reference length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateCounts {
    pub spikes: usize,
    pub steps: usize,
    pub max_duration: usize,
    pub bells: usize,
}

impl CovariateCounts {
    pub fn for_length(length: usize) -> Self {
        let scale = |n: usize| ((n * length) as f64 / PAPER_LENGTH as f64).round() as usize;
        Self {
            spikes: scale(PAPER_SPIKES).min(length),
            steps: scale(PAPER_STEPS),
            max_duration: scale(PAPER_MAX_DURATION).max(1),
            bells: scale(PAPER_BELLS).max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub signal: SignalKind,
    pub covariate: CovariateKind,
    pub operator: Operator,
    pub n_series: usize,
    pub length: usize,
    pub prediction_length: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(
        signal: SignalKind,
        covariate: CovariateKind,
        operator: Operator,
        profile: ScaleProfile,
        seed: u64,
    ) -> Self {
        Self {
            signal,
            covariate,
            operator,
            n_series: profile.n_series(),
            length: profile.length(),
            prediction_length: profile.prediction_length(),
            seed,
        }
    }

    pub fn id(&self) -> String {
        format!(
            "{}_{}_{}",
            self.signal.name(),
            self.covariate.name(),
            self.operator.name()
        )
    }

    pub fn group(&self) -> &'static str {
        if self.signal.is_simple() {
            "simple"
        } else {
            "complex"
        }
    }

    pub fn counts(&self) -> CovariateCounts {
        CovariateCounts::for_length(self.length)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_series < 1 {
            return Err(Error::Config("n_series must be >= 1".into()));
        }
        if self.length <= self.prediction_length {
            return Err(Error::Config(format!(
                "length {} must exceed prediction length {}",
                self.length, self.prediction_length
            )));
        }
        Ok(())
    }
}

/// Parameters drawn for one main signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalParams {
    pub amplitudes: [f64; 3],
    pub phases: [f64; 3],
    pub trend_slope: f64,
    pub trend_offset: f64,
    /// Standard deviation of the additive noise (Noisy only).
    pub noise_std: Option<f64>,
}

/// Parameters drawn for one covariate series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CovariateParams {
    pub gamma: f64,
    /// Spike positions, sorted.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spikes: Vec<usize>,
    /// Step intervals as `(start, duration)`, sorted by start.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub intervals: Vec<(usize, usize)>,
    /// Bell centres and widths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bells: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ar_coefficients: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MainSignal {
    pub values: Vec<f64>,
    pub params: SignalParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub values: Vec<f64>,
    pub params: CovariateParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub dataset_id: String,
    pub series_index: usize,
    pub signal: SignalParams,
    pub covariate: CovariateParams,
}

/// One target series with its aligned covariate matrix (`length x c`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesRecord {
    pub series_id: String,
    pub target: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
    pub metadata: RecordMetadata,
}

impl TimeSeriesRecord {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn covariate_dim(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub records: Vec<TimeSeriesRecord>,
}

impl Dataset {
    pub fn id(&self) -> String {
        self.spec.id()
    }

    /// Daily data throughout the benchmark.
    pub fn frequency(&self) -> &'static str {
        "1D"
    }
}

const PERIODS: [f64; 3] = [7.0, 30.0, 365.0];

fn sinusoids(t: f64, amplitudes: &[f64; 3], phases: &[f64; 3]) -> f64 {
    (0..3)
        .map(|i| amplitudes[i] * (2.0 * PI * t / PERIODS[i] + phases[i]).sin())
        .sum()
}

/// Main signal of the requested family over `t = 0..length`.
pub fn gen_main_signal(kind: SignalKind, length: usize, rng: &mut RngStream) -> MainSignal {
    let mut params = SignalParams {
        amplitudes: [1.0, 0.0, 0.0],
        phases: [0.0; 3],
        trend_slope: 0.0,
        trend_offset: 0.0,
        noise_std: None,
    };
    if kind != SignalKind::Single {
        for a in params.amplitudes.iter_mut() {
            *a = rng.uniform(1.0, 5.0);
        }
    }
    if matches!(kind, SignalKind::Diverse | SignalKind::Noisy) {
        for p in params.phases.iter_mut() {
            *p = rng.uniform(-PI, PI);
        }
        params.trend_slope = rng.uniform(-1.0, 1.0);
        params.trend_offset = rng.uniform(-1.0, 1.0);
    }
    let mut values: Vec<f64> = (0..length)
        .map(|t| {
            let t = t as f64;
            sinusoids(t, &params.amplitudes, &params.phases)
                + params.trend_slope * t / 365.0
                + params.trend_offset
        })
        .collect();
    if kind == SignalKind::Noisy {
        let std = series_scale(&values) / 4.0;
        for v in values.iter_mut() {
            *v += rng.normal(0.0, std);
        }
        params.noise_std = Some(std);
    }
    MainSignal { values, params }
}

/// Mean absolute value; zero for an empty series.
pub fn series_scale(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    series.iter().map(|v| v.abs()).sum::<f64>() / series.len() as f64
}

fn draw_gamma(s: f64, rng: &mut RngStream) -> f64 {
    let upper = 5.0 * s;
    if upper > 1.0 {
        rng.uniform(1.0, upper)
    } else {
        1.0
    }
}

/// Second-order autoregression from `x0 = x1 = 0` with noise from `noise`.
pub fn ar2_path(a1: f64, length: usize, mut noise: impl FnMut() -> f64) -> Vec<f64> {
    let a2 = 1.0 - a1;
    let mut x = vec![0.0; length];
    for t in 2..length {
        x[t] = a1 * x[t - 1] + a2 * x[t - 2] + noise();
    }
    x
}

/// Covariate series of the requested kind; `s` is the main-signal scale.
pub fn gen_covariate(
    kind: CovariateKind,
    length: usize,
    s: f64,
    counts: &CovariateCounts,
    rng: &mut RngStream,
) -> Result<Covariate> {
    let gamma = draw_gamma(s, rng);
    let mut params = CovariateParams {
        gamma,
        ..Default::default()
    };
    let values = match kind {
        CovariateKind::Spikes => {
            let mut idx = rng.choose_without_replacement(length, counts.spikes);
            idx.sort_unstable();
            let mut x = vec![1.0; length];
            for &i in &idx {
                x[i] = gamma;
            }
            params.spikes = idx;
            x
        }
        CovariateKind::Steps => {
            let mut occupied = vec![false; length];
            let mut intervals = Vec::with_capacity(counts.steps);
            for n in 0..counts.steps {
                let mut placed = false;
                for _ in 0..STEP_RETRIES {
                    let start = rng.uniform(0.0, length as f64).floor() as usize;
                    let dur = rng.int_inclusive(1, counts.max_duration);
                    let end = start + dur;
                    if end <= length && !occupied[start..end].iter().any(|o| *o) {
                        occupied[start..end].iter_mut().for_each(|o| *o = true);
                        intervals.push((start, dur));
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(Error::Generation(format!(
                        "could not place step interval {n} of {} in length {length}",
                        counts.steps
                    )));
                }
            }
            intervals.sort_unstable();
            params.intervals = intervals;
            occupied
                .iter()
                .map(|&o| if o { gamma } else { 1.0 })
                .collect()
        }
        CovariateKind::Bells => {
            let bells: Vec<(f64, f64)> = (0..counts.bells)
                .map(|_| (rng.uniform(0.0, length as f64), rng.uniform(1.0, 15.0)))
                .collect();
            let x = (0..length)
                .map(|t| {
                    let t = t as f64;
                    gamma
                        * bells
                            .iter()
                            .map(|(mu, sigma)| (-(t - mu).powi(2) / (sigma * sigma)).exp())
                            .sum::<f64>()
                })
                .collect();
            params.bells = bells;
            x
        }
        CovariateKind::Arp => {
            let a1 = rng.uniform(0.0, 1.0);
            let raw = ar2_path(a1, length, || rng.normal(0.0, 1.0));
            params.ar_coefficients = Some((a1, 1.0 - a1));
            let m = series_scale(&raw);
            if m > 0.0 {
                raw.iter().map(|v| gamma * v / m).collect()
            } else {
                raw
            }
        }
    };
    Ok(Covariate { values, params })
}

/// Elementwise `signal (+|*) covariate`.
pub fn combine(signal: &[f64], covariate: &[f64], op: Operator) -> Result<Vec<f64>> {
    if signal.len() != covariate.len() {
        return Err(Error::shape(format!(
            "signal length {} vs covariate length {}",
            signal.len(),
            covariate.len()
        )));
    }
    Ok(signal
        .iter()
        .zip(covariate)
        .map(|(z, x)| match op {
            Operator::Add => z + x,
            Operator::Mult => z * x,
        })
        .collect())
}

/// Series `index` of a dataset; depends only on `(spec, index)`.
pub fn generate_series(spec: &DatasetSpec, index: usize) -> Result<TimeSeriesRecord> {
    let root = RngStream::new(spec.seed, index as u64);
    let mut sig_rng = root.derive(0);
    let mut cov_rng = root.derive(1);
    let signal = gen_main_signal(spec.signal, spec.length, &mut sig_rng);
    let s = series_scale(&signal.values);
    let cov = gen_covariate(spec.covariate, spec.length, s, &spec.counts(), &mut cov_rng)?;
    let target = combine(&signal.values, &cov.values, spec.operator)?;
    let id = spec.id();
    Ok(TimeSeriesRecord {
        series_id: format!("{id}/{index:04}"),
        target,
        covariates: cov.values.iter().map(|v| vec![*v]).collect(),
        metadata: RecordMetadata {
            dataset_id: id,
            series_index: index,
            signal: signal.params,
            covariate: cov.params,
        },
    })
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Vec<TimeSeriesRecord>> {
    spec.validate()?;
    (0..spec.n_series).map(|i| generate_series(spec, i)).collect()
}

/// All 32 dataset specs in a fixed order: signal, covariate, operator.
pub fn benchmark_specs(base_seed: u64, profile: ScaleProfile) -> Vec<DatasetSpec> {
    let mut out = Vec::with_capacity(32);
    for signal in SignalKind::ALL {
        for covariate in CovariateKind::ALL {
            for operator in Operator::ALL {
                let index = out.len() as u64;
                out.push(DatasetSpec::new(
                    signal,
                    covariate,
                    operator,
                    profile,
                    mix_seed(base_seed, index),
                ));
            }
        }
    }
    out
}

/// Signal group ("simple" or "complex") of a benchmark dataset id.
pub fn dataset_group(dataset_id: &str) -> Option<&'static str> {
    let head = dataset_id.split('_').next()?;
    let kind = SignalKind::ALL.into_iter().find(|k| k.name() == head)?;
    Some(if kind.is_simple() { "simple" } else { "complex" })
}

pub fn generate_benchmark(base_seed: u64, profile: ScaleProfile) -> Result<Vec<Dataset>> {
    benchmark_specs(base_seed, profile)
        .into_iter()
        .map(|spec| {
            let records = generate_dataset(&spec)?;
            Ok(Dataset { spec, records })
        })
        .collect()
}

/// Covariate-free pretraining corpus: `per_family` main signals of each of
/// the four families, each of `length` steps.
pub fn signal_corpus(seed: u64, length: usize, per_family: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(4 * per_family);
    for (k, kind) in SignalKind::ALL.into_iter().enumerate() {
        for i in 0..per_family {
            let mut rng = RngStream::new(seed, mix_seed(k as u64, i as u64));
            out.push(gen_main_signal(kind, length, &mut rng).values);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_groups_follow_signal_kind() {
        let specs = benchmark_specs(0, ScaleProfile::Desk);
        for s in &specs {
            let expect = if s.signal.is_simple() { "simple" } else { "complex" };
            assert_eq!(dataset_group(&s.id()), Some(expect));
        }
        assert_eq!(specs.iter().filter(|s| s.group() == "simple").count(), 16);
        assert_eq!(dataset_group("weather_x"), None);
    }

    #[test]
    fn single_signal_values() {
        let mut rng = RngStream::new(0, 0);
        let s = gen_main_signal(SignalKind::Single, 14, &mut rng);
        assert_eq!(s.values[0], 0.0);
        let period: f64 = s.values[..7].iter().sum();
        assert!(period.abs() < 1e-9);
    }

    #[test]
    fn simple_with_unit_amplitudes_starts_at_zero() {
        let mut rng = RngStream::new(1, 0);
        let s = gen_main_signal(SignalKind::Simple, 10, &mut rng);
        assert_eq!(s.values[0], 0.0);
        let v = sinusoids(3.0, &[1.0; 3], &[0.0; 3]);
        let expect: f64 = PERIODS.iter().map(|p| (2.0 * PI * 3.0 / p).sin()).sum();
        assert_eq!(v, expect);
    }

    #[test]
    fn scale_examples() {
        assert_eq!(series_scale(&[1.0, -1.0]), 1.0);
        assert_eq!(series_scale(&[0.0, 0.0]), 0.0);
        let xs = [0.5, -2.0, 3.25];
        assert_eq!(series_scale(&xs), (0.5 + 2.0 + 3.25) / 3.0);
    }

    #[test]
    fn arp_without_noise_is_zero() {
        assert!(ar2_path(0.3, 50, || 0.0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn spikes_count_at_full_length() {
        let counts = CovariateCounts::for_length(PAPER_LENGTH);
        assert_eq!(counts.spikes, 500);
        let mut rng = RngStream::new(4, 4);
        let c = gen_covariate(CovariateKind::Spikes, PAPER_LENGTH, 0.6, &counts, &mut rng).unwrap();
        assert_eq!(c.params.spikes.len(), 500);
        assert_eq!(c.values.iter().filter(|v| **v == c.params.gamma).count(), 500);
    }

    #[test]
    fn combine_examples() {
        let z = [0.5, -1.0, 2.0];
        let one = [1.0; 3];
        assert_eq!(combine(&z, &one, Operator::Add).unwrap(), vec![1.5, 0.0, 3.0]);
        assert_eq!(combine(&z, &one, Operator::Mult).unwrap(), z.to_vec());
        assert!(combine(&z, &[1.0], Operator::Add).is_err());
    }

    #[test]
    fn desk_counts() {
        let c = CovariateCounts::for_length(512);
        assert_eq!(c.spikes, 140);
        assert_eq!(c.steps, 35);
        assert_eq!(c.max_duration, 8);
        assert_eq!(c.bells, 35);
    }

    #[test]
    fn steps_failure_is_reported() {
        let counts = CovariateCounts {
            spikes: 0,
            steps: 20,
            max_duration: 5,
            bells: 1,
        };
        let mut rng = RngStream::new(0, 0);
        let err = gen_covariate(CovariateKind::Steps, 10, 1.0, &counts, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Generation(_)));
    }

    #[test]
    fn benchmark_has_32_unique_ids() {
        let specs = benchmark_specs(7, ScaleProfile::Desk);
        assert_eq!(specs.len(), 32);
        assert_eq!(specs.iter().filter(|s| s.group() == "simple").count(), 16);
        let mut ids: Vec<String> = specs.iter().map(|s| s.id()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 32);
        assert_eq!(benchmark_specs(7, ScaleProfile::Desk), specs);
    }
}
