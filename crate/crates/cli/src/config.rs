use std::path::{Path, PathBuf};

use covlab_core::adapters::{AdapterHyper, AdapterVariant};
use covlab_core::backbone::{BackboneConfig, PretrainConfig};
use covlab_core::io::{config_hash, read_file, Provenance};
use covlab_core::protocol::{EvalConfig, TrainConfig};
use covlab_core::synthgen::{benchmark_specs, DatasetSpec, ScaleProfile};
use covlab_core::tokenizer::TokenizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub profile: ScaleProfile,
    pub seed: u64,
    /// Dataset ids to work on; empty means all 32.
    pub datasets: Vec<String>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            profile: ScaleProfile::Desk,
            seed: 0,
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub corpus_seed: u64,
    /// Length of each covariate-free corpus series.
    pub corpus_length: usize,
    /// Corpus series per main-signal family.
    pub corpus_per_family: usize,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 16,
            lr: 1e-3,
            seed: 1,
            corpus_seed: 7,
            corpus_length: 512,
            corpus_per_family: 10,
        }
    }
}

impl PretrainSettings {
    pub fn optimizer(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr: self.lr,
            seed: self.seed,
        }
    }
}

/// Everything one experiment needs. `seed` drives adapter initialisation,
/// training batches and evaluation sampling; the benchmark and pretraining
/// carry their own seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    pub variants: Vec<AdapterVariant>,
    pub backbone: BackboneConfig,
    pub tokenizer: TokenizerConfig,
    pub pretrain: PretrainSettings,
    pub adapter_hidden: usize,
    pub train: TrainConfig,
    pub eval_samples: usize,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub baseline: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: BenchmarkConfig::default(),
            variants: vec![
                AdapterVariant::IibOib,
                AdapterVariant::FfIibOib,
                AdapterVariant::Nc,
                AdapterVariant::Rs,
            ],
            backbone: BackboneConfig {
                d_model: 32,
                n_layers: 2,
                n_heads: 4,
                context_length: 64,
                vocab_size: 300,
                horizon: 24,
                ffn_dim: 128,
            },
            tokenizer: TokenizerConfig::default(),
            pretrain: PretrainSettings::default(),
            adapter_hidden: 32,
            train: TrainConfig {
                max_steps: 300,
                batch_size: 16,
                ..TrainConfig::default()
            },
            eval_samples: 100,
            output_dir: PathBuf::from("out"),
            seed: 0,
            baseline: BASELINE_MODEL.into(),
        }
    }
}

/// Model id of zero-shot backbone rows.
pub const BASELINE_MODEL: &str = "backbone";
pub const ZERO_SHOT_VARIANT: &str = "zero_shot";

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub dataset: Option<String>,
    pub variant: Option<AdapterVariant>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let bytes = read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(d) = &o.dataset {
            self.benchmark.datasets = vec![d.clone()];
        }
        if let Some(v) = o.variant {
            self.variants = vec![v];
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        self.backbone.validate()?;
        self.tokenizer.validate()?;
        self.train.validate()?;
        if self.backbone.vocab_size != self.tokenizer.num_bins {
            return usage(format!(
                "backbone vocab_size {} differs from tokenizer num_bins {}",
                self.backbone.vocab_size, self.tokenizer.num_bins
            ));
        }
        if self.variants.is_empty() {
            return usage("no variants selected".into());
        }
        if self.adapter_hidden == 0 || self.eval_samples == 0 {
            return usage("adapter_hidden and eval_samples must be positive".into());
        }
        if self.pretrain.batch_size == 0 || self.pretrain.corpus_per_family == 0 || self.pretrain.corpus_length < 2 {
            return usage("pretraining needs a non-empty corpus and batch".into());
        }
        if self.baseline.is_empty() {
            return usage("baseline model id is empty".into());
        }
        let known: Vec<String> = benchmark_specs(0, self.benchmark.profile).iter().map(|s| s.id()).collect();
        if let Some(bad) = self.benchmark.datasets.iter().find(|d| !known.contains(d)) {
            return usage(format!("unknown dataset `{bad}`"));
        }
        Ok(())
    }

    /// Specs of the selected datasets, in benchmark order.
    pub fn dataset_specs(&self) -> Vec<DatasetSpec> {
        benchmark_specs(self.benchmark.seed, self.benchmark.profile)
            .into_iter()
            .filter(|s| self.benchmark.datasets.is_empty() || self.benchmark.datasets.contains(&s.id()))
            .collect()
    }

    pub fn adapter_hyper(&self) -> AdapterHyper {
        AdapterHyper {
            hidden: self.adapter_hidden,
            covariate_dim: 1,
            tokenizer: self.tokenizer,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            n_samples: self.eval_samples,
            seed: self.seed,
            ..EvalConfig::default()
        }
    }

    /// Hash of the config without the job selection (datasets, variants)
    /// and output directory, which never change what a job produces.
    pub fn hash(&self) -> CliResult<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.benchmark.datasets.clear();
        c.variants.clear();
        Ok(config_hash(&c)?)
    }

    pub fn provenance(&self) -> CliResult<Provenance> {
        Ok(Provenance {
            config_hash: self.hash()?,
            seed: self.seed,
        })
    }

    /// Datasets depend only on the benchmark section.
    pub fn dataset_provenance(&self) -> CliResult<Provenance> {
        Ok(Provenance {
            config_hash: config_hash(&(self.benchmark.profile, self.benchmark.seed))?,
            seed: self.benchmark.seed,
        })
    }

    /// The backbone depends only on its architecture, tokenizer and
    /// pretraining settings.
    pub fn backbone_provenance(&self) -> CliResult<Provenance> {
        Ok(Provenance {
            config_hash: config_hash(&(&self.backbone, &self.tokenizer, &self.pretrain))?,
            seed: self.pretrain.seed,
        })
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.output_dir.join("datasets").join(id)
    }

    pub fn backbone_path(&self) -> PathBuf {
        self.output_dir.join("backbone").join("backbone.ckpt")
    }

    pub fn backbone_trace_path(&self) -> PathBuf {
        self.output_dir.join("backbone").join("trace.csv")
    }

    pub fn run_dir(&self, dataset_id: &str, variant: AdapterVariant) -> PathBuf {
        self.output_dir
            .join("runs")
            .join(dataset_id)
            .join(variant.name())
            .join(format!("seed_{}", self.seed))
    }

    pub fn results_path(&self) -> PathBuf {
        self.output_dir.join("results.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }
}
