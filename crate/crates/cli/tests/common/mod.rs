#![allow(dead_code)]

use std::path::Path;

use covlab_cli::ExperimentConfig;
use covlab_core::adapters::AdapterVariant;
use covlab_core::backbone::BackboneConfig;
use covlab_core::protocol::TrainConfig;

/// Two datasets, a one-layer backbone and a few steps everywhere.
pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.benchmark.datasets = vec!["simple_spikes_add".into(), "noisy_bells_mult".into()];
    cfg.variants = vec![AdapterVariant::IibOib, AdapterVariant::Nc];
    cfg.backbone = BackboneConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        context_length: 48,
        vocab_size: 300,
        horizon: 24,
        ffn_dim: 32,
    };
    cfg.pretrain.steps = 30;
    cfg.pretrain.batch_size = 4;
    cfg.pretrain.corpus_per_family = 2;
    cfg.adapter_hidden = 8;
    cfg.train = TrainConfig {
        lr_grid: vec![1e-2, 1e-3],
        max_steps: 10,
        checkpoint_every: 5,
        batch_size: 4,
        seed: 0,
        val_samples: 3,
    };
    cfg.eval_samples = 10;
    cfg.output_dir = out.to_path_buf();
    cfg
}

/// Every file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
