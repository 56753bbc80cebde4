mod common;

use std::fs;

use covlab_cli::commands::{evaluate, generate, pretrain_backbone, report, train};
use covlab_cli::results::{read_results, read_trace};
use covlab_cli::{CliError, ExperimentConfig};
use covlab_core::adapters::AdapterVariant;
use covlab_core::io::{load_backbone, load_composite, read_dataset, verify_dataset, write_dataset, WriteStatus};
use covlab_core::nn::Parameters;
use covlab_core::synthgen::Dataset;
use covlab_core::Error;

use common::{snapshot, tiny_config};

fn prepared(cfg: &ExperimentConfig) {
    generate(cfg).unwrap();
    pretrain_backbone(cfg).unwrap();
}

#[test]
fn desk_profile_writes_32_verified_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let first = generate(&cfg).unwrap();
    assert_eq!(first.len(), 32);
    assert!(first.iter().all(|(_, s)| *s == WriteStatus::Written));
    for (id, _) in &first {
        let m = verify_dataset(&cfg.dataset_dir(id)).unwrap();
        assert_eq!(&m.dataset_id, id);
        assert_eq!(m.n_series, 20);
    }
    let before = snapshot(dir.path());
    let again = generate(&cfg).unwrap();
    assert!(again.iter().all(|(_, s)| *s == WriteStatus::Verified));
    assert_eq!(snapshot(dir.path()), before);
}

#[test]
fn corrupted_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    generate(&cfg).unwrap();
    let series = cfg.dataset_dir("simple_spikes_add").join("series.jsonl");
    let text = fs::read_to_string(&series).unwrap().replacen("\"target\":[", "\"target\":[1.5,", 1);
    fs::write(&series, text).unwrap();
    let err = generate(&cfg).unwrap_err();
    assert!(matches!(err, CliError::Core(Error::Checksum { .. })));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn pretraining_is_reproducible_and_reloadable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (tiny_config(a.path()), tiny_config(b.path()));
    let sa = pretrain_backbone(&ca).unwrap();
    pretrain_backbone(&cb).unwrap();
    assert!(sa.final_loss < sa.initial_loss);
    assert_eq!(fs::read(ca.backbone_path()).unwrap(), fs::read(cb.backbone_path()).unwrap());
    assert_eq!(
        fs::read(ca.backbone_trace_path()).unwrap(),
        fs::read(cb.backbone_trace_path()).unwrap()
    );
    let trace = read_trace(&ca.backbone_trace_path()).unwrap();
    assert_eq!(trace.len(), ca.pretrain.steps);
    assert!(trace.iter().all(|t| t.config_hash == trace[0].config_hash && t.seed == ca.pretrain.seed));

    // reload reproduces identical zero-shot forecasts
    generate(&ca).unwrap();
    let first = evaluate(&ca, None).unwrap();
    let (bb, _) = load_backbone(&ca.backbone_path()).unwrap();
    assert_eq!(bb.config, ca.backbone);
    let second = evaluate(&ca, None).unwrap();
    assert_eq!(first, second);
    assert!(first.iter().all(|r| r.wql.is_finite() && r.model_id == "backbone"));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    assert_eq!(train(&cfg).unwrap_err().exit_code(), 2);
    pretrain_backbone(&cfg).unwrap();
    assert_eq!(train(&cfg).unwrap_err().exit_code(), 2);
    assert_eq!(report(&cfg).unwrap_err().exit_code(), 2);
    generate(&cfg).unwrap();
    assert_eq!(evaluate(&cfg, Some(AdapterVariant::Nc)).unwrap_err().exit_code(), 2);
}

#[test]
fn full_pipeline_is_byte_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    prepared(&cfg);
    evaluate(&cfg, None).unwrap();
    let rows = train(&cfg).unwrap();
    assert_eq!(rows.len(), 4);
    report(&cfg).unwrap();
    let before = snapshot(dir.path());

    prepared(&cfg);
    evaluate(&cfg, None).unwrap();
    assert_eq!(train(&cfg).unwrap(), rows);
    report(&cfg).unwrap();
    assert_eq!(snapshot(dir.path()), before);

    // every row carries the config hash and seed
    let results = read_results(&cfg.results_path()).unwrap();
    assert_eq!(results.len(), 6);
    let hash = cfg.hash().unwrap();
    assert!(results.iter().all(|r| r.config_hash == hash && r.seed == cfg.seed));
    for (path, bytes) in &before {
        if path.ends_with(".csv") {
            let text = String::from_utf8(bytes.clone()).unwrap();
            assert!(text.lines().next().unwrap().contains("config_hash"), "{path}");
        } else {
            let text = String::from_utf8(bytes.clone()).unwrap();
            assert!(path.ends_with(".jsonl") || text.contains("config_hash"), "{path}");
        }
    }
}

#[test]
fn checkpoints_reproduce_training_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    prepared(&cfg);
    let rows = train(&cfg).unwrap();
    let again = evaluate(&cfg, Some(AdapterVariant::IibOib)).unwrap();
    for r in &again {
        assert!(rows.contains(r));
    }

    // frozen run: checkpoint references the untouched backbone by digest
    let (bb, _) = load_backbone(&cfg.backbone_path()).unwrap();
    let ckpt = cfg.run_dir("simple_spikes_add", AdapterVariant::IibOib).join("best.ckpt");
    let (model, prov) = load_composite(&ckpt, Some(&bb)).unwrap();
    assert!(model.freeze_backbone);
    assert_eq!(model.backbone.checksum(), bb.checksum());
    assert_eq!(prov.config_hash, cfg.hash().unwrap());
    assert!(fs::read_to_string(&ckpt).unwrap().contains("\"backbone\": null"));

    let sel: serde_json::Value = serde_json::from_slice(
        &fs::read(cfg.run_dir("simple_spikes_add", AdapterVariant::IibOib).join("selection.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(sel["candidates"].as_array().unwrap().len(), 2);
    let trace = read_trace(&cfg.run_dir("simple_spikes_add", AdapterVariant::IibOib).join("trace.csv")).unwrap();
    assert_eq!(trace.first().unwrap().step, 0);
    assert_eq!(trace.last().unwrap().step, cfg.train.max_steps);
}

#[test]
fn covariate_blind_variant_ignores_covariate_perturbation() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = tiny_config(a.path());
    ca.benchmark.datasets = vec!["simple_spikes_add".into()];
    ca.variants = vec![AdapterVariant::Nc];
    let cb = ExperimentConfig {
        output_dir: b.path().to_path_buf(),
        ..ca.clone()
    };
    prepared(&ca);
    pretrain_backbone(&cb).unwrap();
    let (mut ds, manifest): (Dataset, _) = read_dataset(&ca.dataset_dir("simple_spikes_add")).unwrap();
    for r in &mut ds.records {
        for (t, row) in r.covariates.iter_mut().enumerate() {
            row[0] = row[0] * -3.0 + (t % 5) as f64;
        }
    }
    write_dataset(&cb.dataset_dir("simple_spikes_add"), &ds, &manifest.provenance).unwrap();
    let ra = train(&ca).unwrap();
    let rb = train(&cb).unwrap();
    assert_eq!(ra, rb);

    // a covariate-aware variant does react
    let mut ca2 = ca.clone();
    ca2.variants = vec![AdapterVariant::IibOib];
    let cb2 = ExperimentConfig {
        variants: ca2.variants.clone(),
        ..cb.clone()
    };
    assert_ne!(train(&ca2).unwrap(), train(&cb2).unwrap());
}

#[test]
fn seed_override_changes_rows_and_keys() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.variants = vec![AdapterVariant::Nc];
    cfg.benchmark.datasets = vec!["simple_spikes_add".into()];
    prepared(&cfg);
    let r0 = train(&cfg).unwrap();
    cfg.seed = 1;
    let r1 = train(&cfg).unwrap();
    assert_ne!(r0[0].wql, r1[0].wql);
    let all = read_results(&cfg.results_path()).unwrap();
    assert_eq!(all.len(), 2);
    assert!(cfg.run_dir("simple_spikes_add", AdapterVariant::Nc).ends_with("seed_1"));
}
