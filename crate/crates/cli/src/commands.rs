//! The five subcommands as library functions over an [`ExperimentConfig`].

use std::path::PathBuf;

use covlab_core::adapters::{attach, AdapterVariant, CompositeModel};
use covlab_core::backbone::{pretrain, BackboneParams};
use covlab_core::io::{
    load_backbone, load_composite, read_dataset, save_backbone, save_composite, write_dataset, write_file,
    WriteStatus,
};
use covlab_core::nn::RngStream;
use covlab_core::protocol::{
    evaluate_model, select_learning_rate, Candidate, Forecaster, PreparedDataset, TraceRow,
};
use covlab_core::synthgen::{generate_dataset, signal_corpus, Dataset};
use serde::Serialize;

use crate::config::{ExperimentConfig, BASELINE_MODEL, ZERO_SHOT_VARIANT};
use crate::error::{CliError, CliResult};
use crate::report::{build_table, plot_data};
use crate::results::{encode_csv, read_results, upsert_results, write_trace, ResultRow};

/// Stream for adapter initialisation (training uses 1 to 3).
const ADAPTER_INIT_STREAM: u64 = 4;

pub fn generate(cfg: &ExperimentConfig) -> CliResult<Vec<(String, WriteStatus)>> {
    let provenance = cfg.dataset_provenance()?;
    let mut out = Vec::new();
    for spec in cfg.dataset_specs() {
        let id = spec.id();
        let records = generate_dataset(&spec)?;
        let status = write_dataset(&cfg.dataset_dir(&id), &Dataset { spec, records }, &provenance)?;
        log::info!("dataset {id}: {status:?}");
        out.push((id, status));
    }
    Ok(out)
}

#[derive(Debug)]
pub struct PretrainSummary {
    pub checkpoint: PathBuf,
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn pretrain_backbone(cfg: &ExperimentConfig) -> CliResult<PretrainSummary> {
    let p = &cfg.pretrain;
    let corpus = signal_corpus(p.corpus_seed, p.corpus_length, p.corpus_per_family);
    let outcome = pretrain(&corpus, cfg.backbone, &cfg.tokenizer, &p.optimizer())?;
    let provenance = cfg.backbone_provenance()?;
    let path = cfg.backbone_path();
    save_backbone(&path, &outcome.params, &provenance)?;
    let trace: Vec<TraceRow> = outcome
        .losses
        .iter()
        .enumerate()
        .map(|(step, &l)| TraceRow {
            step,
            train_loss: Some(l),
            val_wql: None,
        })
        .collect();
    write_trace(&cfg.backbone_trace_path(), &trace, &provenance)?;
    Ok(PretrainSummary {
        checkpoint: path,
        initial_loss: outcome.losses.first().copied().unwrap_or(f64::NAN),
        final_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
    })
}

fn require_backbone(cfg: &ExperimentConfig) -> CliResult<BackboneParams> {
    let path = cfg.backbone_path();
    if !path.exists() {
        return Err(CliError::data(&path, "backbone checkpoint missing; run `pretrain` first"));
    }
    let (bb, _) = load_backbone(&path)?;
    if bb.config != cfg.backbone {
        return Err(CliError::data(&path, "checkpoint architecture differs from the config"));
    }
    Ok(bb)
}

fn load_prepared(cfg: &ExperimentConfig, id: &str) -> CliResult<PreparedDataset> {
    let dir = cfg.dataset_dir(id);
    if !dir.exists() {
        return Err(CliError::data(&dir, "dataset missing; run `generate` first"));
    }
    let (dataset, _) = read_dataset(&dir)?;
    Ok(PreparedDataset::from_dataset(&dataset)?)
}

#[derive(Serialize)]
struct SelectionRecord<'a> {
    dataset_id: &'a str,
    variant: AdapterVariant,
    lr: f64,
    best_step: usize,
    best_val_wql: f64,
    candidates: &'a [Candidate],
    config_hash: &'a str,
    seed: u64,
}

fn fresh_model(cfg: &ExperimentConfig, bb: &BackboneParams, variant: AdapterVariant) -> covlab_core::Result<CompositeModel> {
    let mut rng = RngStream::new(cfg.seed, ADAPTER_INIT_STREAM);
    attach(bb.clone(), variant, &cfg.adapter_hyper(), true, &mut rng)
}

/// Learning-rate selection, checkpointing and test evaluation for every
/// selected (dataset, variant) pair.
pub fn train(cfg: &ExperimentConfig) -> CliResult<Vec<ResultRow>> {
    let bb = require_backbone(cfg)?;
    let provenance = cfg.provenance()?;
    let mut rows = Vec::new();
    for spec in cfg.dataset_specs() {
        let id = spec.id();
        let data = load_prepared(cfg, &id)?;
        for &variant in &cfg.variants {
            let factory = || fresh_model(cfg, &bb, variant);
            let sel = select_learning_rate(factory, &data, &cfg.train_config(), &cfg.tokenizer)?;
            let model = &sel.outcome.best;
            let dir = cfg.run_dir(&id, variant);
            save_composite(&dir.join("best.ckpt"), model, &provenance)?;
            write_trace(&dir.join("trace.csv"), &sel.outcome.trace, &provenance)?;
            let record = SelectionRecord {
                dataset_id: &id,
                variant,
                lr: sel.lr,
                best_step: sel.outcome.best_step,
                best_val_wql: sel.outcome.best_val_wql,
                candidates: &sel.candidates,
                config_hash: &provenance.config_hash,
                seed: provenance.seed,
            };
            let mut json = serde_json::to_vec_pretty(&record).map_err(covlab_core::Error::from)?;
            json.push(b'\n');
            write_file(&dir.join("selection.json"), &json)?;
            let eval = evaluate_model(
                Forecaster::Composite(model),
                &data,
                variant.name(),
                variant.name(),
                &cfg.eval_config(),
                &cfg.tokenizer,
            )?;
            log::info!("{id}/{variant}: lr {} wql {:.4}", sel.lr, eval.report.wql);
            rows.push(ResultRow::from_report(&eval.report, &provenance.config_hash));
        }
    }
    upsert_results(&cfg.results_path(), &rows)?;
    Ok(rows)
}

/// Scores the zero-shot backbone, or with `variant` set, reloads and
/// rescores that variant's saved checkpoints.
pub fn evaluate(cfg: &ExperimentConfig, variant: Option<AdapterVariant>) -> CliResult<Vec<ResultRow>> {
    let bb = require_backbone(cfg)?;
    let provenance = cfg.provenance()?;
    let mut rows = Vec::new();
    for spec in cfg.dataset_specs() {
        let id = spec.id();
        let data = load_prepared(cfg, &id)?;
        let eval_cfg = cfg.eval_config();
        let report = match variant {
            None => evaluate_model(
                Forecaster::Backbone(&bb),
                &data,
                BASELINE_MODEL,
                ZERO_SHOT_VARIANT,
                &eval_cfg,
                &cfg.tokenizer,
            )?
            .report,
            Some(v) => {
                let path = cfg.run_dir(&id, v).join("best.ckpt");
                if !path.exists() {
                    return Err(CliError::data(&path, "checkpoint missing; run `train` first"));
                }
                let (model, _) = load_composite(&path, Some(&bb))?;
                evaluate_model(Forecaster::Composite(&model), &data, v.name(), v.name(), &eval_cfg, &cfg.tokenizer)?.report
            }
        };
        log::info!("{id}/{}: wql {:.4}", report.model_id, report.wql);
        rows.push(ResultRow::from_report(&report, &provenance.config_hash));
    }
    upsert_results(&cfg.results_path(), &rows)?;
    Ok(rows)
}

#[derive(Debug)]
pub struct ReportPaths {
    pub aggregate: PathBuf,
    pub plot_data: PathBuf,
}

/// Aggregate table and plot data from the results file alone.
pub fn report(cfg: &ExperimentConfig) -> CliResult<ReportPaths> {
    let results = cfg.results_path();
    if !results.exists() {
        return Err(CliError::data(&results, "no results; run `train` and `evaluate` first"));
    }
    let rows = read_results(&results)?;
    let table = build_table(&rows, &cfg.baseline)?;
    let plot = plot_data(&rows, &cfg.baseline)?;
    let dir = cfg.report_dir();
    let paths = ReportPaths {
        aggregate: dir.join("aggregate.csv"),
        plot_data: dir.join("plot_data.csv"),
    };
    write_file(&paths.aggregate, &encode_csv(&table.rows, &paths.aggregate)?)?;
    write_file(&paths.plot_data, &encode_csv(&plot, &paths.plot_data)?)?;
    Ok(paths)
}
