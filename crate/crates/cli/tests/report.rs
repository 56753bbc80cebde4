mod common;

use std::fs;

use covlab_cli::commands::report;
use covlab_cli::report::{build_table, plot_data, AggregateRow, PlotRow, RowKind};
use covlab_cli::results::{decode_csv, upsert_results, ResultRow};
use covlab_core::metrics::average_rank;
use proptest::prelude::*;

fn row(dataset: &str, model: &str, wql: f64, mase: f64) -> ResultRow {
    ResultRow {
        dataset_id: dataset.into(),
        model_id: model.into(),
        variant: model.into(),
        wql,
        mase,
        n_series_scored: 3,
        seed: 0,
        config_hash: "h0".into(),
    }
}

const D: [&str; 3] = ["single_spikes_add", "simple_steps_mult", "noisy_arp_add"];

fn fixture() -> Vec<ResultRow> {
    vec![
        row(D[0], "backbone", 1.0, 2.0),
        row(D[1], "backbone", 2.0, 2.0),
        row(D[2], "backbone", 4.0, 2.0),
        row(D[0], "B", 0.5, 1.0),
        row(D[1], "B", 1.0, 4.0),
        row(D[2], "B", 8.0, f64::NAN),
    ]
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

#[test]
fn two_model_fixture_matches_hand_arithmetic() {
    let t = build_table(&fixture(), "backbone").unwrap();
    let b = t.footer(RowKind::AggRelativeScore, 0, "B").unwrap();
    // wql ratios 0.5, 0.5, 2; mase ratios 0.5, 2 (third undefined)
    assert!(close(b.wql, 0.5f64.powf(1.0 / 3.0)));
    assert!(close(b.mase, 1.0));
    let base = t.footer(RowKind::AggRelativeScore, 0, "backbone").unwrap();
    assert_eq!((base.wql, base.mase), (1.0, 1.0));

    let rb = t.footer(RowKind::AvgRank, 0, "B").unwrap();
    let ra = t.footer(RowKind::AvgRank, 0, "backbone").unwrap();
    assert!(close(rb.wql, 4.0 / 3.0) && close(ra.wql, 5.0 / 3.0));
    assert!(close(rb.mase, 1.5) && close(ra.mase, 4.0 / 3.0));

    // models are ordered B, backbone; datasets sorted by id
    let mut ids = D.to_vec();
    ids.sort();
    let m: Vec<Vec<Option<f64>>> = ids
        .iter()
        .map(|d| {
            ["B", "backbone"]
                .iter()
                .map(|mdl| {
                    fixture()
                        .iter()
                        .find(|r| r.dataset_id == *d && r.model_id == *mdl)
                        .map(|r| r.wql)
                })
                .collect()
        })
        .collect();
    let ranks = average_rank(&m).unwrap();
    assert_eq!((ranks[0], ranks[1]), (rb.wql, ra.wql));
}

#[test]
fn plot_data_splits_simple_and_complex() {
    let p = plot_data(&fixture(), "backbone").unwrap();
    let get = |g: &str, m: &str| {
        p.iter()
            .find(|r| r.model == "B" && r.group == g && r.metric == m)
            .unwrap()
            .value
    };
    assert!(close(get("simple", "agg_rel_wql"), 0.5));
    assert!(close(get("complex", "agg_rel_wql"), 2.0));
    assert!(close(get("all", "agg_rel_wql"), 0.5f64.powf(1.0 / 3.0)));
    assert!(get("complex", "agg_rel_mase").is_nan());
    assert_eq!(p.len(), 2 * 3 * 2);
}

#[test]
fn missing_baseline_rows_fail_aggregation() {
    let mut rows = fixture();
    rows.remove(1);
    let err = build_table(&rows, "backbone").unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("aggregation"));
    assert!(build_table(&fixture(), "nobody").is_err());
    assert!(build_table(&[], "backbone").is_err());
}

#[test]
fn report_is_a_pure_function_of_results() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ca, cb) = (common::tiny_config(a.path()), common::tiny_config(b.path()));
    let mut rows = fixture();
    upsert_results(&ca.results_path(), &rows).unwrap();
    rows.reverse();
    upsert_results(&cb.results_path(), &rows).unwrap();
    let pa = report(&ca).unwrap();
    let pb = report(&cb).unwrap();
    assert_eq!(fs::read(&pa.aggregate).unwrap(), fs::read(&pb.aggregate).unwrap());
    assert_eq!(fs::read(&pa.plot_data).unwrap(), fs::read(&pb.plot_data).unwrap());
    let plot: Vec<PlotRow> = decode_csv(&pa.plot_data).unwrap();
    assert!(plot.iter().all(|r| r.config_hash == "h0" && r.seed == 0));
}

#[test]
fn upsert_replaces_by_dataset_model_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    upsert_results(&path, &fixture()).unwrap();
    let mut changed = row(D[0], "B", 0.25, 1.0);
    upsert_results(&path, std::slice::from_ref(&changed)).unwrap();
    changed.seed = 9;
    let all = upsert_results(&path, std::slice::from_ref(&changed)).unwrap();
    assert_eq!(all.len(), 7);
    assert_eq!(all.iter().filter(|r| r.model_id == "B" && r.dataset_id == D[0]).count(), 2);
    let back: Vec<ResultRow> = decode_csv(&path).unwrap();
    assert_eq!(back.len(), 7);
    assert!(back.iter().any(|r| r.wql == 0.25 && r.seed == 0));
    let header = fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "dataset_id,model_id,variant,wql,mase,n_series_scored,seed,config_hash");
}

fn recompute(rows: &[AggregateRow]) -> Vec<AggregateRow> {
    let cells: Vec<ResultRow> = rows
        .iter()
        .filter(|r| r.kind == RowKind::Cell)
        .map(|r| ResultRow {
            dataset_id: r.dataset_id.clone(),
            model_id: r.model_id.clone(),
            variant: r.model_id.clone(),
            wql: r.wql,
            mase: r.mase,
            n_series_scored: 1,
            seed: r.seed,
            config_hash: r.config_hash.clone(),
        })
        .collect();
    build_table(&cells, "backbone").unwrap().rows
}

fn same(a: &[AggregateRow], b: &[AggregateRow]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.kind == y.kind
                && x.model_id == y.model_id
                && x.dataset_id == y.dataset_id
                && (x.wql == y.wql || (x.wql.is_nan() && y.wql.is_nan()))
                && (x.mase == y.mase || (x.mase.is_nan() && y.mase.is_nan()))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn footers_recompute_from_cells(
        scores in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0), 3..=12),
        seeds in 1u64..3,
    ) {
        let models = ["backbone", "A", "B"];
        let mut rows = Vec::new();
        for (i, (w, m)) in scores.iter().enumerate() {
            let mut r = row(D[(i / 3) % 3], models[i % 3], *w, *m);
            r.seed = (i as u64 / 9) % seeds;
            rows.push(r);
        }
        rows.sort_by(|a, b| (a.seed, &a.dataset_id, &a.model_id).cmp(&(b.seed, &b.dataset_id, &b.model_id)));
        rows.dedup_by(|a, b| (a.seed, &a.dataset_id, &a.model_id) == (b.seed, &b.dataset_id, &b.model_id));
        let Ok(t) = build_table(&rows, "backbone") else {
            // some seed group lacks a baseline row for one of its datasets
            return Ok(());
        };
        for r in t.rows.iter().filter(|r| r.kind == RowKind::AggRelativeScore && r.model_id == "backbone") {
            prop_assert_eq!(r.wql, 1.0);
            prop_assert_eq!(r.mase, 1.0);
        }
        prop_assert!(same(&recompute(&t.rows), &t.rows));
    }
}
