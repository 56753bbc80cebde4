//! Aggregate table (per-dataset cells plus relative-score and rank footers)
//! and long-format plot data, computed per seed from result rows.

use std::collections::BTreeSet;

use covlab_core::io::sha256_hex;
use covlab_core::metrics::{agg_relative_score, average_rank};
use covlab_core::synthgen::dataset_group;
use covlab_core::Error;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::results::ResultRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Cell,
    AggRelativeScore,
    AvgRank,
}

/// One line of the aggregate CSV. Footer lines leave `dataset_id` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub kind: RowKind,
    pub seed: u64,
    pub dataset_id: String,
    pub model_id: String,
    pub wql: f64,
    pub mase: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub model: String,
    pub group: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTable {
    pub baseline: String,
    pub rows: Vec<AggregateRow>,
}

impl AggregateTable {
    pub fn footer(&self, kind: RowKind, seed: u64, model: &str) -> Option<&AggregateRow> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.seed == seed && r.model_id == model)
    }
}

fn defined(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Hash shared by a group of rows: the common one, or a digest of all.
fn combined_hash<'a>(hashes: impl Iterator<Item = &'a str>) -> String {
    let set: BTreeSet<&str> = hashes.collect();
    if set.len() == 1 {
        return set.into_iter().next().unwrap().to_string();
    }
    let joined: Vec<&str> = set.into_iter().collect();
    sha256_hex(joined.join(",").as_bytes())[..16].to_string()
}

/// Score matrix (dataset x model) for one metric.
fn matrix(
    rows: &[&ResultRow],
    datasets: &[&str],
    models: &[&str],
    metric: fn(&ResultRow) -> f64,
) -> Vec<Vec<Option<f64>>> {
    datasets
        .iter()
        .map(|d| {
            models
                .iter()
                .map(|m| {
                    rows.iter()
                        .find(|r| r.dataset_id == *d && r.model_id == *m)
                        .and_then(|r| defined(metric(r)))
                })
                .collect()
        })
        .collect()
}

fn column(m: &[Vec<Option<f64>>], j: usize) -> Vec<Option<f64>> {
    m.iter().map(|row| row[j]).collect()
}

/// Relative score of model `j` against `b`; NaN when no dataset has both.
fn relative(m: &[Vec<Option<f64>>], j: usize, b: usize) -> CliResult<f64> {
    match agg_relative_score(&column(m, j), &column(m, b)) {
        Ok(v) => Ok(v),
        Err(Error::Aggregation(msg)) if msg.starts_with("no dataset") => Ok(f64::NAN),
        Err(e) => Err(e.into()),
    }
}

fn ranks(m: &[Vec<Option<f64>>], n_models: usize) -> CliResult<Vec<f64>> {
    if n_models < 2 {
        return Ok(vec![1.0; n_models]);
    }
    Ok(average_rank(m)?)
}

struct SeedGroup<'a> {
    seed: u64,
    rows: Vec<&'a ResultRow>,
    datasets: Vec<&'a str>,
    models: Vec<&'a str>,
    baseline: usize,
}

fn seed_groups<'a>(rows: &'a [ResultRow], baseline: &str) -> CliResult<Vec<SeedGroup<'a>>> {
    if rows.is_empty() {
        return Err(Error::Aggregation("no result rows".into()).into());
    }
    let seeds: BTreeSet<u64> = rows.iter().map(|r| r.seed).collect();
    let mut out = Vec::new();
    for seed in seeds {
        let group: Vec<&ResultRow> = rows.iter().filter(|r| r.seed == seed).collect();
        let datasets: Vec<&str> = group
            .iter()
            .map(|r| r.dataset_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let models: Vec<&str> = group
            .iter()
            .map(|r| r.model_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let Some(b) = models.iter().position(|m| *m == baseline) else {
            return Err(Error::Aggregation(format!("no rows for baseline `{baseline}` at seed {seed}")).into());
        };
        for d in &datasets {
            if !group.iter().any(|r| r.dataset_id == *d && r.model_id == baseline) {
                return Err(Error::Aggregation(format!(
                    "baseline `{baseline}` has no row for dataset `{d}` at seed {seed}"
                ))
                .into());
            }
        }
        out.push(SeedGroup {
            seed,
            rows: group,
            datasets,
            models,
            baseline: b,
        });
    }
    Ok(out)
}

/// Cells sorted by (seed, dataset, model), then per seed one relative-score
/// and one rank line per model.
pub fn build_table(rows: &[ResultRow], baseline: &str) -> CliResult<AggregateTable> {
    let mut out = Vec::new();
    for g in seed_groups(rows, baseline)? {
        let mut cells: Vec<&ResultRow> = g.rows.clone();
        cells.sort_by(|a, b| (&a.dataset_id, &a.model_id).cmp(&(&b.dataset_id, &b.model_id)));
        for r in cells {
            out.push(AggregateRow {
                kind: RowKind::Cell,
                seed: g.seed,
                dataset_id: r.dataset_id.clone(),
                model_id: r.model_id.clone(),
                wql: r.wql,
                mase: r.mase,
                config_hash: r.config_hash.clone(),
            });
        }
        let wql = matrix(&g.rows, &g.datasets, &g.models, |r| r.wql);
        let mase = matrix(&g.rows, &g.datasets, &g.models, |r| r.mase);
        let (rank_wql, rank_mase) = (ranks(&wql, g.models.len())?, ranks(&mase, g.models.len())?);
        for (j, model) in g.models.iter().enumerate() {
            let hash = combined_hash(g.rows.iter().filter(|r| r.model_id == *model).map(|r| r.config_hash.as_str()));
            out.push(AggregateRow {
                kind: RowKind::AggRelativeScore,
                seed: g.seed,
                dataset_id: String::new(),
                model_id: model.to_string(),
                wql: relative(&wql, j, g.baseline)?,
                mase: relative(&mase, j, g.baseline)?,
                config_hash: hash.clone(),
            });
            out.push(AggregateRow {
                kind: RowKind::AvgRank,
                seed: g.seed,
                dataset_id: String::new(),
                model_id: model.to_string(),
                wql: rank_wql[j],
                mase: rank_mase[j],
                config_hash: hash,
            });
        }
    }
    Ok(AggregateTable {
        baseline: baseline.to_string(),
        rows: out,
    })
}

/// Relative WQL and MASE per model over all datasets and over the simple and
/// complex signal groups.
pub fn plot_data(rows: &[ResultRow], baseline: &str) -> CliResult<Vec<PlotRow>> {
    let mut out = Vec::new();
    for g in seed_groups(rows, baseline)? {
        let groups = ["all", "simple", "complex"];
        for group in groups {
            let datasets: Vec<&str> = g
                .datasets
                .iter()
                .copied()
                .filter(|d| group == "all" || dataset_group(d) == Some(group))
                .collect();
            if datasets.is_empty() {
                continue;
            }
            let wql = matrix(&g.rows, &datasets, &g.models, |r| r.wql);
            let mase = matrix(&g.rows, &datasets, &g.models, |r| r.mase);
            for (j, model) in g.models.iter().enumerate() {
                let hash = combined_hash(
                    g.rows
                        .iter()
                        .filter(|r| r.model_id == *model && datasets.contains(&r.dataset_id.as_str()))
                        .map(|r| r.config_hash.as_str()),
                );
                for (metric, m) in [("agg_rel_wql", &wql), ("agg_rel_mase", &mase)] {
                    out.push(PlotRow {
                        model: model.to_string(),
                        group: group.to_string(),
                        metric: metric.to_string(),
                        value: relative(m, j, g.baseline)?,
                        seed: g.seed,
                        config_hash: hash.clone(),
                    });
                }
            }
        }
    }
    Ok(out)
}
