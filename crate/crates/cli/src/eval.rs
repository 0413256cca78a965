use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use mvhash_core::bundle::load_index;
use mvhash_core::config::RunConfig;
use mvhash_core::dataset::{ground_truth, DatasetSplit, MultiViewDataset};
use mvhash_core::eval::{evaluate_ranking, mean_std, Metrics, QueryMetrics};
use mvhash_core::index::MultiTableIndex;

use crate::{build_index, load_dataset, query::rank, write_text, EvalArgs, Mode};

pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const PR_CURVE_CSV: &str = "pr_curve.csv";
pub const CSV_HEADER: &str = "mode,metric,k,mean,stddev";

#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub metric: String,
    pub k: Option<usize>,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Serialize)]
struct ModeReport {
    summary: Vec<SummaryRow>,
    per_run: Vec<Metrics>,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    runs: usize,
    seeds: Vec<u64>,
    views: usize,
    config: &'a RunConfig,
    modes: BTreeMap<&'static str, ModeReport>,
}

/// Metrics of every mode for one split. Each ranked list holds the top
/// `top_n` items so that all modes are cut at the same depth.
fn eval_run(
    cfg: &RunConfig,
    ds: &MultiViewDataset,
    index: &MultiTableIndex,
    split: &DatasetSplit,
    modes: &[Mode],
    table: usize,
) -> Result<Vec<Metrics>> {
    let labels = ds.labels().context("labels are required for evaluation")?;
    let gt = ground_truth(labels, &split.query_idx, &split.database_idx)?;
    let per_query: Vec<Vec<Option<QueryMetrics>>> = split
        .query_idx
        .par_iter()
        .enumerate()
        .map(|(qi, &item)| {
            let views: Vec<&[f32]> = ds.views().iter().map(|v| v.row(item)).collect();
            let relevant = gt.relevant(qi);
            modes
                .iter()
                .map(|&mode| {
                    if relevant.is_empty() {
                        return Ok(None);
                    }
                    let ranked: Vec<usize> = rank(index, mode, table, &views, cfg, cfg.top_n)?
                        .into_iter()
                        .map(|s| s.id)
                        .collect();
                    Ok(Some(evaluate_ranking(&ranked, relevant, &cfg.eval_ks)?))
                })
                .collect::<Result<Vec<_>>>()
                .with_context(|| format!("query item {item}"))
        })
        .collect::<Result<_>>()?;
    modes
        .iter()
        .enumerate()
        .map(|(j, mode)| {
            let col: Vec<Option<QueryMetrics>> = per_query.iter().map(|q| q[j].clone()).collect();
            Metrics::aggregate(&col).with_context(|| format!("mode {}", mode.name()))
        })
        .collect()
}

pub fn summarize(runs: &[Metrics]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, k: Option<usize>, vals: Vec<f64>| {
        let (mean, stddev) = mean_std(&vals);
        rows.push(SummaryRow {
            metric: metric.to_string(),
            k,
            mean,
            stddev,
        });
    };
    let ks: Vec<usize> = runs[0].precision_at.keys().copied().collect();
    for &k in &ks {
        push("precision", Some(k), runs.iter().map(|m| m.precision_at[&k]).collect());
        push("recall", Some(k), runs.iter().map(|m| m.recall_at[&k]).collect());
        push("ap", Some(k), runs.iter().map(|m| m.ap_at[&k]).collect());
    }
    push("map", None, runs.iter().map(|m| m.map_score).collect());
    rows
}

/// Mean curve over runs, cut to the shortest run.
fn mean_pr_curve(runs: &[Metrics]) -> Vec<(f64, f64)> {
    let len = runs.iter().map(|m| m.pr_curve.len()).min().unwrap_or(0);
    let n = runs.len() as f64;
    (0..len)
        .map(|i| {
            runs.iter().fold((0.0, 0.0), |acc, m| {
                (acc.0 + m.pr_curve[i].0 / n, acc.1 + m.pr_curve[i].1 / n)
            })
        })
        .collect()
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let ds = load_dataset(&cfg, true)?;
    let mut modes: Vec<Mode> = Vec::new();
    for &m in &args.modes {
        if !modes.contains(&m) {
            modes.push(m);
        }
    }
    if ds.num_views() < 2 && !args.force_qsrf && modes.contains(&Mode::Qsrf) {
        log::info!("single view: skipping qsrf (use --force-qsrf to keep it)");
        modes.retain(|&m| m != Mode::Qsrf);
    }
    if modes.is_empty() {
        bail!("no modes to evaluate");
    }
    if args.table >= ds.num_views() {
        bail!("table {} does not exist (dataset has {} views)", args.table, ds.num_views());
    }

    let mut seeds = Vec::new();
    let mut per_run: Vec<Vec<Metrics>> = Vec::new();
    if let Some(dir) = &args.index {
        let (index, split, _) =
            load_index(dir).with_context(|| format!("loading index {}", dir.display()))?;
        if index.num_views() != ds.num_views() {
            bail!("index has {} views, dataset has {}", index.num_views(), ds.num_views());
        }
        if split.query_idx.iter().chain(&split.database_idx).any(|&i| i >= ds.n()) {
            bail!("index split refers to items beyond the dataset ({} items)", ds.n());
        }
        seeds.push(split.seed);
        per_run.push(eval_run(&cfg, &ds, &index, &split, &modes, args.table)?);
    } else {
        for r in 0..cfg.runs {
            let seed = cfg.seed.wrapping_add(r as u64);
            let t = std::time::Instant::now();
            let (index, split) =
                build_index(&cfg, &ds, seed).with_context(|| format!("run {r} (seed {seed})"))?;
            let m = eval_run(&cfg, &ds, &index, &split, &modes, args.table)
                .with_context(|| format!("run {r} (seed {seed})"))?;
            log::info!(
                "run {}/{} seed {seed}: {} ({:.1}s)",
                r + 1,
                cfg.runs,
                modes
                    .iter()
                    .zip(&m)
                    .map(|(mode, m)| format!("{} MAP {:.4}", mode.name(), m.map_score))
                    .collect::<Vec<_>>()
                    .join(", "),
                t.elapsed().as_secs_f64()
            );
            seeds.push(seed);
            per_run.push(m);
        }
    }

    let out = &cfg.output;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let mut pr = String::from("mode,rank,recall,precision\n");
    let mut report = Report {
        runs: per_run.len(),
        seeds,
        views: ds.num_views(),
        config: &cfg,
        modes: BTreeMap::new(),
    };
    for (j, mode) in modes.iter().enumerate() {
        let runs: Vec<Metrics> = per_run.iter().map(|r| r[j].clone()).collect();
        let summary = summarize(&runs);
        for row in &summary {
            let k = row.k.map(|k| k.to_string()).unwrap_or_default();
            writeln!(csv, "{},{},{k},{},{}", mode.name(), row.metric, row.mean, row.stddev)?;
        }
        for (i, (r, p)) in mean_pr_curve(&runs).into_iter().enumerate() {
            writeln!(pr, "{},{},{r},{p}", mode.name(), i + 1)?;
        }
        report.modes.insert(
            mode.name(),
            ModeReport {
                summary,
                per_run: runs,
            },
        );
    }
    write_text(&out.join(METRICS_CSV), &csv)?;
    write_text(&out.join(PR_CURVE_CSV), &pr)?;
    write_text(
        &out.join(METRICS_JSON),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    print!("{csv}");
    Ok(())
}
