use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use mvhash_core::bundle::load_index;
use mvhash_core::config::RunConfig;
use mvhash_core::dataset::{load_vectors, VectorFormat, VectorView};
use mvhash_core::fusion::{qsrf_search, ScoredItem};
use mvhash_core::hashing::hamming_rank;
use mvhash_core::index::MultiTableIndex;
use mvhash_core::qrank::qrank_query;

use crate::{Mode, QueryArgs};

/// Ranked item ids for one query. `query_views[m]` is the query in view
/// `m`; the single-view modes only read `query_views[table]`. Scores are
/// distances (ascending) for hamming and qrank and walk probabilities
/// (descending) for qsrf.
pub fn rank(
    index: &MultiTableIndex,
    mode: Mode,
    table: usize,
    query_views: &[&[f32]],
    cfg: &RunConfig,
    k: usize,
) -> Result<Vec<ScoredItem>> {
    let t = index
        .tables
        .get(table)
        .with_context(|| format!("table {table} does not exist (index has {})", index.num_views()))?;
    let q = query_views[table];
    Ok(match mode {
        Mode::Hamming => {
            let code = t
                .hash_model
                .encode_one(q)
                .with_context(|| format!("view {}", t.view_id))?;
            hamming_rank(&t.codes, &code, k)
                .into_iter()
                .map(|nb| ScoredItem {
                    id: t.item_ids[nb.id],
                    score: nb.distance as f64,
                })
                .collect()
        }
        Mode::Qrank => qrank_query(t, q, &cfg.qrank_params(), k)
            .with_context(|| format!("view {}", t.view_id))?
            .1
            .into_iter()
            .map(|nb| ScoredItem {
                id: nb.id,
                score: nb.distance,
            })
            .collect(),
        Mode::Qsrf => {
            let mut r = qsrf_search(index, query_views, &cfg.qsrf_params())?;
            r.truncate(k);
            r
        }
    })
}

#[derive(Debug, Serialize)]
struct QueryResult {
    query: usize,
    items: Vec<ScoredItem>,
}

#[derive(Debug, Serialize)]
struct QueryOutput {
    mode: Mode,
    /// "ascending" for distances, "descending" for walk scores.
    score_order: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<usize>,
    k: usize,
    results: Vec<QueryResult>,
}

/// Pick the per-view query files the mode needs, indexed by view.
fn query_files(paths: &[std::path::PathBuf], mode: Mode, table: usize, views: usize) -> Result<Vec<Option<VectorView>>> {
    let load = |p: &Path, m: usize| {
        load_vectors(p, VectorFormat::from_path(p), m)
            .with_context(|| format!("view {m}: loading queries {}", p.display()))
    };
    let mut out: Vec<Option<VectorView>> = (0..views).map(|_| None).collect();
    match mode {
        Mode::Qsrf => {
            if paths.len() < views {
                bail!(
                    "qsrf needs query vectors for every view: got {}, missing view {}",
                    paths.len(),
                    paths.len()
                );
            }
            if paths.len() > views {
                bail!("{} query files for an index with {views} views", paths.len());
            }
            for (m, p) in paths.iter().enumerate() {
                out[m] = Some(load(p, m)?);
            }
        }
        Mode::Hamming | Mode::Qrank => {
            if table >= views {
                bail!("table {table} does not exist (index has {views})");
            }
            let p = match paths.len() {
                1 => &paths[0],
                n if n == views => &paths[table],
                n => bail!("give one query file or one per view ({views}), got {n}"),
            };
            out[table] = Some(load(p, table)?);
        }
    }
    let counts: Vec<usize> = out.iter().flatten().map(VectorView::n).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        bail!("query files disagree on the number of queries: {counts:?}");
    }
    Ok(out)
}

pub fn run(args: &QueryArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    if args.k == 0 {
        bail!("k must be at least 1");
    }
    let dir = args.index.clone().unwrap_or_else(|| cfg.output.clone());
    let (index, _, _) =
        load_index(&dir).with_context(|| format!("loading index {}", dir.display()))?;
    let files = query_files(&args.queries, args.mode, args.table, index.num_views())?;
    let nq = files.iter().flatten().map(VectorView::n).next().unwrap_or(0);
    let empty: &[f32] = &[];
    let results = (0..nq)
        .into_par_iter()
        .map(|q| {
            let views: Vec<&[f32]> = files
                .iter()
                .map(|f| f.as_ref().map_or(empty, |v| v.row(q)))
                .collect();
            Ok(QueryResult {
                query: q,
                items: rank(&index, args.mode, args.table, &views, &cfg, args.k)
                    .with_context(|| format!("query {q}"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let out = QueryOutput {
        mode: args.mode,
        score_order: if args.mode == Mode::Qsrf { "descending" } else { "ascending" },
        table: (args.mode != Mode::Qsrf).then_some(args.table),
        k: args.k,
        results,
    };
    let text = serde_json::to_string_pretty(&out)? + "\n";
    match &args.out {
        Some(p) => crate::write_text(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
