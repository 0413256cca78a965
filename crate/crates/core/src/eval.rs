//! Retrieval metrics and exhaustive reference rankings.
//!
//! Relevant sets are sorted id slices (see [`crate::dataset::GroundTruth`]).
//! Positions past the end of a ranked list count as non-relevant.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::VectorView;
use crate::error::{Error, Result};
use crate::hashing::{get_bit, hamming_distance, Neighbor, PackedCodes};

fn check(relevant: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if relevant.is_empty() {
        return Err(Error::invalid("relevant set is empty"));
    }
    Ok(())
}

fn is_rel(relevant: &[usize], id: usize) -> bool {
    relevant.binary_search(&id).is_ok()
}

fn hits_at(ranked: &[usize], relevant: &[usize], k: usize) -> usize {
    ranked.iter().take(k).filter(|&&id| is_rel(relevant, id)).count()
}

pub fn precision_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check(relevant, k)?;
    Ok(hits_at(ranked, relevant, k) as f64 / k as f64)
}

pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check(relevant, k)?;
    Ok(hits_at(ranked, relevant, k) as f64 / relevant.len() as f64)
}

/// Truncated AP: precision at each relevant position up to `k`, divided by
/// `min(|relevant|, k)`.
pub fn average_precision(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check(relevant, k)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &id) in ranked.iter().take(k).enumerate() {
        if is_rel(relevant, id) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / relevant.len().min(k) as f64)
}

pub fn mean_average_precision(aps: &[f64]) -> Result<f64> {
    if aps.is_empty() {
        return Err(Error::invalid("no valid queries"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// `(recall, precision)` after each rank position.
pub fn pr_curve(ranked: &[usize], relevant: &[usize]) -> Result<Vec<(f64, f64)>> {
    check(relevant, 1)?;
    let mut hits = 0usize;
    Ok(ranked
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            if is_rel(relevant, id) {
                hits += 1;
            }
            (
                hits as f64 / relevant.len() as f64,
                hits as f64 / (i + 1) as f64,
            )
        })
        .collect())
}

/// Metrics of one ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub ap_at: BTreeMap<usize, f64>,
    /// AP over the whole ranked list.
    pub ap: f64,
    pub pr_curve: Vec<(f64, f64)>,
}

pub fn evaluate_ranking(ranked: &[usize], relevant: &[usize], ks: &[usize]) -> Result<QueryMetrics> {
    let mut m = QueryMetrics {
        precision_at: BTreeMap::new(),
        recall_at: BTreeMap::new(),
        ap_at: BTreeMap::new(),
        ap: average_precision(ranked, relevant, ranked.len().max(1))?,
        pr_curve: pr_curve(ranked, relevant)?,
    };
    for &k in ks {
        m.precision_at.insert(k, precision_at_k(ranked, relevant, k)?);
        m.recall_at.insert(k, recall_at_k(ranked, relevant, k)?);
        m.ap_at.insert(k, average_precision(ranked, relevant, k)?);
    }
    Ok(m)
}

/// Metrics averaged over the queries of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision_at: BTreeMap<usize, f64>,
    pub recall_at: BTreeMap<usize, f64>,
    pub ap_at: BTreeMap<usize, f64>,
    pub map_score: f64,
    /// Mean `(recall, precision)` per rank position.
    pub pr_curve: Vec<(f64, f64)>,
    pub valid_queries: usize,
    pub empty_queries: usize,
}

impl Metrics {
    /// Average per-query results; `None` entries are queries with an empty
    /// relevant set and are only counted.
    pub fn aggregate(per_query: &[Option<QueryMetrics>]) -> Result<Self> {
        let valid: Vec<&QueryMetrics> = per_query.iter().flatten().collect();
        if valid.is_empty() {
            return Err(Error::invalid("no valid queries"));
        }
        let nq = valid.len() as f64;
        let mean_map = |f: &dyn Fn(&QueryMetrics) -> &BTreeMap<usize, f64>| {
            let mut out = BTreeMap::new();
            for q in &valid {
                for (&k, &v) in f(q) {
                    *out.entry(k).or_insert(0.0) += v / nq;
                }
            }
            out
        };
        let len = valid.iter().map(|q| q.pr_curve.len()).max().unwrap_or(0);
        let mut pr = vec![(0.0, 0.0); len];
        for q in &valid {
            // past the end of a shorter list: recall stays, precision decays
            let (mut rec, mut hits) = (0.0, 0.0);
            for (i, p) in pr.iter_mut().enumerate() {
                if let Some(&(r, prec)) = q.pr_curve.get(i) {
                    rec = r;
                    hits = prec * (i + 1) as f64;
                }
                p.0 += rec / nq;
                p.1 += hits / (i + 1) as f64 / nq;
            }
        }
        Ok(Self {
            precision_at: mean_map(&|q| &q.precision_at),
            recall_at: mean_map(&|q| &q.recall_at),
            ap_at: mean_map(&|q| &q.ap_at),
            map_score: mean_average_precision(&valid.iter().map(|q| q.ap).collect::<Vec<_>>())?,
            pr_curve: pr,
            valid_queries: valid.len(),
            empty_queries: per_query.len() - valid.len(),
        })
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy)]
pub enum Metric<'a> {
    Euclidean,
    Hamming,
    WeightedHamming(&'a [f64]),
}

#[derive(Debug, Clone, Copy)]
pub enum Points<'a> {
    Vectors(&'a VectorView),
    Codes(&'a PackedCodes),
}

#[derive(Debug, Clone, Copy)]
pub enum Probe<'a> {
    Vector(&'a [f32]),
    Code(&'a [u64]),
}

/// Exhaustive scan and full sort: ascending distance, ties by ascending row.
/// Euclidean distances are squared. Weighted Hamming adds the differing
/// weights from smallest to largest.
pub fn brute_force_rank(
    points: Points<'_>,
    probe: Probe<'_>,
    metric: Metric<'_>,
    k: usize,
) -> Result<Vec<Neighbor<f64>>> {
    let dist: Vec<f64> = match (points, probe, metric) {
        (Points::Vectors(v), Probe::Vector(q), Metric::Euclidean) => {
            if q.len() != v.dim() {
                return Err(Error::DimensionMismatch {
                    expected: v.dim(),
                    got: q.len(),
                });
            }
            v.rows()
                .map(|r| {
                    r.iter()
                        .zip(q)
                        .map(|(&a, &b)| {
                            let d = a as f64 - b as f64;
                            d * d
                        })
                        .sum()
                })
                .collect()
        }
        (Points::Codes(c), Probe::Code(q), Metric::Hamming) => {
            if q.len() != c.words_per_code() {
                return Err(Error::invalid("probe code width differs from the codes"));
            }
            (0..c.len()).map(|i| hamming_distance(c.code(i), q) as f64).collect()
        }
        (Points::Codes(c), Probe::Code(q), Metric::WeightedHamming(w)) => {
            if q.len() != c.words_per_code() || w.len() != c.bits() {
                return Err(Error::invalid("probe code or weights do not match the codes"));
            }
            (0..c.len())
                .map(|i| {
                    let mut diff: Vec<(f64, usize)> = (0..c.bits())
                        .filter(|&b| get_bit(c.code(i), b) != get_bit(q, b))
                        .map(|b| (w[b], b))
                        .collect();
                    diff.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                    diff.iter().fold(0.0, |acc, &(wb, _)| acc + wb)
                })
                .collect()
        }
        _ => return Err(Error::invalid("metric does not apply to these points")),
    };
    let mut out: Vec<Neighbor<f64>> = dist
        .into_iter()
        .enumerate()
        .map(|(id, distance)| Neighbor { id, distance })
        .collect();
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    out.truncate(k);
    Ok(out)
}
