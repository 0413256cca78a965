//! Query-specific rank fusion across hash tables.
//!
//! Each table's weighted-Hamming candidates, plus the query itself, form a
//! graph whose edge weights come from shared nearest anchors in the
//! query-weighted Hamming space. The graphs are superposed and the fused
//! vertices are reranked by a random walk that restarts at the query.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::SparseRow;
use crate::error::{Error, Result};
use crate::hashing::{Neighbor, PackedCodes};
use crate::index::{HashTable, MultiTableIndex};
use crate::qrank::{qrank_query, QRankParams, DEFAULT_TOP_N};

pub const DEFAULT_ALPHA: f64 = 0.85;
pub const DEFAULT_RESTART_MASS: f64 = 0.99;
pub const DEFAULT_WALK_TOL: f64 = 1e-10;
pub const DEFAULT_WALK_ITERS: usize = 1000;

/// Graph vertex: the query or a database item. The query sorts first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Vertex {
    Query,
    Item(usize),
}

/// Symmetric nonnegative sparse matrix without diagonal. Rows are sorted
/// by column.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseSymmetric {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseSymmetric {
    pub fn empty(n: usize) -> Self {
        Self {
            rows: vec![Vec::new(); n],
        }
    }

    /// Build from upper-triangle entries `(i, j, w)` with `i < j`.
    pub fn from_upper(n: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut rows = vec![Vec::new(); n];
        for (i, j, w) in entries {
            debug_assert!(i < j && j < n);
            rows[i].push((j, w));
            rows[j].push((i, w));
        }
        for r in &mut rows {
            r.sort_by_key(|e| e.0);
        }
        Self { rows }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map_or(0.0, |p| self.rows[i][p].1)
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows
            .iter()
            .enumerate()
            .all(|(i, r)| r.iter().all(|&(j, w)| j != i && self.get(j, i) == w))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, w) in r {
                m[(i, j)] = w;
            }
        }
        m
    }
}

/// Anchor representation of code rows in the weighted Hamming space: each
/// row keeps its `s_nn` nearest anchors with weights
/// `exp(-d_H / sigma_H)` normalized to sum to one, where
/// `sigma_H = sum_k w_k` is the largest attainable weighted distance.
pub fn candidate_embedding(
    rows: &[&[u64]],
    anchor_codes: &PackedCodes,
    weights: &[f64],
    s_nn: usize,
) -> Result<Vec<SparseRow>> {
    let k = anchor_codes.len();
    if s_nn == 0 || s_nn > k {
        return Err(Error::invalid(format!("s_nn {s_nn} must be in 1..={k}")));
    }
    if weights.len() != anchor_codes.bits() {
        return Err(Error::DimensionMismatch {
            expected: anchor_codes.bits(),
            got: weights.len(),
        });
    }
    let sigma_h: f64 = weights.iter().sum();
    let sigma_h = if sigma_h > 0.0 { sigma_h } else { 1.0 };
    let table = ByteWeights::new(weights);

    // identical codes share a representation
    let mut slot: HashMap<&[u64], usize> = HashMap::with_capacity(rows.len());
    let mut unique: Vec<&[u64]> = Vec::new();
    let which: Vec<usize> = rows
        .iter()
        .map(|&code| {
            *slot.entry(code).or_insert_with(|| {
                unique.push(code);
                unique.len() - 1
            })
        })
        .collect();

    let reps: Vec<SparseRow> = unique
        .par_iter()
        .with_min_len(32)
        .map_init(
            || Vec::with_capacity(s_nn + 1),
            |top: &mut Vec<(f64, usize)>, code| {
                // s_nn smallest (distance, anchor), kept sorted; anchors
                // arrive in ascending order so ties keep the lower index
                top.clear();
                for j in 0..k {
                    let d = table.distance(code, anchor_codes.code(j));
                    if top.len() == s_nn {
                        if d >= top[s_nn - 1].0 {
                            continue;
                        }
                        top.pop();
                    }
                    let at = top.partition_point(|e| e.0 <= d);
                    top.insert(at, (d, j));
                }
                let nearest = top[0].0;
                SparseRow::normalized(
                    top.iter()
                        .map(|&(d, j)| (j as u32, (-(d - nearest) / sigma_h).exp()))
                        .collect(),
                )
            },
        )
        .collect();
    Ok(which.into_iter().map(|u| reps[u].clone()).collect())
}

/// Weighted Hamming distance by byte lookup: entry `[b][v]` is the weight
/// of the bits set in `v` at byte `b`. Agrees with
/// [`crate::qrank::weighted_hamming`] up to summation order.
pub struct ByteWeights {
    table: Vec<[f64; 256]>,
}

impl ByteWeights {
    pub fn new(weights: &[f64]) -> Self {
        let table = weights
            .chunks(8)
            .map(|w| {
                let mut t = [0.0f64; 256];
                for v in 1..256usize {
                    let high = usize::BITS - 1 - v.leading_zeros();
                    t[v] = t[v & !(1 << high)] + w.get(high as usize).copied().unwrap_or(0.0);
                }
                t
            })
            .collect();
        Self { table }
    }

    pub fn distance(&self, a: &[u64], b: &[u64]) -> f64 {
        let mut d = 0.0;
        for (wi, (x, y)) in a.iter().zip(b).enumerate() {
            let mut diff = x ^ y;
            let mut byte = wi * 8;
            while diff != 0 && byte < self.table.len() {
                d += self.table[byte][(diff & 0xff) as usize];
                diff >>= 8;
                byte += 1;
            }
        }
        d
    }
}

/// Symmetric similarity from anchor representations:
/// `S_ij = <Z_i, Z_j> (1/lambda_i + 1/lambda_j)` with
/// `lambda_i = sum_j <Z_i, Z_j>` over all rows (self included).
///
/// Returns the similarity and a flag per row that is set when the row has
/// no mass (`lambda_i = 0`) and therefore no edges.
pub fn candidate_similarity(z: &[SparseRow]) -> (SparseSymmetric, Vec<bool>) {
    let n = z.len();
    let k = z
        .iter()
        .flat_map(|r| r.entries.iter().map(|e| e.0 as usize + 1))
        .max()
        .unwrap_or(0);
    let mut postings: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    let mut colsum = vec![0.0f64; k];
    for (i, r) in z.iter().enumerate() {
        for &(a, v) in &r.entries {
            postings[a as usize].push((i, v));
            colsum[a as usize] += v;
        }
    }
    let lambda: Vec<f64> = z
        .iter()
        .map(|r| r.entries.iter().map(|&(a, v)| v * colsum[a as usize]).sum())
        .collect();
    let isolated: Vec<bool> = lambda.iter().map(|&l| !(l > 0.0)).collect();

    let mut acc = vec![0.0f64; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut upper = Vec::new();
    for i in 0..n {
        if isolated[i] {
            continue;
        }
        for &(a, vi) in &z[i].entries {
            for &(j, vj) in &postings[a as usize] {
                if j > i && !isolated[j] {
                    if acc[j] == 0.0 {
                        touched.push(j);
                    }
                    acc[j] += vi * vj;
                }
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            let inner = acc[j];
            if inner > 0.0 {
                upper.push((i, j, inner / lambda[i] + inner / lambda[j]));
            }
            acc[j] = 0.0;
        }
        touched.clear();
    }
    (SparseSymmetric::from_upper(n, upper), isolated)
}

/// Candidate set of one table (query included) with its edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGraph {
    pub table_id: usize,
    /// Sorted; the query is vertex 0.
    pub vertices: Vec<Vertex>,
    pub omega: SparseSymmetric,
    pub isolated: Vec<bool>,
}

impl CandidateGraph {
    /// Graph over the query and `candidate_ids` for one table, using the
    /// query's calibrated weights for distances to anchors.
    pub fn build(
        table: &HashTable,
        query_code: &[u64],
        candidate_ids: &[usize],
        weights: &[f64],
    ) -> Result<Self> {
        let mut ids = candidate_ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        let mut rows: Vec<&[u64]> = Vec::with_capacity(ids.len() + 1);
        rows.push(query_code);
        for &id in &ids {
            let r = table
                .row_of(id)
                .ok_or_else(|| Error::invalid(format!("item {id} is not in table {}", table.view_id)))?;
            rows.push(table.codes.code(r));
        }
        let z = candidate_embedding(
            &rows,
            table.anchors.anchor_codes(),
            weights,
            table.anchors.s_nn(),
        )?;
        let (omega, isolated) = candidate_similarity(&z);
        let mut vertices = Vec::with_capacity(ids.len() + 1);
        vertices.push(Vertex::Query);
        vertices.extend(ids.into_iter().map(Vertex::Item));
        Ok(Self {
            table_id: table.view_id,
            vertices,
            omega,
            isolated,
        })
    }

    pub fn from_parts(table_id: usize, vertices: Vec<Vertex>, omega: SparseSymmetric) -> Result<Self> {
        if vertices.len() != omega.n() {
            return Err(Error::invalid("vertex count differs from matrix size"));
        }
        if vertices.first() != Some(&Vertex::Query) || vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(
                "vertices must be sorted, unique and start with the query",
            ));
        }
        let isolated = (0..omega.n()).map(|i| omega.row(i).is_empty()).collect();
        Ok(Self {
            table_id,
            vertices,
            omega,
            isolated,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Row-normalized edge weights.
    pub rows: Vec<Vec<(usize, f64)>>,
    /// Rows without edges; these jump uniformly to every vertex.
    pub dangling: Vec<bool>,
}

impl Transition {
    pub fn dense_row(&self, i: usize) -> Vec<f64> {
        let n = self.rows.len();
        if self.dangling[i] {
            return vec![1.0 / n as f64; n];
        }
        let mut row = vec![0.0; n];
        for &(j, p) in &self.rows[i] {
            row[j] = p;
        }
        row
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.rows.len();
        DMatrix::from_fn(n, n, |i, j| {
            if self.dangling[i] {
                1.0 / n as f64
            } else {
                self.rows[i]
                    .binary_search_by_key(&j, |e| e.0)
                    .map_or(0.0, |p| self.rows[i][p].1)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedGraph {
    pub vertices: Vec<Vertex>,
    pub omega: SparseSymmetric,
    pub transition: Option<Transition>,
    pub restart: Vec<f64>,
    pub alpha: f64,
}

impl FusedGraph {
    pub fn n(&self) -> usize {
        self.vertices.len()
    }

    pub fn query_index(&self) -> Option<usize> {
        self.vertices.binary_search(&Vertex::Query).ok()
    }
}

/// Superpose candidate graphs: union of vertices, summed edge weights.
pub fn fuse(graphs: &[CandidateGraph]) -> Result<FusedGraph> {
    if graphs.is_empty() {
        return Err(Error::invalid("nothing to fuse"));
    }
    let mut vertices: Vec<Vertex> = graphs.iter().flat_map(|g| g.vertices.iter().copied()).collect();
    vertices.sort_unstable();
    vertices.dedup();
    let n = vertices.len();

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for g in graphs {
        let to_global: Vec<usize> = g
            .vertices
            .iter()
            .map(|v| vertices.binary_search(v).expect("vertex in union"))
            .collect();
        for (li, lrow) in g.omega.rows.iter().enumerate() {
            let gi = to_global[li];
            for &(lj, w) in lrow {
                rows[gi].push((to_global[lj], w));
            }
        }
    }
    for r in &mut rows {
        // stable: equal columns are summed in table order
        r.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
        for &(j, w) in r.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += w,
                _ => merged.push((j, w)),
            }
        }
        *r = merged;
    }
    Ok(FusedGraph {
        vertices,
        omega: SparseSymmetric { rows },
        transition: None,
        restart: Vec::new(),
        alpha: DEFAULT_ALPHA,
    })
}

/// Row-normalize the fused weights and set the restart distribution:
/// `restart_mass` on the query, the rest spread evenly over other vertices.
pub fn transition_and_restart(mut fused: FusedGraph, alpha: f64, restart_mass: f64) -> Result<FusedGraph> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(0.0..=1.0).contains(&restart_mass) {
        return Err(Error::invalid(format!(
            "restart mass must lie in [0, 1], got {restart_mass}"
        )));
    }
    let n = fused.n();
    let mut rows = Vec::with_capacity(n);
    let mut dangling = Vec::with_capacity(n);
    for r in &fused.omega.rows {
        let total: f64 = r.iter().map(|e| e.1).sum();
        if total > 0.0 {
            rows.push(r.iter().map(|&(j, w)| (j, w / total)).collect());
            dangling.push(false);
        } else {
            rows.push(Vec::new());
            dangling.push(true);
        }
    }
    let q = fused
        .query_index()
        .ok_or_else(|| Error::invalid("fused graph has no query vertex"))?;
    fused.restart = if n == 1 {
        vec![1.0]
    } else {
        let rest = (1.0 - restart_mass) / (n - 1) as f64;
        (0..n).map(|i| if i == q { restart_mass } else { rest }).collect()
    };
    fused.transition = Some(Transition { rows, dangling });
    fused.alpha = alpha;
    Ok(fused)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankScores {
    pub r: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||r_{t+1} - r_t||_1` per iteration.
    pub residuals: Vec<f64>,
}

fn transition_of(fused: &FusedGraph) -> Result<&Transition> {
    fused
        .transition
        .as_ref()
        .ok_or_else(|| Error::invalid("transition matrix not built; call transition_and_restart"))
}

/// Power iteration of `r <- (1 - alpha) restart + alpha P' r` from `restart`.
pub fn random_walk(fused: &FusedGraph, tol: f64, max_iters: usize) -> Result<RankScores> {
    let p = transition_of(fused)?;
    let n = fused.n();
    let alpha = fused.alpha;
    let mut r = fused.restart.clone();
    let mut next = vec![0.0; n];
    let mut residuals = Vec::new();
    for it in 1..=max_iters {
        let mut dangling_mass = 0.0;
        for (i, v) in next.iter_mut().enumerate() {
            *v = (1.0 - alpha) * fused.restart[i];
        }
        for (u, row) in p.rows.iter().enumerate() {
            if p.dangling[u] {
                dangling_mass += r[u];
                continue;
            }
            let share = alpha * r[u];
            for &(v, w) in row {
                next[v] += share * w;
            }
        }
        if dangling_mass > 0.0 {
            let spread = alpha * dangling_mass / n as f64;
            next.iter_mut().for_each(|v| *v += spread);
        }
        let diff: f64 = next.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum();
        residuals.push(diff);
        std::mem::swap(&mut r, &mut next);
        if diff < tol {
            return Ok(RankScores {
                r,
                iterations: it,
                converged: true,
                residuals,
            });
        }
    }
    Ok(RankScores {
        r,
        iterations: max_iters,
        converged: false,
        residuals,
    })
}

/// Equilibrium `(1 - alpha) (I - alpha P')^{-1} restart` by a dense LU
/// solve. Meant for small graphs and cross-checking [`random_walk`].
pub fn closed_form_rank(fused: &FusedGraph) -> Result<RankScores> {
    let p = transition_of(fused)?.to_dense();
    let n = fused.n();
    let a = DMatrix::<f64>::identity(n, n) - p.transpose() * fused.alpha;
    let b = DVector::from_column_slice(&fused.restart) * (1.0 - fused.alpha);
    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("singular system in closed-form rank".into()))?;
    let total: f64 = x.iter().sum();
    Ok(RankScores {
        r: x.iter().map(|v| v / total).collect(),
        iterations: 0,
        converged: true,
        residuals: Vec::new(),
    })
}

/// Fused vertices without the query, by descending score, ties by id.
pub fn ranked_items(fused: &FusedGraph, scores: &RankScores) -> Vec<ScoredItem> {
    let mut out: Vec<ScoredItem> = fused
        .vertices
        .iter()
        .zip(&scores.r)
        .filter_map(|(v, &score)| match v {
            Vertex::Item(id) => Some(ScoredItem { id: *id, score }),
            Vertex::Query => None,
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.id.cmp(&b.id)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QsrfParams {
    pub qrank: QRankParams,
    /// Candidates taken from each table (`N_k`).
    pub top_n: usize,
    pub alpha: f64,
    pub restart_mass: f64,
    pub walk_tol: f64,
    pub walk_max_iters: usize,
}

impl Default for QsrfParams {
    fn default() -> Self {
        Self {
            qrank: QRankParams::default(),
            top_n: DEFAULT_TOP_N,
            alpha: DEFAULT_ALPHA,
            restart_mass: DEFAULT_RESTART_MASS,
            walk_tol: DEFAULT_WALK_TOL,
            walk_max_iters: DEFAULT_WALK_ITERS,
        }
    }
}

/// Intermediate products of one fused search, for inspection.
#[derive(Debug, Clone)]
pub struct QsrfOutcome {
    /// Weighted Hamming candidates of each table, best first.
    pub candidates: Vec<Vec<Neighbor<f64>>>,
    pub graphs: Vec<CandidateGraph>,
    pub fused: FusedGraph,
    pub scores: RankScores,
    pub ranked: Vec<ScoredItem>,
}

/// Per-table weighted Hamming candidates, one graph per table, fused and
/// reranked by the restart walk. `query_views[m]` is the query in view `m`.
pub fn qsrf_search_detailed(
    index: &MultiTableIndex,
    query_views: &[&[f32]],
    params: &QsrfParams,
) -> Result<QsrfOutcome> {
    if query_views.len() != index.num_views() {
        return Err(Error::invalid(format!(
            "query has {} views, index has {}",
            query_views.len(),
            index.num_views()
        )));
    }
    let (candidates, graphs): (Vec<_>, Vec<_>) = index
        .tables
        .par_iter()
        .zip(query_views.par_iter())
        .map(|(table, q)| {
            let (qw, hits) = qrank_query(table, q, &params.qrank, params.top_n)?;
            let ids: Vec<usize> = hits.iter().map(|h| h.id).collect();
            let graph = CandidateGraph::build(table, &qw.code, &ids, &qw.weights.calibrated)?;
            Ok((hits, graph))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let fused = transition_and_restart(fuse(&graphs)?, params.alpha, params.restart_mass)?;
    let scores = random_walk(&fused, params.walk_tol, params.walk_max_iters)?;
    let ranked = ranked_items(&fused, &scores);
    Ok(QsrfOutcome {
        candidates,
        graphs,
        fused,
        scores,
        ranked,
    })
}

pub fn qsrf_search(
    index: &MultiTableIndex,
    query_views: &[&[f32]],
    params: &QsrfParams,
) -> Result<Vec<ScoredItem>> {
    qsrf_search_detailed(index, query_views, params).map(|o| o.ranked)
}

/// Dense view of a fused weight matrix keyed by vertex pair, for tests and
/// diagnostics.
pub fn edge_map(vertices: &[Vertex], omega: &SparseSymmetric) -> BTreeMap<(Vertex, Vertex), f64> {
    let mut out = BTreeMap::new();
    for i in 0..omega.n() {
        for &(j, w) in omega.row(i) {
            out.insert((vertices[i], vertices[j]), w);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qrank::weighted_hamming;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(e: &[(u32, f64)]) -> SparseRow {
        SparseRow { entries: e.to_vec() }
    }

    #[test]
    fn identical_rows_similarity() {
        let z = vec![row(&[(0, 1.0)]), row(&[(0, 1.0)])];
        let (s, isolated) = candidate_similarity(&z);
        assert_eq!(s.get(0, 1), 1.0);
        assert_eq!(s.get(1, 0), 1.0);
        assert_eq!(s.get(0, 0), 0.0);
        assert_eq!(isolated, vec![false, false]);
    }

    #[test]
    fn disjoint_supports_no_edge() {
        let z = vec![row(&[(0, 0.5), (1, 0.5)]), row(&[(2, 1.0)])];
        let (s, _) = candidate_similarity(&z);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.nnz(), 0);
    }

    #[test]
    fn empty_row_is_isolated() {
        let z = vec![row(&[(0, 1.0)]), row(&[]), row(&[(0, 1.0)])];
        let (s, isolated) = candidate_similarity(&z);
        assert_eq!(isolated, vec![false, true, false]);
        assert!(s.row(1).is_empty());
        assert_eq!(s.get(0, 2), 1.0);
    }

    #[test]
    fn embedding_equal_distances_uniform() {
        // four anchors all at distance 1 from the query code
        let anchors = PackedCodes::from_bools(
            4,
            &[
                vec![true, false, false, false],
                vec![false, true, false, false],
                vec![false, false, true, false],
                vec![false, false, false, true],
            ],
        )
        .unwrap();
        let q = [0u64];
        let z = candidate_embedding(&[&q], &anchors, &[1.0; 4], 3).unwrap();
        assert_eq!(z[0].nnz(), 3);
        for e in &z[0].entries {
            assert!((e.1 - 1.0 / 3.0).abs() < 1e-15);
        }
        let z = candidate_embedding(&[anchors.code(2)], &anchors, &[0.5, 1.0, 2.0, 0.1], 1).unwrap();
        assert_eq!(z[0].entries, vec![(2, 1.0)]);
        assert!(candidate_embedding(&[&q], &anchors, &[1.0; 4], 5).is_err());
    }

    proptest! {
        #[test]
        fn byte_table_matches_weighted_hamming(seed in 0u64..500, bits in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let words = bits.div_ceil(64);
            let w: Vec<f64> = (0..bits).map(|_| rng.random::<f64>()).collect();
            let mut code = || {
                let mut c: Vec<u64> = (0..words).map(|_| rng.random()).collect();
                if bits % 64 != 0 {
                    c[words - 1] &= (1u64 << (bits % 64)) - 1;
                }
                c
            };
            let (a, b) = (code(), code());
            let t = ByteWeights::new(&w);
            prop_assert!((t.distance(&a, &b) - weighted_hamming(&a, &b, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_weights_use_sigma_h() {
        let anchors = PackedCodes::from_bools(2, &[vec![false, false], vec![true, false]]).unwrap();
        let w = [0.3, 0.7];
        let z = candidate_embedding(&[&[0u64]], &anchors, &w, 2).unwrap();
        // distances 0 and 0.3, sigma_H = 1.0
        let a = 1.0;
        let b = (-0.3f64).exp();
        assert!((z[0].entries[0].1 - a / (a + b)).abs() < 1e-15);
        assert!((z[0].entries[1].1 - b / (a + b)).abs() < 1e-15);
    }

    fn graph(table: usize, vertices: Vec<Vertex>, edges: &[(usize, usize, f64)]) -> CandidateGraph {
        let n = vertices.len();
        CandidateGraph::from_parts(table, vertices, SparseSymmetric::from_upper(n, edges.iter().copied()))
            .unwrap()
    }

    #[test]
    fn fuse_sums_shared_edges() {
        use Vertex::*;
        let g1 = graph(0, vec![Query, Item(1), Item(2)], &[(0, 1, 0.2), (1, 2, 0.4)]);
        let g2 = graph(1, vec![Query, Item(2), Item(3)], &[(0, 1, 0.1), (1, 2, 0.3)]);
        let g3 = graph(2, vec![Query, Item(1), Item(2)], &[(1, 2, 0.3)]);
        let f = fuse(&[g1.clone(), g2, g3]).unwrap();
        assert_eq!(f.vertices, vec![Query, Item(1), Item(2), Item(3)]);
        let e = edge_map(&f.vertices, &f.omega);
        assert_eq!(e[&(Item(1), Item(2))], 0.4 + 0.3);
        assert_eq!(e[&(Query, Item(2))], 0.1);
        assert_eq!(e[&(Item(2), Item(3))], 0.3);
        assert!(f.omega.is_symmetric());

        let single = fuse(&[g1.clone()]).unwrap();
        assert_eq!(single.vertices, g1.vertices);
        assert_eq!(single.omega, g1.omega);
        assert!(fuse(&[]).is_err());
    }

    #[test]
    fn transition_rows_and_restart() {
        use Vertex::*;
        let g = graph(
            0,
            vec![Query, Item(1), Item(2), Item(3)],
            &[(0, 1, 0.2), (0, 2, 0.2), (0, 3, 0.6)],
        );
        let f = transition_and_restart(fuse(&[g]).unwrap(), 0.85, 0.99).unwrap();
        let p = f.transition.as_ref().unwrap();
        let r0 = p.dense_row(0);
        assert!((r0[1] - 0.2).abs() < 1e-15 && (r0[3] - 0.6).abs() < 1e-15);
        assert_eq!(p.dense_row(1), vec![0.0, 0.0, 0.0, 0.0].iter().enumerate().map(|(i, _)| if i == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        assert_eq!(f.restart[0], 0.99);
        assert!((f.restart[1] - 0.01 / 3.0).abs() < 1e-15);

        let g = graph(0, vec![Query, Item(1), Item(2), Item(3)], &[(0, 1, 1.0)]);
        let f = transition_and_restart(fuse(&[g]).unwrap(), 0.85, 0.99).unwrap();
        assert_eq!(f.transition.as_ref().unwrap().dense_row(3), vec![0.25; 4]);

        let g = graph(0, vec![Query], &[]);
        let f = transition_and_restart(fuse(&[g.clone()]).unwrap(), 0.85, 0.99).unwrap();
        assert_eq!(f.restart, vec![1.0]);
        assert!(transition_and_restart(fuse(&[g.clone()]).unwrap(), 1.0, 0.99).is_err());
        assert!(transition_and_restart(fuse(&[g]).unwrap(), 0.0, 0.99).is_err());
    }

    fn two_cycle(alpha: f64) -> FusedGraph {
        use Vertex::*;
        let g = graph(0, vec![Query, Item(0)], &[(0, 1, 1.0)]);
        transition_and_restart(fuse(&[g]).unwrap(), alpha, 0.99).unwrap()
    }

    #[test]
    fn walk_two_vertex_example() {
        // closed form by hand: r = 0.2 (I - 0.8 P')^{-1} (0.99, 0.01)
        // with P' = [[0,1],[1,0]]: (I - 0.8P')^{-1} = [[1, .8],[.8, 1]] / 0.36
        let f = two_cycle(0.8);
        let expected = [
            0.2 * (0.99 + 0.8 * 0.01) / 0.36,
            0.2 * (0.8 * 0.99 + 0.01) / 0.36,
        ];
        let it = random_walk(&f, 1e-12, 1000).unwrap();
        let cf = closed_form_rank(&f).unwrap();
        for i in 0..2 {
            assert!((it.r[i] - expected[i]).abs() < 1e-10);
            assert!((cf.r[i] - expected[i]).abs() < 1e-12);
        }
        assert!((it.r[0] - 0.5544).abs() < 1e-4 && (it.r[1] - 0.4456).abs() < 1e-4);
    }

    #[test]
    fn walk_small_alpha_returns_restart() {
        let mut f = two_cycle(0.5);
        f.alpha = 1e-300;
        let r = random_walk(&f, 0.0, 1).unwrap();
        assert!((r.r[0] - 0.99).abs() < 1e-15 && (r.r[1] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn identity_transition_closed_form_is_restart() {
        let f = FusedGraph {
            vertices: vec![Vertex::Query, Vertex::Item(1), Vertex::Item(2)],
            omega: SparseSymmetric::empty(3),
            transition: Some(Transition {
                rows: vec![vec![(0, 1.0)], vec![(1, 1.0)], vec![(2, 1.0)]],
                dangling: vec![false; 3],
            }),
            restart: vec![0.99, 0.005, 0.005],
            alpha: 0.5,
        };
        let r = closed_form_rank(&f).unwrap();
        for (a, b) in r.r.iter().zip(&f.restart) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn complete_graph_uniform_restart_is_uniform() {
        let n = 6;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j, 1.0));
            }
        }
        let mut vertices = vec![Vertex::Query];
        vertices.extend((1..n).map(Vertex::Item));
        let g = graph(0, vertices, &edges);
        let f = transition_and_restart(fuse(&[g]).unwrap(), 0.85, 1.0 / n as f64).unwrap();
        let r = random_walk(&f, 1e-14, 1000).unwrap();
        for v in r.r {
            assert!((v - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn ranked_items_drop_query_and_break_ties_by_id() {
        let f = FusedGraph {
            vertices: vec![Vertex::Query, Vertex::Item(4), Vertex::Item(7), Vertex::Item(9)],
            omega: SparseSymmetric::empty(4),
            transition: None,
            restart: vec![],
            alpha: 0.85,
        };
        let s = RankScores {
            r: vec![0.7, 0.1, 0.1, 0.1 + 1e-9],
            iterations: 0,
            converged: true,
            residuals: vec![],
        };
        let ids: Vec<usize> = ranked_items(&f, &s).iter().map(|x| x.id).collect();
        assert_eq!(ids, vec![9, 4, 7]);
    }

    pub(crate) fn random_fused(n: usize, density: f64, seed: u64, alpha: f64) -> FusedGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < density {
                    edges.push((i, j, rng.random::<f64>()));
                }
            }
        }
        let mut vertices = vec![Vertex::Query];
        vertices.extend((1..n).map(Vertex::Item));
        let g = graph(0, vertices, &edges);
        transition_and_restart(fuse(&[g]).unwrap(), alpha, 0.99).unwrap()
    }

    proptest! {
        #[test]
        fn walk_contracts_and_matches_closed_form(
            n in 2usize..60,
            density in 0.0f64..0.5,
            seed in 0u64..1000,
            alpha in 0.05f64..0.95,
        ) {
            let f = random_fused(n, density, seed, alpha);
            for i in 0..n {
                let s: f64 = f.transition.as_ref().unwrap().dense_row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let it = random_walk(&f, 1e-13, 5000).unwrap();
            prop_assert!(it.converged);
            for w in it.residuals.windows(2) {
                prop_assert!(w[1] <= alpha * w[0] * (1.0 + 1e-9) + 1e-15);
            }
            let cf = closed_form_rank(&f).unwrap();
            let max_diff = it.r.iter().zip(&cf.r).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(max_diff < 1e-8);
            prop_assert!((it.r.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            prop_assert!(it.r.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn similarity_symmetric_nonnegative(seed in 0u64..1000, n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<SparseRow> = (0..n)
                .map(|_| {
                    let mut m = std::collections::BTreeMap::new();
                    for _ in 0..3 {
                        m.insert(rng.random_range(0..12u32), rng.random::<f64>() + 0.01);
                    }
                    SparseRow::normalized(m.into_iter().collect())
                })
                .collect();
            let (s, _) = candidate_similarity(&z);
            prop_assert!(s.is_symmetric());
            for i in 0..n {
                for &(j, w) in s.row(i) {
                    prop_assert!(w > 0.0);
                    prop_assert!(z[i].dot(&z[j]) > 0.0);
                }
            }
        }
    }
}
