//! Query-adaptive bit weighting and weighted Hamming ranking.
//!
//! For a query `q` the raw weight of bit `k` rewards agreement with the
//! query's most similar landmarks:
//!
//! ```text
//! w_k = exp(gamma * sum_p s(q, p) * h_k(q) * h_k(p)),   sum_p s(q, p) = 1
//! ```
//!
//! The raw weights are then calibrated against redundancy between bits.
//! With `a_ij = exp(-lambda * MI(y_i, y_j))` (zero diagonal) and
//! `M_ij = w_i a_ij w_j`, the calibration vector `pi` maximizes `pi' M pi`
//! over the probability simplex, found by replicator dynamics
//! `pi <- pi * (M pi) / (pi' M pi)`. The final weights are `w* = w * pi`.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::AnchorModel;
use crate::error::{Error, Result};
use crate::hashing::{HashModel, Neighbor, PackedCodes};
use crate::index::HashTable;
use crate::io::{ByteReader, ByteWriter};

/// Pseudo-count added to every cell of the 2x2 joint table.
pub const MI_SMOOTHING: f64 = 0.5;
/// Lower bound on calibrated weights so that no bit is weightless.
pub const WEIGHT_FLOOR: f64 = 1e-12;

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;
pub const DEFAULT_NEIGHBORS: usize = 25;
pub const DEFAULT_CALIBRATION_TOL: f64 = 1e-8;
pub const DEFAULT_CALIBRATION_ITERS: usize = 1000;
pub const DEFAULT_TOP_N: usize = 1000;

const INDEP_MAGIC: &[u8; 4] = b"MVHI";
const INDEP_VERSION: u32 = 1;

/// Mutual information (nats) of a 2x2 table of counts, each cell smoothed
/// by `smoothing`. Rows index the first bit, columns the second.
pub fn mutual_information_from_counts(counts: [[f64; 2]; 2], smoothing: f64) -> f64 {
    let cells = counts.map(|r| r.map(|c| c + smoothing));
    let total: f64 = cells.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let row = [cells[0][0] + cells[0][1], cells[1][0] + cells[1][1]];
    let col = [cells[0][0] + cells[1][0], cells[0][1] + cells[1][1]];
    let term = |a: usize, b: usize| {
        let c = cells[a][b];
        if c > 0.0 {
            c / total * (c * total / (row[a] * col[b])).ln()
        } else {
            0.0
        }
    };
    // grouped so that transposing the table gives the same float result
    let mi = (term(0, 0) + term(1, 1)) + (term(0, 1) + term(1, 0));
    mi.max(0.0)
}

/// Bit columns of a code set, as bitsets over items.
struct BitColumns {
    n: usize,
    cols: Vec<Vec<u64>>,
    ones: Vec<u64>,
}

impl BitColumns {
    fn new(codes: &PackedCodes) -> Self {
        let n = codes.len();
        let words = n.div_ceil(64);
        let mut cols = vec![vec![0u64; words]; codes.bits()];
        for i in 0..n {
            for (k, col) in cols.iter_mut().enumerate() {
                if codes.bit(i, k) {
                    col[i / 64] |= 1u64 << (i % 64);
                }
            }
        }
        let ones = cols
            .iter()
            .map(|c| c.iter().map(|w| w.count_ones() as u64).sum())
            .collect();
        Self { n, cols, ones }
    }

    fn joint(&self, i: usize, j: usize) -> [[f64; 2]; 2] {
        let both: u64 = self.cols[i]
            .iter()
            .zip(&self.cols[j])
            .map(|(a, b)| (a & b).count_ones() as u64)
            .sum();
        let (ci, cj, n) = (self.ones[i], self.ones[j], self.n as u64);
        let n11 = both;
        let n10 = ci - both;
        let n01 = cj - both;
        let n00 = n + both - ci - cj;
        // index 0 = bit clear (-1), 1 = bit set (+1)
        [[n00 as f64, n01 as f64], [n10 as f64, n11 as f64]]
    }

    fn mi(&self, i: usize, j: usize) -> f64 {
        mutual_information_from_counts(self.joint(i, j), MI_SMOOTHING)
    }
}

/// Smoothed empirical mutual information between bits `i` and `j`.
pub fn mutual_information(codes: &PackedCodes, i: usize, j: usize) -> f64 {
    let mut c = [[0.0f64; 2]; 2];
    for t in 0..codes.len() {
        c[codes.bit(t, i) as usize][codes.bit(t, j) as usize] += 1.0;
    }
    mutual_information_from_counts(c, MI_SMOOTHING)
}

/// Pairwise bit independence `a_ij = exp(-lambda * MI)`, zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependenceMatrix {
    bits: usize,
    lambda: f64,
    a: Vec<f64>,
}

impl IndependenceMatrix {
    pub fn compute(codes: &PackedCodes, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
        }
        let bits = codes.bits();
        let cols = BitColumns::new(codes);
        let upper: Vec<(usize, usize, f64)> = (0..bits)
            .into_par_iter()
            .flat_map_iter(|i| {
                let cols = &cols;
                (i + 1..bits).map(move |j| (i, j, (-lambda * cols.mi(i, j)).exp()))
            })
            .collect();
        let mut a = vec![0.0; bits * bits];
        for (i, j, v) in upper {
            a[i * bits + j] = v;
            a[j * bits + i] = v;
        }
        Ok(Self { bits, lambda, a })
    }

    pub fn from_parts(bits: usize, lambda: f64, a: Vec<f64>) -> Result<Self> {
        if a.len() != bits * bits {
            return Err(Error::Format(format!(
                "independence matrix has {} entries for {bits} bits",
                a.len()
            )));
        }
        Ok(Self { bits, lambda, a })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.bits + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.a
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        w.bytes(INDEP_MAGIC);
        w.u32(INDEP_VERSION);
        w.u32(self.bits as u32);
        w.f64(self.lambda);
        w.f64s(&self.a);
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(INDEP_MAGIC)?;
        let version = r.u32()?;
        if version != INDEP_VERSION {
            return Err(Error::Format(format!(
                "unsupported independence matrix version {version}"
            )));
        }
        let bits = r.u32()? as usize;
        let lambda = r.f64()?;
        let a = r.f64s(bits * bits)?;
        Self::from_parts(bits, lambda, a)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_to(&mut w);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "independence matrix");
        let m = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(m)
    }
}

/// Raw weights from a landmark profile: `exp(gamma * sum_p s_p * y_qk * y_pk)`.
pub fn raw_weights_from_profile(
    query_code: &[u64],
    profile: &[(usize, f64)],
    landmark_codes: &PackedCodes,
    gamma: f64,
) -> Vec<f64> {
    let bits = landmark_codes.bits();
    let mut agreement = vec![0.0f64; bits];
    for &(p, s) in profile {
        let code = landmark_codes.code(p);
        for (k, a) in agreement.iter_mut().enumerate() {
            let same = crate::hashing::get_bit(code, k) == crate::hashing::get_bit(query_code, k);
            *a += if same { s } else { -s };
        }
    }
    agreement.into_iter().map(|a| (gamma * a).exp()).collect()
}

/// Raw query-adaptive weights for one table.
pub fn raw_weights(
    hash_model: &HashModel,
    anchors: &AnchorModel,
    query: &[f32],
    gamma: f64,
    neighbors: usize,
) -> Result<Vec<f64>> {
    if !(gamma >= 0.0) {
        return Err(Error::invalid(format!("gamma must be non-negative, got {gamma}")));
    }
    let code = hash_model.encode_one(query)?;
    let z = anchors.embed(query)?;
    let profile = anchors.query_neighbor_profile(&z, neighbors);
    Ok(raw_weights_from_profile(
        &code,
        &profile,
        anchors.anchor_codes(),
        gamma,
    ))
}

/// Outcome of replicator dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicatorResult {
    pub pi: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

/// Maximize `pi' M pi` over the simplex by replicator dynamics, starting
/// from the barycenter. `m` is `b x b` row-major, symmetric, nonnegative.
/// `observe` sees every iterate (including the start) with its objective.
pub fn replicator_dynamics(
    m: &[f64],
    b: usize,
    tol: f64,
    max_iters: usize,
    mut observe: impl FnMut(&[f64], f64),
) -> ReplicatorResult {
    assert_eq!(m.len(), b * b, "matrix size");
    let mut pi = vec![1.0 / b as f64; b];
    let mut mpi = vec![0.0; b];
    let mat_vec = |pi: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[i * b..(i + 1) * b].iter().zip(pi).map(|(x, p)| x * p).sum();
        }
    };
    mat_vec(&pi, &mut mpi);
    let mut objective: f64 = pi.iter().zip(&mpi).map(|(p, q)| p * q).sum();
    observe(&pi, objective);
    if !(objective > 0.0) {
        warn!("calibration objective is zero at the barycenter; keeping uniform weights");
        return ReplicatorResult {
            pi,
            iterations: 0,
            converged: false,
            objective,
        };
    }

    let mut next = vec![0.0; b];
    for it in 1..=max_iters {
        for ((n, p), q) in next.iter_mut().zip(&pi).zip(&mpi) {
            *n = p * q / objective;
        }
        // the update preserves total mass; dividing by the computed sum
        // only removes rounding drift
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|v| *v /= total);
        let delta: f64 = next.iter().zip(&pi).map(|(a, c)| (a - c).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        mat_vec(&pi, &mut mpi);
        objective = pi.iter().zip(&mpi).map(|(p, q)| p * q).sum();
        observe(&pi, objective);
        if delta < tol {
            return ReplicatorResult {
                pi,
                iterations: it,
                converged: true,
                objective,
            };
        }
    }
    ReplicatorResult {
        pi,
        iterations: max_iters,
        converged: false,
        objective,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitWeights {
    pub raw: Vec<f64>,
    pub pi: Vec<f64>,
    pub calibrated: Vec<f64>,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Calibrate raw weights against the independence matrix.
pub fn calibrate(
    raw: &[f64],
    independence: &IndependenceMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<(Vec<f64>, Vec<f64>, ReplicatorResult)> {
    let b = raw.len();
    if b != independence.bits() {
        return Err(Error::DimensionMismatch {
            expected: independence.bits(),
            got: b,
        });
    }
    if raw.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid("raw weights must be positive and finite"));
    }
    let mut m = vec![0.0; b * b];
    for i in 0..b {
        for j in 0..b {
            m[i * b + j] = raw[i] * independence.get(i, j) * raw[j];
        }
    }
    let res = replicator_dynamics(&m, b, tol, max_iters, |_, _| {});
    let calibrated = raw
        .iter()
        .zip(&res.pi)
        .map(|(w, p)| (w * p).max(WEIGHT_FLOOR))
        .collect();
    Ok((res.pi.clone(), calibrated, res))
}

/// Weighted Hamming distance with a fixed summation order: differing bits
/// are added from the smallest weight to the largest, ties by bit index.
/// Codes that differ in bits carrying the same multiset of weights then get
/// bit-identical distances, and scaling every weight by `c > 0` keeps the
/// order of the terms, so rankings do not depend on rounding accidents.
#[derive(Debug, Clone)]
pub struct WeightOrder {
    /// (word, bit within word, weight) in summation order.
    terms: Vec<(usize, u32, f64)>,
}

impl WeightOrder {
    pub fn new(weights: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..weights.len()).collect();
        idx.sort_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(a.cmp(&b)));
        Self {
            terms: idx.into_iter().map(|k| (k / 64, (k % 64) as u32, weights[k])).collect(),
        }
    }

    pub fn bits(&self) -> usize {
        self.terms.len()
    }

    #[inline]
    pub fn distance(&self, a: &[u64], b: &[u64]) -> f64 {
        let mut d = 0.0;
        for &(w, bit, wk) in &self.terms {
            if (a[w] ^ b[w]) >> bit & 1 == 1 {
                d += wk;
            }
        }
        d
    }
}

/// `sum_k w_k [bit k differs]`, see [`WeightOrder`] for the summation order.
pub fn weighted_hamming(a: &[u64], b: &[u64], weights: &[f64]) -> f64 {
    WeightOrder::new(weights).distance(a, b)
}

/// Top `top_n` rows of `codes` by weighted Hamming distance to `query`,
/// ascending, ties by ascending row id.
pub fn weighted_rank(
    codes: &PackedCodes,
    query: &[u64],
    weights: &[f64],
    top_n: usize,
) -> Vec<Neighbor<f64>> {
    assert_eq!(weights.len(), codes.bits(), "weight vector length");
    let n = codes.len();
    let order = WeightOrder::new(weights);
    let dist: Vec<f64> = if n >= 4096 {
        (0..n)
            .into_par_iter()
            .with_min_len(1024)
            .map(|i| order.distance(codes.code(i), query))
            .collect()
    } else {
        (0..n).map(|i| order.distance(codes.code(i), query)).collect()
    };
    let mut ids: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| dist[*a].total_cmp(&dist[*b]).then(a.cmp(b));
    let top_n = top_n.min(n);
    if top_n == 0 {
        return Vec::new();
    }
    if top_n < n {
        ids.select_nth_unstable_by(top_n - 1, cmp);
        ids.truncate(top_n);
    }
    ids.sort_unstable_by(cmp);
    ids.into_iter()
        .map(|id| Neighbor {
            id,
            distance: dist[id],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QRankParams {
    pub gamma: f64,
    pub neighbors: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// When false, the raw weights are used as they are.
    pub calibrate: bool,
}

impl Default for QRankParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            neighbors: DEFAULT_NEIGHBORS,
            tol: DEFAULT_CALIBRATION_TOL,
            max_iters: DEFAULT_CALIBRATION_ITERS,
            calibrate: true,
        }
    }
}

/// Query code and weights for one table.
#[derive(Debug, Clone)]
pub struct QueryWeights {
    pub code: Vec<u64>,
    pub weights: BitWeights,
}

pub fn query_weights(table: &HashTable, query: &[f32], params: &QRankParams) -> Result<QueryWeights> {
    let code = table.hash_model.encode_one(query)?;
    let raw = raw_weights(
        &table.hash_model,
        &table.anchors,
        query,
        params.gamma,
        params.neighbors,
    )?;
    let b = raw.len();
    let weights = if params.calibrate {
        let (pi, calibrated, res) = calibrate(&raw, &table.independence, params.tol, params.max_iters)?;
        BitWeights {
            raw,
            pi,
            calibrated,
            gamma: params.gamma,
            iterations: res.iterations,
            converged: res.converged,
        }
    } else {
        BitWeights {
            calibrated: raw.clone(),
            raw,
            pi: vec![1.0 / b as f64; b],
            gamma: params.gamma,
            iterations: 0,
            converged: true,
        }
    };
    Ok(QueryWeights { code, weights })
}

/// Weighted Hamming ranking of the table's items for one query. Returned
/// ids are item ids, not code rows.
pub fn qrank_query(
    table: &HashTable,
    query: &[f32],
    params: &QRankParams,
    top_n: usize,
) -> Result<(QueryWeights, Vec<Neighbor<f64>>)> {
    let qw = query_weights(table, query, params)?;
    let ranked = weighted_rank(&table.codes, &qw.code, &qw.weights.calibrated, top_n)
        .into_iter()
        .map(|nb| Neighbor {
            id: table.item_ids[nb.id],
            distance: nb.distance,
        })
        .collect();
    Ok((qw, ranked))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn codes_from_columns(cols: &[Vec<bool>]) -> PackedCodes {
        let n = cols[0].len();
        let rows: Vec<Vec<bool>> = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        PackedCodes::from_bools(cols.len(), &rows).unwrap()
    }

    /// Hand evaluation of the smoothed estimator for a perfectly coupled
    /// balanced pair: cells (n/2 + 1/2, 1/2, 1/2, n/2 + 1/2) over n + 2.
    fn coupled_oracle(n: f64) -> f64 {
        let t = n + 2.0;
        let diag = (n / 2.0 + 0.5) / t;
        let off = 0.5 / t;
        2.0 * diag * (diag / 0.25).ln() + 2.0 * off * (off / 0.25).ln()
    }

    #[test]
    fn mi_balanced_self_pair() {
        let col: Vec<bool> = (0..10_000).map(|i| i % 2 == 0).collect();
        let codes = codes_from_columns(&[col.clone(), col.iter().map(|b| !b).collect()]);
        let same = mutual_information(&codes, 0, 0);
        let flipped = mutual_information(&codes, 0, 1);
        assert!((same - coupled_oracle(10_000.0)).abs() < 1e-12);
        assert!((flipped - coupled_oracle(10_000.0)).abs() < 1e-12);
        // smoothing bias shrinks like log(n)/n
        let big: Vec<bool> = (0..1_000_000).map(|i| i % 2 == 0).collect();
        let codes = codes_from_columns(&[big]);
        assert!((mutual_information(&codes, 0, 0) - std::f64::consts::LN_2).abs() < 2e-5);
    }

    #[test]
    fn mi_independent_quarters() {
        let a: Vec<bool> = (0..4000).map(|i| i % 2 == 0).collect();
        let b: Vec<bool> = (0..4000).map(|i| (i / 2) % 2 == 0).collect();
        let codes = codes_from_columns(&[a, b]);
        assert!(mutual_information(&codes, 0, 1).abs() < 1e-15);
    }

    #[test]
    fn mi_constant_bit_is_finite() {
        let codes = codes_from_columns(&[vec![true; 50], vec![true; 50]]);
        let mi = mutual_information(&codes, 0, 1);
        assert!(mi.is_finite() && mi >= 0.0);
    }

    #[test]
    fn independence_matrix_values() {
        let a: Vec<bool> = (0..4000).map(|i| i % 2 == 0).collect();
        let b: Vec<bool> = (0..4000).map(|i| (i / 2) % 2 == 0).collect();
        let codes = codes_from_columns(&[a.clone(), b, a]);
        let m = IndependenceMatrix::compute(&codes, 1.0).unwrap();
        assert_eq!(m.get(0, 0), 0.0);
        assert!((m.get(0, 1) - 1.0).abs() < 1e-15);
        let expected = (-coupled_oracle(4000.0)).exp();
        assert!((m.get(0, 2) - expected).abs() < 1e-12);
        assert!((m.get(0, 2) - 0.5).abs() < 2e-3);
        assert_eq!(m.get(2, 0), m.get(0, 2));
        assert!(IndependenceMatrix::compute(&codes, 0.0).is_err());
    }

    #[test]
    fn independence_matches_direct_mi() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cols: Vec<Vec<bool>> = (0..9)
            .map(|k| (0..300).map(|_| rng.random::<f64>() < 0.2 + 0.07 * k as f64).collect())
            .collect();
        let codes = codes_from_columns(&cols);
        let m = IndependenceMatrix::compute(&codes, 2.0).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    let direct = (-2.0 * mutual_information(&codes, i, j)).exp();
                    assert!((m.get(i, j) - direct).abs() < 1e-12);
                    assert!(m.get(i, j) > 0.0 && m.get(i, j) <= 1.0);
                }
            }
        }
    }

    #[test]
    fn raw_weight_limits() {
        // three landmarks; query = 1 on both bits
        let landmarks = PackedCodes::from_bools(
            2,
            &[vec![true, false], vec![true, false], vec![true, true]],
        )
        .unwrap();
        let q = [0b11u64];
        let all = [(0, 0.5), (1, 0.5)];
        let w = raw_weights_from_profile(&q, &all, &landmarks, 1.0);
        assert!((w[0] - std::f64::consts::E).abs() < 1e-12);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-12);
        let half = [(1, 0.5), (2, 0.5)];
        let w = raw_weights_from_profile(&q, &half, &landmarks, 1.0);
        assert!((w[1] - 1.0).abs() < 1e-12);
        let w = raw_weights_from_profile(&q, &all, &landmarks, 0.0);
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn replicator_symmetric_pair() {
        let r = replicator_dynamics(&[0.0, 1.0, 1.0, 0.0], 2, 1e-8, 1000, |_, _| {});
        assert_eq!(r.pi, vec![0.5, 0.5]);
        assert!(r.converged);
    }

    #[test]
    fn replicator_star() {
        let m = [0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let r = replicator_dynamics(&m, 3, 1e-8, 1000, |_, _| {});
        // fixed point p = 2q, p + 2q = 1
        assert!((r.pi[0] - 0.5).abs() < 1e-9);
        assert!((r.pi[1] - 0.25).abs() < 1e-9);
        assert!((r.pi[2] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn replicator_zero_matrix_stays_uniform() {
        let r = replicator_dynamics(&[0.0; 9], 3, 1e-8, 1000, |_, _| {});
        assert_eq!(r.pi, vec![1.0 / 3.0; 3]);
        assert_eq!(r.iterations, 0);
        assert!(!r.converged);
    }

    #[test]
    fn calibrate_rejects_bad_input() {
        let a = IndependenceMatrix::from_parts(2, 1.0, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(calibrate(&[1.0, 0.0], &a, 1e-8, 10).is_err());
        assert!(calibrate(&[1.0], &a, 1e-8, 10).is_err());
        let (pi, w, _) = calibrate(&[2.0, 2.0], &a, 1e-8, 10).unwrap();
        assert_eq!(pi, vec![0.5, 0.5]);
        assert_eq!(w, vec![1.0, 1.0]);
    }

    #[test]
    fn weighted_hamming_single_difference() {
        // (+1,+1,-1) vs (+1,-1,-1)
        let a = [0b011u64];
        let b = [0b001u64];
        assert!((weighted_hamming(&a, &b, &[0.5, 0.3, 0.2]) - 0.3).abs() < 1e-15);
    }

    fn random_codes(n: usize, bits: usize, rng: &mut ChaCha8Rng) -> PackedCodes {
        let rows: Vec<Vec<bool>> = (0..n)
            .map(|_| (0..bits).map(|_| rng.random()).collect())
            .collect();
        PackedCodes::from_bools(bits, &rows).unwrap()
    }

    #[test]
    fn weighted_rank_matches_full_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let codes = random_codes(5000, 96, &mut rng);
        let q = random_codes(1, 96, &mut rng);
        let w: Vec<f64> = (0..96).map(|_| rng.random::<f64>() + 0.01).collect();
        let got = weighted_rank(&codes, q.code(0), &w, 100);
        let mut all: Vec<(f64, usize)> = (0..5000)
            .map(|i| {
                let d: f64 = (0..96)
                    .filter(|&k| codes.bit(i, k) != q.bit(0, k))
                    .map(|k| w[k])
                    .sum();
                (d, i)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let want: Vec<usize> = all.iter().take(100).map(|p| p.1).collect();
        assert_eq!(got.iter().map(|n| n.id).collect::<Vec<_>>(), want);
    }

    proptest! {
        #[test]
        fn mi_symmetric_and_bounded(seed in 0u64..1000, n in 1usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p1 = rng.random::<f64>();
            let p2 = rng.random::<f64>();
            let a: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < p1).collect();
            let b: Vec<bool> = a.iter().map(|&x| if rng.random::<f64>() < p2 { !x } else { x }).collect();
            let codes = codes_from_columns(&[a, b]);
            let ij = mutual_information(&codes, 0, 1);
            prop_assert_eq!(ij, mutual_information(&codes, 1, 0));
            prop_assert!(ij >= 0.0);
            // entropies of the same smoothed marginals
            let h = |k: usize| {
                let ones = (0..n).filter(|&t| codes.bit(t, k)).count() as f64 + 1.0;
                let p = ones / (n as f64 + 2.0);
                -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
            };
            prop_assert!(ij <= h(0).min(h(1)) + 1e-12);
        }

        #[test]
        fn replicator_monotone_on_simplex(seed in 0u64..1000, b in 2usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = vec![0.0; b * b];
            for i in 0..b {
                for j in i + 1..b {
                    let v = rng.random::<f64>();
                    m[i * b + j] = v;
                    m[j * b + i] = v;
                }
            }
            let mut prev = f64::NEG_INFINITY;
            let mut ok = true;
            replicator_dynamics(&m, b, 1e-10, 500, |pi, obj| {
                let s: f64 = pi.iter().sum();
                ok &= (s - 1.0).abs() < 1e-9 && pi.iter().all(|&p| p >= 0.0);
                ok &= obj >= prev - 1e-12;
                prev = obj;
            });
            prop_assert!(ok);
        }

        #[test]
        fn weighted_hamming_matches_naive(seed in 0u64..1000, bits in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_codes(2, bits, &mut rng);
            let w: Vec<f64> = (0..bits).map(|_| rng.random::<f64>() * 3.0).collect();
            let naive: f64 = (0..bits).filter(|&k| c.bit(0, k) != c.bit(1, k)).map(|k| w[k]).sum();
            let fast = weighted_hamming(c.code(0), c.code(1), &w);
            prop_assert!((fast - naive).abs() <= 1e-12);
            let ones = vec![1.0; bits];
            prop_assert_eq!(weighted_hamming(c.code(0), c.code(1), &ones), c.hamming(0, 1) as f64);
            let scaled: Vec<f64> = vec![0.7; bits];
            prop_assert!((weighted_hamming(c.code(0), c.code(1), &scaled) - 0.7 * c.hamming(0, 1) as f64).abs() < 1e-12);
        }

        #[test]
        fn bit_permutation_preserves_distance(seed in 0u64..1000, bits in 2usize..130) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_codes(2, bits, &mut rng);
            let w: Vec<f64> = (0..bits).map(|_| rng.random::<f64>()).collect();
            let mut perm: Vec<usize> = (0..bits).collect();
            perm.shuffle(&mut rng);
            let rows: Vec<Vec<bool>> = (0..2).map(|i| perm.iter().map(|&k| c.bit(i, k)).collect()).collect();
            let pc = PackedCodes::from_bools(bits, &rows).unwrap();
            let pw: Vec<f64> = perm.iter().map(|&k| w[k]).collect();
            let d1 = weighted_hamming(c.code(0), c.code(1), &w);
            let d2 = weighted_hamming(pc.code(0), pc.code(1), &pw);
            prop_assert_eq!(d1, d2);
        }

        #[test]
        fn positive_scaling_keeps_rank_order(seed in 0u64..300, c in 1e-3f64..1e3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits = 40;
            let codes = random_codes(300, bits, &mut rng);
            // few distinct, rationally independent values: exact ties are
            // common and only come from equal weight multisets
            let vals = [1e-12, 0.3, std::f64::consts::SQRT_2, std::f64::consts::E];
            let w: Vec<f64> = (0..bits).map(|_| vals[rng.random_range(0..4)]).collect();
            let q = random_codes(1, bits, &mut rng);
            let ids = |w: &[f64]| weighted_rank(&codes, q.code(0), w, 300).into_iter().map(|n| n.id).collect::<Vec<_>>();
            let scaled: Vec<f64> = w.iter().map(|x| x * c).collect();
            prop_assert_eq!(ids(&w), ids(&scaled));
        }
    }

    #[test]
    fn equal_weight_multisets_tie_exactly() {
        // bits 0 and 50 carry the same weight; so do 3 and 40
        let mut w = vec![0.0; 64];
        w[0] = 0.1;
        w[50] = 0.1;
        w[3] = 0.7;
        w[40] = 0.7;
        w[9] = 0.2;
        let zero = [0u64];
        let a = [1u64 | 1 << 3 | 1 << 9];
        let b = [1u64 << 50 | 1 << 40 | 1 << 9];
        assert_eq!(weighted_hamming(&a, &zero, &w), weighted_hamming(&b, &zero, &w));
    }
}
