//! Anchor sets and sparse anchor embeddings.
//!
//! A point is represented by its `s_nn` nearest anchors, weighted by a
//! Gaussian kernel and normalized to sum to one. Two points are similar when
//! their embeddings are close: `s(p, q) = exp(-||z(p) - z(q)||^2 / sigma^2)`.
//! The anchors double as the landmarks a query's neighbor profile is taken
//! over.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::VectorView;
use crate::error::{Error, Result};
use crate::hashing::{HashModel, PackedCodes};
use crate::io::{ByteReader, ByteWriter};

pub const ANCHORS_MAGIC: &[u8; 4] = b"MVHA";
const ANCHORS_VERSION: u32 = 1;

pub const DEFAULT_NUM_ANCHORS: usize = 300;
pub const DEFAULT_S_NN: usize = 5;
pub const KMEANS_MAX_ITERS: usize = 25;
/// Points sampled for the kernel bandwidth, and pairs sampled for sigma.
const CALIBRATION_SAMPLE: usize = 1000;
const MIN_SIGMA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorMethod {
    Random,
    Kmeans,
}

impl std::str::FromStr for AnchorMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(AnchorMethod::Random),
            "kmeans" => Ok(AnchorMethod::Kmeans),
            other => Err(Error::invalid(format!("unknown anchor method {other:?}"))),
        }
    }
}

/// Sparse nonnegative row over anchors, sorted by anchor index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseRow {
    pub entries: Vec<(u32, f64)>,
}

impl SparseRow {
    /// Normalize `(index, kernel value)` pairs into a row summing to one.
    pub(crate) fn normalized(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_unstable_by_key(|e| e.0);
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if total > 0.0 && total.is_finite() {
            entries.iter_mut().for_each(|e| e.1 /= total);
        } else {
            let u = 1.0 / entries.len() as f64;
            entries.iter_mut().for_each(|e| e.1 = u);
        }
        Self { entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn dot(&self, other: &SparseRow) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    acc += a[i].1 * b[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        acc
    }

    /// `||self - other||^2` over the union of supports.
    pub fn squared_distance(&self, other: &SparseRow) -> f64 {
        let (a, b) = (&self.entries, &other.entries);
        let (mut i, mut j, mut acc) = (0, 0, 0.0);
        while i < a.len() || j < b.len() {
            let d = match (a.get(i), b.get(j)) {
                (Some(x), Some(y)) if x.0 == y.0 => {
                    i += 1;
                    j += 1;
                    x.1 - y.1
                }
                (Some(x), Some(y)) if x.0 < y.0 => {
                    i += 1;
                    x.1
                }
                (Some(x), None) => {
                    i += 1;
                    x.1
                }
                (_, Some(y)) => {
                    j += 1;
                    y.1
                }
                (None, None) => unreachable!(),
            };
            acc += d * d;
        }
        acc
    }
}

/// `exp(-||z_p - z_q||^2 / sigma^2)`.
pub fn similarity(z_p: &SparseRow, z_q: &SparseRow, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    Ok((-z_p.squared_distance(z_q) / (sigma * sigma)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorParams {
    pub num_anchors: usize,
    pub method: AnchorMethod,
    pub s_nn: usize,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self {
            num_anchors: DEFAULT_NUM_ANCHORS,
            method: AnchorMethod::Random,
            s_nn: DEFAULT_S_NN,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnchorModel {
    dim: usize,
    s_nn: usize,
    anchors: Vec<f32>,
    bandwidth: f64,
    sigma: f64,
    anchor_codes: PackedCodes,
    /// Embedding of each anchor; these are the landmark embeddings.
    anchor_embeddings: Vec<SparseRow>,
}

impl PartialEq for AnchorModel {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.s_nn == other.s_nn
            && self.anchors == other.anchors
            && self.bandwidth == other.bandwidth
            && self.sigma == other.sigma
            && self.anchor_codes == other.anchor_codes
    }
}

impl AnchorModel {
    /// Select anchors from `data`, fit the kernel bandwidth and `sigma`, and
    /// encode the anchors with `hash_model`.
    pub fn build(
        data: &VectorView,
        params: &AnchorParams,
        hash_model: &HashModel,
        seed: u64,
    ) -> Result<Self> {
        let n = data.n();
        let k = params.num_anchors;
        if k == 0 || k > n {
            return Err(Error::invalid(format!(
                "anchor count {k} must be in 1..={n}"
            )));
        }
        if params.s_nn == 0 || params.s_nn > k {
            return Err(Error::invalid(format!(
                "s_nn {} must be in 1..={k}",
                params.s_nn
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let anchors = match params.method {
            AnchorMethod::Random => {
                let picked = index::sample(&mut rng, n, k);
                let mut a = Vec::with_capacity(k * data.dim());
                for i in picked.iter() {
                    a.extend_from_slice(data.row(i));
                }
                a
            }
            AnchorMethod::Kmeans => kmeans(data, k, KMEANS_MAX_ITERS, &mut rng),
        };
        let anchor_view = VectorView::new(data.view_id, data.dim(), anchors.clone())?;

        let sample: Vec<usize> = index::sample(&mut rng, n, n.min(CALIBRATION_SAMPLE)).into_vec();
        let mut total = 0.0;
        for &i in &sample {
            let mut d = sq_dists(data.row(i), &anchors, data.dim());
            d.select_nth_unstable_by(params.s_nn - 1, f64::total_cmp);
            total += d[params.s_nn - 1].sqrt();
        }
        let mean_dist = total / sample.len() as f64;
        // all sampled points sit on anchors: any scale works
        let bandwidth = if mean_dist > 0.0 { mean_dist } else { 1.0 };

        let anchor_codes = hash_model.encode(&anchor_view)?;
        let mut model = AnchorModel {
            dim: data.dim(),
            s_nn: params.s_nn,
            anchors,
            bandwidth,
            sigma: 1.0,
            anchor_codes,
            anchor_embeddings: Vec::new(),
        };
        model.anchor_embeddings = model.embed_all(&anchor_view)?;

        let mut max_dist: f64 = 0.0;
        for _ in 0..CALIBRATION_SAMPLE {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let zi = model.embed(data.row(i))?;
            let zj = model.embed(data.row(j))?;
            max_dist = max_dist.max(zi.squared_distance(&zj).sqrt());
        }
        model.sigma = max_dist.max(MIN_SIGMA);
        Ok(model)
    }

    pub fn from_parts(
        anchors: VectorView,
        s_nn: usize,
        bandwidth: f64,
        sigma: f64,
        anchor_codes: PackedCodes,
    ) -> Result<Self> {
        let k = anchors.n();
        if s_nn == 0 || s_nn > k {
            return Err(Error::invalid(format!("s_nn {s_nn} must be in 1..={k}")));
        }
        if !(bandwidth > 0.0) || !(sigma > 0.0) {
            return Err(Error::invalid("bandwidth and sigma must be positive"));
        }
        if anchor_codes.len() != k {
            return Err(Error::invalid(format!(
                "{} anchor codes for {k} anchors",
                anchor_codes.len()
            )));
        }
        let mut model = AnchorModel {
            dim: anchors.dim(),
            s_nn,
            anchors: anchors.as_slice().to_vec(),
            bandwidth,
            sigma,
            anchor_codes,
            anchor_embeddings: Vec::new(),
        };
        model.anchor_embeddings = model.embed_all(&anchors)?;
        Ok(model)
    }

    pub fn num_anchors(&self) -> usize {
        self.anchor_codes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn s_nn(&self) -> usize {
        self.s_nn
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn anchor(&self, j: usize) -> &[f32] {
        &self.anchors[j * self.dim..(j + 1) * self.dim]
    }

    pub fn anchor_codes(&self) -> &PackedCodes {
        &self.anchor_codes
    }

    pub fn anchor_embeddings(&self) -> &[SparseRow] {
        &self.anchor_embeddings
    }

    /// Sparse embedding `z(x)` over the `s_nn` nearest anchors.
    pub fn embed(&self, x: &[f32]) -> Result<SparseRow> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let d = sq_dists(x, &self.anchors, self.dim);
        let mut idx: Vec<usize> = (0..d.len()).collect();
        let by_dist = |a: &usize, b: &usize| d[*a].total_cmp(&d[*b]).then(a.cmp(b));
        if self.s_nn < idx.len() {
            idx.select_nth_unstable_by(self.s_nn - 1, by_dist);
            idx.truncate(self.s_nn);
        }
        let nearest = idx.iter().map(|&j| d[j]).fold(f64::INFINITY, f64::min);
        let two_h2 = 2.0 * self.bandwidth * self.bandwidth;
        // kernel values relative to the nearest anchor; the ratio is what counts
        let entries = idx
            .iter()
            .map(|&j| (j as u32, (-(d[j] - nearest) / two_h2).exp()))
            .collect();
        Ok(SparseRow::normalized(entries))
    }

    pub fn embed_all(&self, data: &VectorView) -> Result<Vec<SparseRow>> {
        use rayon::prelude::*;
        (0..data.n())
            .into_par_iter()
            .map(|i| self.embed(data.row(i)))
            .collect()
    }

    /// The `l` landmarks most similar to `z_q`, with similarities
    /// renormalized to sum to one. Ties go to the lower landmark index.
    /// `l` is clamped to `1..=K`.
    pub fn query_neighbor_profile(&self, z_q: &SparseRow, l: usize) -> Vec<(usize, f64)> {
        let k = self.num_anchors();
        let l = l.clamp(1, k);
        let sigma2 = self.sigma * self.sigma;
        let sims: Vec<f64> = self
            .anchor_embeddings
            .iter()
            .map(|z| (-z.squared_distance(z_q) / sigma2).exp())
            .collect();
        let mut idx: Vec<usize> = (0..k).collect();
        let by_sim = |a: &usize, b: &usize| sims[*b].total_cmp(&sims[*a]).then(a.cmp(b));
        if l < k {
            idx.select_nth_unstable_by(l - 1, by_sim);
            idx.truncate(l);
        }
        idx.sort_unstable_by(by_sim);
        let total: f64 = idx.iter().map(|&j| sims[j]).sum();
        if total > 0.0 {
            idx.into_iter().map(|j| (j, sims[j] / total)).collect()
        } else {
            idx.into_iter().map(|j| (j, 1.0 / l as f64)).collect()
        }
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        w.bytes(ANCHORS_MAGIC);
        w.u32(ANCHORS_VERSION);
        w.u32(self.num_anchors() as u32);
        w.u32(self.dim as u32);
        w.u32(self.s_nn as u32);
        w.f64(self.bandwidth);
        w.f64(self.sigma);
        w.f32s(&self.anchors);
        self.anchor_codes.write_to(w);
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(ANCHORS_MAGIC)?;
        let version = r.u32()?;
        if version != ANCHORS_VERSION {
            return Err(Error::Format(format!(
                "unsupported anchor model version {version}"
            )));
        }
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let s_nn = r.u32()? as usize;
        let bandwidth = r.f64()?;
        let sigma = r.f64()?;
        let anchors = VectorView::new(0, dim, r.f32s(k * dim)?)?;
        let codes = PackedCodes::read_from(r)?;
        Self::from_parts(anchors, s_nn, bandwidth, sigma, codes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_to(&mut w);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "anchor model");
        let m = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(m)
    }
}

fn sq_dists(x: &[f32], anchors: &[f32], dim: usize) -> Vec<f64> {
    anchors
        .chunks_exact(dim)
        .map(|a| {
            a.iter()
                .zip(x)
                .map(|(&u, &v)| {
                    let t = u as f64 - v as f64;
                    t * t
                })
                .sum()
        })
        .collect()
}

/// Lloyd's algorithm with k-means++ seeding. Returns `k x dim` centroids.
pub fn kmeans<R: Rng>(data: &VectorView, k: usize, max_iters: usize, rng: &mut R) -> Vec<f32> {
    let (n, dim) = (data.n(), data.dim());
    let row64 = |i: usize| data.row(i).iter().map(|&v| v as f64);
    let sq = |c: &[f64], i: usize| -> f64 {
        c.iter().zip(row64(i)).map(|(a, b)| (a - b) * (a - b)).sum()
    };

    // k-means++ seeding
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend(row64(first));
    let mut closest: Vec<f64> = (0..n).map(|i| sq(&centroids[..dim], i)).collect();
    for c in 1..k {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend(row64(pick));
        let new_c = &centroids[c * dim..(c + 1) * dim];
        for (i, cl) in closest.iter_mut().enumerate() {
            *cl = cl.min(sq(new_c, i));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, a) in assign.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (sq(&centroids[c * dim..(c + 1) * dim], i), c))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .unwrap()
                .1;
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row64(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                for t in 0..dim {
                    centroids[c * dim + t] = sums[c * dim + t] / counts[c] as f64;
                }
            }
        }
    }
    centroids.into_iter().map(|v| v as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SyntheticSpec};
    use crate::hashing::{train, HashFamily};
    use proptest::prelude::*;

    fn toy_model(anchors: Vec<Vec<f32>>, s_nn: usize, bandwidth: f64) -> AnchorModel {
        let view = VectorView::from_rows(0, &anchors).unwrap();
        let dim = view.dim();
        let hm = HashModel::from_parts(
            HashFamily::Lsh,
            vec![0.0; dim],
            vec![1.0; dim],
            vec![1.0],
            1,
        )
        .unwrap();
        let codes = hm.encode(&view).unwrap();
        AnchorModel::from_parts(view, s_nn, bandwidth, 1.0, codes).unwrap()
    }

    fn row(e: &[(u32, f64)]) -> SparseRow {
        SparseRow { entries: e.to_vec() }
    }

    #[test]
    fn kernel_normalization_arithmetic() {
        // kernel values 3 and 1 → (0.75, 0.25)
        let r = SparseRow::normalized(vec![(4, 3.0), (1, 1.0)]);
        assert_eq!(r.entries, vec![(1, 0.25), (4, 0.75)]);
    }

    #[test]
    fn embedding_on_anchor_is_indicator() {
        let m = toy_model(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]], 1, 1.0);
        let z = m.embed(&[1.0, 0.0]).unwrap();
        assert_eq!(z.entries, vec![(1, 1.0)]);
    }

    #[test]
    fn embedding_uses_gaussian_kernel() {
        let m = toy_model(vec![vec![0.0], vec![1.0], vec![5.0]], 2, 1.0);
        let z = m.embed(&[0.25]).unwrap();
        let k0 = (-(0.25f64 * 0.25) / 2.0).exp();
        let k1 = (-(0.75f64 * 0.75) / 2.0).exp();
        assert_eq!(z.nnz(), 2);
        assert!((z.entries[0].1 - k0 / (k0 + k1)).abs() < 1e-12);
        assert!((z.entries[1].1 - k1 / (k0 + k1)).abs() < 1e-12);
        assert!(m.embed(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn similarity_values() {
        let a = row(&[(0, 0.5), (1, 0.5)]);
        let b = row(&[(2, 0.5), (3, 0.5)]);
        assert_eq!(similarity(&a, &a, 1.0).unwrap(), 1.0);
        let s = similarity(&a, &b, 1.0).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-12);
        assert!((s - 0.3679).abs() < 1e-4);
        assert!(similarity(&a, &b, 0.0).is_err());
        assert!(similarity(&a, &b, -1.0).is_err());
        let c = row(&[(0, 0.5), (2, 0.5)]);
        assert!(similarity(&a, &c, 1.0).unwrap() > s);
    }

    #[test]
    fn profile_single_landmark() {
        let m = toy_model(vec![vec![0.0], vec![1.0], vec![5.0]], 1, 1.0);
        let z = m.embed(&[0.9]).unwrap();
        let p = m.query_neighbor_profile(&z, 1);
        assert_eq!(p, vec![(1, 1.0)]);
    }

    fn synth_model(method: AnchorMethod, k: usize, seed: u64) -> (VectorView, AnchorModel) {
        let ds = gen_synthetic(&SyntheticSpec {
            clusters: 5,
            per_cluster: 60,
            views: 1,
            dim: 8,
            noise: 0.4,
            seed,
        })
        .unwrap();
        let data = ds.view(0).clone();
        let hm = train(HashFamily::Lsh, &data, 16, seed, 0).unwrap();
        let params = AnchorParams {
            num_anchors: k,
            method,
            s_nn: 3,
        };
        let m = AnchorModel::build(&data, &params, &hm, seed).unwrap();
        (data, m)
    }

    #[test]
    fn profile_matches_exhaustive_sort() {
        let (data, m) = synth_model(AnchorMethod::Random, 40, 1);
        for q in 0..10 {
            let z = m.embed(data.row(q * 13)).unwrap();
            let got = m.query_neighbor_profile(&z, 7);
            let mut all: Vec<(f64, usize)> = m
                .anchor_embeddings()
                .iter()
                .enumerate()
                .map(|(j, a)| (similarity(a, &z, m.sigma()).unwrap(), j))
                .collect();
            all.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            let want: Vec<usize> = all.iter().take(7).map(|p| p.1).collect();
            assert_eq!(got.iter().map(|p| p.0).collect::<Vec<_>>(), want);
            let sum: f64 = got.iter().map(|p| p.1).sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn build_counts_and_errors() {
        let (data, m) = synth_model(AnchorMethod::Random, 30, 2);
        assert_eq!(m.num_anchors(), 30);
        assert_eq!(m.anchor_codes().len(), 30);
        assert!(m.bandwidth() > 0.0 && m.sigma() >= 1e-6);
        let hm = train(HashFamily::Lsh, &data, 8, 0, 0).unwrap();
        let too_many = AnchorParams {
            num_anchors: data.n() + 1,
            method: AnchorMethod::Random,
            s_nn: 1,
        };
        assert!(AnchorModel::build(&data, &too_many, &hm, 0).is_err());
        let bad_s = AnchorParams {
            num_anchors: 10,
            method: AnchorMethod::Random,
            s_nn: 11,
        };
        assert!(AnchorModel::build(&data, &bad_s, &hm, 0).is_err());
    }

    #[test]
    fn all_rows_as_anchors_is_permutation() {
        let rows: Vec<Vec<f32>> = (0..20).map(|i| vec![i as f32, (i * i) as f32]).collect();
        let data = VectorView::from_rows(0, &rows).unwrap();
        let hm = train(HashFamily::Lsh, &data, 4, 0, 0).unwrap();
        let params = AnchorParams {
            num_anchors: 20,
            method: AnchorMethod::Random,
            s_nn: 2,
        };
        let m = AnchorModel::build(&data, &params, &hm, 3).unwrap();
        let mut got: Vec<Vec<f32>> = (0..20).map(|j| m.anchor(j).to_vec()).collect();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, rows);
    }

    #[test]
    fn kmeans_recovers_separated_clusters() {
        // three tight, far-apart blobs
        let centers = [[0.0f32, 0.0], [100.0, 0.0], [0.0, 100.0]];
        let mut rows = Vec::new();
        for i in 0..90 {
            let c = centers[i % 3];
            let jitter = (i as f32 * 0.618).fract() - 0.5;
            rows.push(vec![c[0] + jitter, c[1] - jitter]);
        }
        let data = VectorView::from_rows(0, &rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cents = kmeans(&data, 3, KMEANS_MAX_ITERS, &mut rng);
        // assignment oracle: each centroid lands in exactly one blob's box
        let mut hit = [0usize; 3];
        for c in cents.chunks_exact(2) {
            let blob = centers
                .iter()
                .position(|b| (c[0] - b[0]).abs() <= 0.5 && (c[1] - b[1]).abs() <= 0.5)
                .expect("centroid outside every bounding box");
            hit[blob] += 1;
        }
        assert_eq!(hit, [1, 1, 1]);
    }

    #[test]
    fn kmeans_anchor_model_builds() {
        let (_, m) = synth_model(AnchorMethod::Kmeans, 10, 3);
        assert_eq!(m.num_anchors(), 10);
    }

    #[test]
    fn model_bytes_round_trip() {
        let (data, m) = synth_model(AnchorMethod::Random, 25, 4);
        let back = AnchorModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.embed(data.row(3)).unwrap(), m.embed(data.row(3)).unwrap());
    }

    proptest! {
        #[test]
        fn embedding_rows_are_probability_vectors(
            seed in 0u64..500,
            x in proptest::collection::vec(-3.0f32..3.0, 8),
        ) {
            let (_, m) = synth_model(AnchorMethod::Random, 20, seed % 5);
            let z = m.embed(&x).unwrap();
            prop_assert_eq!(z.nnz(), 3);
            prop_assert!((z.sum() - 1.0).abs() < 1e-9);
            prop_assert!(z.entries.iter().all(|e| e.1 >= 0.0 && (e.0 as usize) < 20));
            prop_assert!(z.entries.windows(2).all(|w| w[0].0 < w[1].0));
        }

        #[test]
        fn similarity_symmetric(
            a in proptest::collection::btree_map(0u32..30, 0.01f64..1.0, 1..6),
            b in proptest::collection::btree_map(0u32..30, 0.01f64..1.0, 1..6),
        ) {
            let za = SparseRow::normalized(a.into_iter().collect());
            let zb = SparseRow::normalized(b.into_iter().collect());
            let s1 = similarity(&za, &zb, 0.7).unwrap();
            let s2 = similarity(&zb, &za, 0.7).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert!(s1 > 0.0 && s1 <= 1.0);
            prop_assert_eq!(s1 == 1.0, za.squared_distance(&zb) == 0.0);
        }
    }
}
