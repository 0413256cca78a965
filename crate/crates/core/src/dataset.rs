//! Multi-view vector data: loading, splitting, ground truth, synthetic data.
//!
//! Binary vector files are little-endian: the magic `MVH1`, then `u32` row
//! count N, `u32` dimension D, then `N * D` `f32` values in row-major order.
//! CSV files hold one row per line, comma separated, `.` decimal point.
//! Label files hold one line per row; a line is either a single integer or
//! several integers separated by commas or whitespace (multi-label items).

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_file, write_file, ByteReader, ByteWriter};

pub const VECTOR_MAGIC: &[u8; 4] = b"MVH1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorFormat {
    BinaryF32,
    Csv,
}

impl VectorFormat {
    /// Guess the format from a file extension (`.csv` is CSV, anything else binary).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => VectorFormat::Csv,
            _ => VectorFormat::BinaryF32,
        }
    }
}

impl std::str::FromStr for VectorFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary-f32" | "binary" | "bin" => Ok(VectorFormat::BinaryF32),
            "csv" => Ok(VectorFormat::Csv),
            other => Err(Error::invalid(format!("unknown vector format {other:?}"))),
        }
    }
}

/// One feature representation of all items, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorView {
    pub view_id: usize,
    dim: usize,
    data: Vec<f32>,
}

impl VectorView {
    pub fn new(view_id: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("vector dimension must be positive"));
        }
        if data.is_empty() {
            return Err(Error::invalid("a view needs at least one row"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Format(format!(
                "payload of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Row {
                row: pos / dim,
                message: "non-finite value".into(),
            });
        }
        Ok(Self { view_id, dim, data })
    }

    pub fn from_rows(view_id: usize, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::Row {
                    row: i,
                    message: format!("expected {dim} values, found {}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(view_id, dim, data)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Materialize the given rows, in order, as a new view.
    pub fn select(&self, idx: &[usize]) -> Result<VectorView> {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            if i >= self.n() {
                return Err(Error::invalid(format!(
                    "row index {i} out of range for view with {} rows",
                    self.n()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        VectorView::new(self.view_id, self.dim, data)
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(VECTOR_MAGIC);
        w.u32(self.n() as u32);
        w.u32(self.dim as u32);
        w.f32s(&self.data);
        w.buf
    }

    pub fn from_binary(view_id: usize, bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "vector file");
        r.expect_magic(VECTOR_MAGIC)?;
        let n = r.u32()? as usize;
        let d = r.u32()? as usize;
        if n == 0 || d == 0 {
            return Err(Error::Format(format!("header declares {n} x {d} matrix")));
        }
        let expected = n * d * 4;
        if r.remaining() != expected {
            return Err(Error::Format(format!(
                "header declares {n} x {d} ({expected} payload bytes) but file has {}",
                r.remaining()
            )));
        }
        let data = r.f32s(n * d)?;
        r.finish()?;
        VectorView::new(view_id, d, data)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(view_id: usize, text: &str) -> Result<Self> {
        let mut dim = None;
        let mut data = Vec::new();
        for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let mut count = 0;
            for field in line.split(',') {
                let v: f32 = field.trim().parse().map_err(|_| Error::Row {
                    row,
                    message: format!("cannot parse {:?} as a number", field.trim()),
                })?;
                if !v.is_finite() {
                    return Err(Error::Row {
                        row,
                        message: format!("non-finite value {:?}", field.trim()),
                    });
                }
                data.push(v);
                count += 1;
            }
            match dim {
                None => dim = Some(count),
                Some(d) if d != count => {
                    return Err(Error::Row {
                        row,
                        message: format!("expected {d} values, found {count}"),
                    })
                }
                _ => {}
            }
        }
        let dim = dim.ok_or_else(|| Error::Format("CSV file has no rows".into()))?;
        VectorView::new(view_id, dim, data)
    }
}

pub fn load_vectors(path: &Path, format: VectorFormat, view_id: usize) -> Result<VectorView> {
    let bytes = read_file(path)?;
    match format {
        VectorFormat::BinaryF32 => VectorView::from_binary(view_id, &bytes),
        VectorFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
            VectorView::from_csv(view_id, &text)
        }
    }
}

pub fn save_vectors(view: &VectorView, path: &Path, format: VectorFormat) -> Result<()> {
    match format {
        VectorFormat::BinaryF32 => write_file(path, &view.to_binary()),
        VectorFormat::Csv => write_file(path, view.to_csv().as_bytes()),
    }
}

/// Per-item label sets. Single-label data has exactly one label per item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    sets: Vec<Vec<u32>>,
}

impl Labels {
    pub fn single(labels: Vec<u32>) -> Self {
        Self {
            sets: labels.into_iter().map(|l| vec![l]).collect(),
        }
    }

    pub fn multi(mut sets: Vec<Vec<u32>>) -> Self {
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        Self { sets }
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&[u32]> {
        self.sets.get(i).map(Vec::as_slice)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sets = Vec::new();
        for (row, line) in text.lines().enumerate() {
            let mut set = Vec::new();
            for tok in line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
            {
                set.push(tok.parse::<u32>().map_err(|_| Error::Row {
                    row,
                    message: format!("cannot parse label {tok:?}"),
                })?);
            }
            sets.push(set);
        }
        // a trailing newline produces no extra row with `lines()`, but blank
        // lines in the middle are kept as unlabeled items
        Ok(Self::multi(sets))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sets {
            let toks: Vec<String> = s.iter().map(u32::to_string).collect();
            out.push_str(&toks.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn load_labels(path: &Path) -> Result<Labels> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
    Labels::parse(&text)
}

pub fn save_labels(labels: &Labels, path: &Path) -> Result<()> {
    write_file(path, labels.to_text().as_bytes())
}

/// Item-aligned views of the same objects plus optional labels.
#[derive(Debug, Clone)]
pub struct MultiViewDataset {
    views: Vec<VectorView>,
    labels: Option<Labels>,
}

impl MultiViewDataset {
    pub fn new(views: Vec<VectorView>, labels: Option<Labels>) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::invalid("dataset needs at least one view"))?;
        let n = first.n();
        for v in &views {
            if v.n() != n {
                return Err(Error::invalid(format!(
                    "view {} has {} rows, view {} has {n}",
                    v.view_id,
                    v.n(),
                    first.view_id
                )));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::invalid(format!(
                    "label file has {} rows, views have {n}",
                    l.len()
                )));
            }
        }
        Ok(Self { views, labels })
    }

    pub fn n(&self) -> usize {
        self.views[0].n()
    }

    pub fn views(&self) -> &[VectorView] {
        &self.views
    }

    pub fn view(&self, m: usize) -> &VectorView {
        &self.views[m]
    }

    pub fn num_views(&self) -> usize {
        self.views.len()
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }
}

/// Train / query / database partition of item indices. All lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_idx: Vec<usize>,
    pub query_idx: Vec<usize>,
    pub database_idx: Vec<usize>,
    pub seed: u64,
}

/// Random protocol split. Queries are drawn first and removed from the
/// database; the training sample is drawn from the remainder, so it is a
/// subset of the database.
pub fn make_split(n: usize, n_train: usize, n_query: usize, seed: u64) -> Result<DatasetSplit> {
    if n_train.checked_add(n_query).is_none_or(|total| total > n) {
        return Err(Error::invalid(format!(
            "n_train ({n_train}) + n_query ({n_query}) exceeds item count {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);

    let mut query_idx = perm[..n_query].to_vec();
    let mut train_idx = perm[n_query..n_query + n_train].to_vec();
    let mut database_idx = perm[n_query..].to_vec();
    query_idx.sort_unstable();
    train_idx.sort_unstable();
    database_idx.sort_unstable();
    Ok(DatasetSplit {
        train_idx,
        query_idx,
        database_idx,
        seed,
    })
}

/// Relevant database items for each query (item ids, ascending).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    relevant: Vec<Vec<usize>>,
}

impl GroundTruth {
    pub fn relevant(&self, q: usize) -> &[usize] {
        &self.relevant[q]
    }

    pub fn is_relevant(&self, q: usize, id: usize) -> bool {
        self.relevant[q].binary_search(&id).is_ok()
    }

    pub fn num_queries(&self) -> usize {
        self.relevant.len()
    }

    /// Queries without any relevant item; these are left out of MAP.
    pub fn empty_queries(&self) -> usize {
        self.relevant.iter().filter(|r| r.is_empty()).count()
    }
}

/// Items sharing at least one label with the query are relevant.
pub fn ground_truth(
    labels: &Labels,
    query_idx: &[usize],
    database_idx: &[usize],
) -> Result<GroundTruth> {
    let label_of = |i: usize| -> Result<&[u32]> {
        match labels.get(i) {
            Some(s) if !s.is_empty() => Ok(s),
            _ => Err(Error::invalid(format!("item {i} has no label"))),
        }
    };
    let mut postings: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &d in database_idx {
        for &l in label_of(d)? {
            postings.entry(l).or_default().push(d);
        }
    }
    let mut relevant = Vec::with_capacity(query_idx.len());
    for &q in query_idx {
        let mut rel: Vec<usize> = Vec::new();
        for l in label_of(q)? {
            if let Some(p) = postings.get(l) {
                rel.extend_from_slice(p);
            }
        }
        rel.sort_unstable();
        rel.dedup();
        relevant.push(rel);
    }
    Ok(GroundTruth { relevant })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub views: usize,
    pub dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            clusters: 10,
            per_cluster: 200,
            views: 2,
            dim: 32,
            noise: 1.0,
            seed: 0,
        }
    }
}

/// Gaussian clusters observed through several views.
///
/// Cluster centers are drawn once from a standard normal. Every view sees
/// each item as `R_m (center + noise * e_m)`, with its own random rotation
/// `R_m` and its own noise draw `e_m`, so views share the cluster structure
/// but err independently. Items are interleaved: item `i` has label
/// `i % clusters`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<MultiViewDataset> {
    gen_with_noise(spec, |_, _| spec.noise)
}

/// Like [`gen_synthetic`], but view `m` only sees clusters `c` with
/// `c % views == m` at `spec.noise`; every other cluster gets `high_noise`
/// in that view. Each view is reliable where the others are not.
pub fn gen_synthetic_complementary(spec: &SyntheticSpec, high_noise: f64) -> Result<MultiViewDataset> {
    if !(high_noise >= 0.0 && high_noise.is_finite()) {
        return Err(Error::invalid("noise must be a finite non-negative stddev"));
    }
    let views = spec.views.max(1);
    gen_with_noise(spec, |m, c| if c % views == m { spec.noise } else { high_noise })
}

fn gen_with_noise(
    spec: &SyntheticSpec,
    noise_of: impl Fn(usize, usize) -> f64,
) -> Result<MultiViewDataset> {
    let SyntheticSpec {
        clusters,
        per_cluster,
        views,
        dim,
        noise,
        seed,
    } = *spec;
    if clusters == 0 || per_cluster == 0 || views == 0 || dim == 0 {
        return Err(Error::invalid("synthetic counts must be positive"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::invalid("noise must be a finite non-negative stddev"));
    }
    let n = clusters * per_cluster;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..clusters * dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut out = Vec::with_capacity(views);
    for m in 0..views {
        let rot = random_orthogonal(dim, &mut rng);
        let mut data = Vec::with_capacity(n * dim);
        let mut latent = vec![0.0f64; dim];
        for i in 0..n {
            let c = i % clusters;
            let noise = noise_of(m, c);
            for (t, l) in latent.iter_mut().enumerate() {
                let e: f64 = rng.sample(StandardNormal);
                *l = centers[c * dim + t] + noise * e;
            }
            for r in 0..dim {
                let mut acc = 0.0;
                for (t, l) in latent.iter().enumerate() {
                    acc += rot[(r, t)] * l;
                }
                data.push(acc as f32);
            }
        }
        out.push(VectorView::new(m, dim, data)?);
    }
    let labels = Labels::single((0..n).map(|i| (i % clusters) as u32).collect());
    MultiViewDataset::new(out, Some(labels))
}

/// Haar-ish random orthogonal matrix: QR of a Gaussian matrix with the
/// sign of R's diagonal folded into Q.
pub(crate) fn random_orthogonal<R: Rng>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
