//! Projection hash functions (LSH, PCAH, ITQ) and binary encoding.
//!
//! Every family produces `B` linear functions of the form
//! `h_k(x) = sign((R P (x - mean))_k)` where `P` is a `B x D` projection and
//! `R` a `B x B` orthogonal rotation (identity except for ITQ). A zero
//! projection maps to +1.

mod codes;

pub use codes::{
    get_bit, hamming_distance, hamming_rank, set_bit, words_for_bits, Neighbor, PackedCodes,
};

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{random_orthogonal, VectorView};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const MODEL_MAGIC: &[u8; 4] = b"MVHM";
const MODEL_VERSION: u32 = 1;

pub const DEFAULT_ITQ_ITERS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashFamily {
    Lsh,
    Pcah,
    Itq,
}

impl HashFamily {
    fn tag(self) -> u8 {
        match self {
            HashFamily::Lsh => 0,
            HashFamily::Pcah => 1,
            HashFamily::Itq => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(HashFamily::Lsh),
            1 => Ok(HashFamily::Pcah),
            2 => Ok(HashFamily::Itq),
            t => Err(Error::Format(format!("unknown hash family tag {t}"))),
        }
    }
}

impl std::fmt::Display for HashFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HashFamily::Lsh => "lsh",
            HashFamily::Pcah => "pcah",
            HashFamily::Itq => "itq",
        })
    }
}

impl std::str::FromStr for HashFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsh" => Ok(HashFamily::Lsh),
            "pcah" | "pca" => Ok(HashFamily::Pcah),
            "itq" => Ok(HashFamily::Itq),
            other => Err(Error::invalid(format!("unknown hash family {other:?}"))),
        }
    }
}

/// Trained hash functions for one view.
///
/// Parameters are held at `f32` precision so that a model reloaded from
/// disk encodes bit-identically to the one that was trained.
#[derive(Debug, Clone)]
pub struct HashModel {
    family: HashFamily,
    dim: usize,
    bits: usize,
    mean: Vec<f32>,
    /// `bits x dim`, row-major.
    projection: Vec<f32>,
    /// `bits x bits`, row-major.
    rotation: Vec<f32>,
    /// `rotation * projection` in f64, `bits x dim`.
    combined: Vec<f64>,
}

impl PartialEq for HashModel {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.dim == other.dim
            && self.bits == other.bits
            && self.mean == other.mean
            && self.projection == other.projection
            && self.rotation == other.rotation
    }
}

/// Diagnostics collected while training.
#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// ITQ quantization loss `||B - V R||_F^2` for the initial rotation and
    /// after every iteration. Empty for non-ITQ families.
    pub itq_loss: Vec<f64>,
    /// Number of projection directions that had to be filled randomly
    /// because the covariance was rank deficient.
    pub random_fill: usize,
}

impl HashModel {
    pub fn from_parts(
        family: HashFamily,
        mean: Vec<f32>,
        projection: Vec<f32>,
        rotation: Vec<f32>,
        bits: usize,
    ) -> Result<Self> {
        let dim = mean.len();
        if bits == 0 || dim == 0 {
            return Err(Error::invalid("hash model needs bits >= 1 and dim >= 1"));
        }
        if projection.len() != bits * dim {
            return Err(Error::Format(format!(
                "projection has {} entries, expected {bits} x {dim}",
                projection.len()
            )));
        }
        if rotation.len() != bits * bits {
            return Err(Error::Format(format!(
                "rotation has {} entries, expected {bits} x {bits}",
                rotation.len()
            )));
        }
        let mut combined = vec![0.0f64; bits * dim];
        for r in 0..bits {
            for t in 0..bits {
                let rt = rotation[r * bits + t] as f64;
                if rt == 0.0 {
                    continue;
                }
                let prow = &projection[t * dim..(t + 1) * dim];
                let crow = &mut combined[r * dim..(r + 1) * dim];
                for (c, &p) in crow.iter_mut().zip(prow) {
                    *c += rt * p as f64;
                }
            }
        }
        Ok(Self {
            family,
            dim,
            bits,
            mean,
            projection,
            rotation,
            combined,
        })
    }

    pub fn family(&self) -> HashFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn rotation(&self) -> &[f32] {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(
            self.bits,
            self.bits,
            self.rotation.iter().map(|&v| v as f64),
        )
    }

    /// Projected values `R P (x - mean)` for one vector.
    pub fn project(&self, x: &[f32]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(&a, &m)| a as f64 - m as f64)
            .collect();
        Ok(self
            .combined
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&centered).map(|(w, c)| w * c).sum())
            .collect())
    }

    /// Packed code of one vector.
    pub fn encode_one(&self, x: &[f32]) -> Result<Vec<u64>> {
        let proj = self.project(x)?;
        let mut code = vec![0u64; words_for_bits(self.bits)];
        for (k, v) in proj.iter().enumerate() {
            if *v >= 0.0 {
                set_bit(&mut code, k);
            }
        }
        Ok(code)
    }

    /// Encode every row of `data`.
    pub fn encode(&self, data: &VectorView) -> Result<PackedCodes> {
        self.check_dim(data.dim())?;
        let rows: Vec<Vec<u64>> = (0..data.n())
            .into_par_iter()
            .map(|i| self.encode_one(data.row(i)))
            .collect::<Result<_>>()?;
        let mut codes = PackedCodes::new(self.bits);
        for r in &rows {
            codes.push(r);
        }
        Ok(codes)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_to(&mut w);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "hash model");
        let m = Self::read_from(&mut r)?;
        r.finish()?;
        Ok(m)
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.u8(self.family.tag());
        w.u32(self.dim as u32);
        w.u32(self.bits as u32);
        w.f32s(&self.mean);
        w.f32s(&self.projection);
        w.f32s(&self.rotation);
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported hash model version {version}"
            )));
        }
        let family = HashFamily::from_tag(r.u8()?)?;
        let dim = r.u32()? as usize;
        let bits = r.u32()? as usize;
        let mean = r.f32s(dim)?;
        let projection = r.f32s(bits * dim)?;
        let rotation = r.f32s(bits * bits)?;
        Self::from_parts(family, mean, projection, rotation, bits)
    }
}

/// Train hash functions of `family` on the rows of `data`.
pub fn train(
    family: HashFamily,
    data: &VectorView,
    bits: usize,
    seed: u64,
    itq_iters: usize,
) -> Result<HashModel> {
    train_with_report(family, data, bits, seed, itq_iters).map(|(m, _)| m)
}

pub fn train_with_report(
    family: HashFamily,
    data: &VectorView,
    bits: usize,
    seed: u64,
    itq_iters: usize,
) -> Result<(HashModel, TrainReport)> {
    if bits == 0 {
        return Err(Error::invalid("bits must be at least 1"));
    }
    let dim = data.dim();
    if matches!(family, HashFamily::Pcah | HashFamily::Itq) && bits > dim {
        return Err(Error::invalid(format!(
            "{family} needs bits <= dim, got {bits} bits for dimension {dim}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = column_mean(data);
    let mut report = TrainReport::default();

    let (projection, rotation) = match family {
        HashFamily::Lsh => {
            let p = DMatrix::from_fn(bits, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            (p, DMatrix::identity(bits, bits))
        }
        HashFamily::Pcah => {
            let (p, filled) = pca_directions(data, &mean, bits, &mut rng);
            report.random_fill = filled;
            (p, DMatrix::identity(bits, bits))
        }
        HashFamily::Itq => {
            let (p, filled) = pca_directions(data, &mean, bits, &mut rng);
            report.random_fill = filled;
            let centered = centered_matrix(data, &mean);
            let v = &centered * p.transpose();
            let (r, losses) = itq_rotation(&v, itq_iters, &mut rng);
            report.itq_loss = losses;
            // ITQ works on row vectors (v R); as a column map that is R^T.
            (p, r.transpose())
        }
    };

    let to_f32_rows = |m: &DMatrix<f64>| -> Vec<f32> {
        let mut out = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.push(m[(r, c)] as f32);
            }
        }
        out
    };
    let model = HashModel::from_parts(
        family,
        mean.iter().map(|&v| v as f32).collect(),
        to_f32_rows(&projection),
        to_f32_rows(&rotation),
        bits,
    )?;
    Ok((model, report))
}

fn column_mean(data: &VectorView) -> Vec<f64> {
    let mut mean = vec![0.0f64; data.dim()];
    for row in data.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    let n = data.n() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn centered_matrix(data: &VectorView, mean: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(data.n(), data.dim(), |i, j| {
        data.row(i)[j] as f64 - mean[j]
    })
}

/// Top-`bits` principal directions as rows of a `bits x dim` matrix.
///
/// Directions with (numerically) zero variance are replaced by random unit
/// vectors orthogonal to the ones already chosen. Returns the number of
/// such replacements.
fn pca_directions<R: Rng>(
    data: &VectorView,
    mean: &[f64],
    bits: usize,
    rng: &mut R,
) -> (DMatrix<f64>, usize) {
    let dim = data.dim();
    let centered = centered_matrix(data, mean);
    let denom = (data.n().max(2) - 1) as f64;
    let cov = (centered.transpose() * &centered) / denom;
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let floor = top * 1e-10 + f64::MIN_POSITIVE;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(bits);
    for &j in order.iter().take(bits) {
        if eig.eigenvalues[j] > floor {
            rows.push(eig.eigenvectors.column(j).iter().copied().collect());
        }
    }
    let available = rows.len();
    if available < bits {
        warn!(
            "covariance has rank {available} < {bits} requested bits; filling {} directions randomly",
            bits - available
        );
    }
    while rows.len() < bits {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let dot: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(x, a)| *x -= dot * a);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            rows.push(v);
        }
    }
    let p = DMatrix::from_fn(bits, dim, |r, c| rows[r][c]);
    (p, bits - available)
}

fn sign_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| if v >= 0.0 { 1.0 } else { -1.0 })
}

/// Alternating minimization of `||B - V R||_F^2` over binary `B` and
/// orthogonal `R`. The `B` step is the elementwise sign, the `R` step an
/// orthogonal Procrustes problem solved by SVD.
fn itq_rotation<R: Rng>(v: &DMatrix<f64>, iters: usize, rng: &mut R) -> (DMatrix<f64>, Vec<f64>) {
    let bits = v.ncols();
    let mut r = random_orthogonal(bits, rng);
    let mut losses = Vec::with_capacity(iters + 1);
    let loss = |vr: &DMatrix<f64>| -> f64 {
        vr.iter()
            .map(|&x| {
                let b = if x >= 0.0 { 1.0 } else { -1.0 };
                (b - x) * (b - x)
            })
            .sum()
    };
    let mut vr = v * &r;
    losses.push(loss(&vr));
    for _ in 0..iters {
        let b = sign_matrix(&vr);
        let c = v.transpose() * b;
        let svd = c.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        r = u * vt;
        vr = v * &r;
        losses.push(loss(&vr));
    }
    (r, losses)
}
