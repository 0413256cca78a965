//! Bit-packed binary codes.
//!
//! Bit `k` of an item lives in word `k / 64` at position `k % 64`. A set bit
//! stands for the hash value +1 and a clear bit for -1. Padding bits past
//! `bits` are always zero so whole-word XOR/popcount never sees them.

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const CODES_MAGIC: &[u8; 4] = b"MVHC";
const CODES_VERSION: u32 = 1;

#[inline]
pub fn words_for_bits(bits: usize) -> usize {
    bits.div_ceil(64)
}

#[inline]
pub fn hamming_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[inline]
pub fn get_bit(code: &[u64], k: usize) -> bool {
    (code[k / 64] >> (k % 64)) & 1 == 1
}

#[inline]
pub fn set_bit(code: &mut [u64], k: usize) {
    code[k / 64] |= 1u64 << (k % 64);
}

/// Ranked database entry. `id` is the row in the code matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<D> {
    pub id: usize,
    pub distance: D,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    n: usize,
    bits: usize,
    stride: usize,
    words: Vec<u64>,
}

impl PackedCodes {
    pub fn new(bits: usize) -> Self {
        Self {
            n: 0,
            bits,
            stride: words_for_bits(bits),
            words: Vec::new(),
        }
    }

    pub fn from_words(n: usize, bits: usize, words: Vec<u64>) -> Result<Self> {
        let stride = words_for_bits(bits);
        if words.len() != n * stride {
            return Err(Error::Format(format!(
                "{} words for {n} codes of {bits} bits (expected {})",
                words.len(),
                n * stride
            )));
        }
        let codes = Self {
            n,
            bits,
            stride,
            words,
        };
        let mask = codes.tail_mask();
        if stride > 0 && mask != u64::MAX {
            for i in 0..n {
                if codes.code(i)[stride - 1] & !mask != 0 {
                    return Err(Error::Format(format!("code {i} has padding bits set")));
                }
            }
        }
        Ok(codes)
    }

    /// Build from explicit per-item bit vectors (`true` = +1).
    pub fn from_bools(bits: usize, rows: &[Vec<bool>]) -> Result<Self> {
        let mut codes = Self::new(bits);
        let mut buf = vec![0u64; codes.stride];
        for (i, r) in rows.iter().enumerate() {
            if r.len() != bits {
                return Err(Error::Row {
                    row: i,
                    message: format!("expected {bits} bits, found {}", r.len()),
                });
            }
            buf.iter_mut().for_each(|w| *w = 0);
            for (k, &b) in r.iter().enumerate() {
                if b {
                    set_bit(&mut buf, k);
                }
            }
            codes.push(&buf);
        }
        Ok(codes)
    }

    fn tail_mask(&self) -> u64 {
        match self.bits % 64 {
            0 => u64::MAX,
            r => (1u64 << r) - 1,
        }
    }

    pub fn push(&mut self, code: &[u64]) {
        assert_eq!(code.len(), self.stride, "code word count");
        debug_assert_eq!(code.last().map_or(0, |w| w & !self.tail_mask()), 0);
        self.words.extend_from_slice(code);
        self.n += 1;
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn bits(&self) -> usize {
        self.bits
    }

    #[inline]
    pub fn words_per_code(&self) -> usize {
        self.stride
    }

    #[inline]
    pub fn code(&self, i: usize) -> &[u64] {
        &self.words[i * self.stride..(i + 1) * self.stride]
    }

    #[inline]
    pub fn bit(&self, i: usize, k: usize) -> bool {
        get_bit(self.code(i), k)
    }

    pub fn as_words(&self) -> &[u64] {
        &self.words
    }

    /// Number of positions where items `i` and `j` carry different hash values.
    #[inline]
    pub fn hamming(&self, i: usize, j: usize) -> u32 {
        hamming_distance(self.code(i), self.code(j))
    }

    /// Rows `idx` gathered into a new code set, in the given order.
    pub fn select(&self, idx: &[usize]) -> PackedCodes {
        let mut out = PackedCodes::new(self.bits);
        out.words.reserve(idx.len() * self.stride);
        for &i in idx {
            out.push(self.code(i));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CODES_MAGIC);
        w.u32(CODES_VERSION);
        w.u32(self.n as u32);
        w.u32(self.bits as u32);
        w.u64s(&self.words);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "codes file");
        Self::read_from(&mut r).and_then(|c| r.finish().map(|_| c))
    }

    pub(crate) fn write_to(&self, w: &mut ByteWriter) {
        w.bytes(&self.to_bytes());
    }

    pub(crate) fn read_from(r: &mut ByteReader<'_>) -> Result<Self> {
        r.expect_magic(CODES_MAGIC)?;
        let version = r.u32()?;
        if version != CODES_VERSION {
            return Err(Error::Format(format!("unsupported codes version {version}")));
        }
        let n = r.u32()? as usize;
        let bits = r.u32()? as usize;
        let words = r.u64s(n * words_for_bits(bits))?;
        Self::from_words(n, bits, words)
    }
}

/// Top-`k` rows by Hamming distance to `query`, ascending, ties by row id.
///
/// Distances are bounded by `bits`, so this is a counting sort: bucket rows
/// by distance in id order and read the buckets front to back.
pub fn hamming_rank(codes: &PackedCodes, query: &[u64], k: usize) -> Vec<Neighbor<u32>> {
    assert_eq!(query.len(), codes.words_per_code(), "query word count");
    let k = k.min(codes.len());
    let mut dist = Vec::with_capacity(codes.len());
    let mut counts = vec![0usize; codes.bits() + 2];
    for i in 0..codes.len() {
        let d = hamming_distance(codes.code(i), query);
        counts[d as usize + 1] += 1;
        dist.push(d);
    }
    for b in 1..counts.len() {
        counts[b] += counts[b - 1];
    }
    // counts[d] is now the first output slot for distance d
    let mut order = vec![0usize; codes.len()];
    for (i, &d) in dist.iter().enumerate() {
        let slot = &mut counts[d as usize];
        order[*slot] = i;
        *slot += 1;
    }
    order
        .into_iter()
        .take(k)
        .map(|id| Neighbor {
            id,
            distance: dist[id],
        })
        .collect()
}
