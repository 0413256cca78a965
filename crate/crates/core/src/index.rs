//! Offline stage: one hash table per view.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorModel, AnchorParams};
use crate::dataset::{DatasetSplit, MultiViewDataset, VectorView};
use crate::error::{Error, Result};
use crate::hashing::{self, HashFamily, HashModel, PackedCodes, DEFAULT_ITQ_ITERS};
use crate::qrank::{IndependenceMatrix, DEFAULT_LAMBDA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    pub family: HashFamily,
    pub bits: usize,
    pub itq_iters: usize,
    pub anchors: AnchorParams,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            family: HashFamily::Lsh,
            bits: 48,
            itq_iters: DEFAULT_ITQ_ITERS,
            anchors: AnchorParams::default(),
            lambda: DEFAULT_LAMBDA,
            seed: 0,
        }
    }
}

/// Everything the online stage needs for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct HashTable {
    pub view_id: usize,
    pub hash_model: HashModel,
    /// Database codes; row `r` belongs to item `item_ids[r]`.
    pub codes: PackedCodes,
    /// Strictly ascending, so row order and id order agree.
    pub item_ids: Vec<usize>,
    pub anchors: AnchorModel,
    pub independence: IndependenceMatrix,
}

impl HashTable {
    pub fn new(
        view_id: usize,
        hash_model: HashModel,
        codes: PackedCodes,
        item_ids: Vec<usize>,
        anchors: AnchorModel,
        independence: IndependenceMatrix,
    ) -> Result<Self> {
        if codes.len() != item_ids.len() {
            return Err(Error::invalid(format!(
                "{} codes for {} item ids",
                codes.len(),
                item_ids.len()
            )));
        }
        if item_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("item ids must be strictly ascending"));
        }
        let bits = hash_model.bits();
        if codes.bits() != bits
            || anchors.anchor_codes().bits() != bits
            || independence.bits() != bits
        {
            return Err(Error::invalid("table components disagree on bit count"));
        }
        if anchors.dim() != hash_model.dim() {
            return Err(Error::DimensionMismatch {
                expected: hash_model.dim(),
                got: anchors.dim(),
            });
        }
        Ok(Self {
            view_id,
            hash_model,
            codes,
            item_ids,
            anchors,
            independence,
        })
    }

    pub fn bits(&self) -> usize {
        self.hash_model.bits()
    }

    pub fn dim(&self) -> usize {
        self.hash_model.dim()
    }

    pub fn row_of(&self, id: usize) -> Option<usize> {
        self.item_ids.binary_search(&id).ok()
    }

    /// Train, encode and index one view.
    ///
    /// Hash functions and the independence matrix come from the training
    /// rows; anchors are drawn from, and codes computed for, the database rows.
    pub fn build(
        view: &VectorView,
        split: &DatasetSplit,
        params: &BuildParams,
    ) -> Result<Self> {
        if split.train_idx.is_empty() || split.database_idx.is_empty() {
            return Err(Error::invalid("split needs training and database items"));
        }
        let view_seed = params
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(view.view_id as u64);
        let train = view.select(&split.train_idx)?;
        let database = view.select(&split.database_idx)?;
        let hash_model = hashing::train(
            params.family,
            &train,
            params.bits,
            view_seed,
            params.itq_iters,
        )?;
        let train_codes = hash_model.encode(&train)?;
        let independence = IndependenceMatrix::compute(&train_codes, params.lambda)?;
        let codes = hash_model.encode(&database)?;
        let anchors = AnchorModel::build(
            &database,
            &params.anchors,
            &hash_model,
            view_seed ^ 0xA5A5_5A5A,
        )?;
        Self::new(
            view.view_id,
            hash_model,
            codes,
            split.database_idx.clone(),
            anchors,
            independence,
        )
    }
}

/// Hash tables over the same database, one per view.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTableIndex {
    pub tables: Vec<HashTable>,
}

impl MultiTableIndex {
    pub fn new(tables: Vec<HashTable>) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::invalid("index needs at least one table"))?;
        if tables.iter().any(|t| t.item_ids != first.item_ids) {
            return Err(Error::invalid("tables index different databases"));
        }
        Ok(Self { tables })
    }

    pub fn build(
        dataset: &MultiViewDataset,
        split: &DatasetSplit,
        params: &BuildParams,
    ) -> Result<Self> {
        let tables = dataset
            .views()
            .par_iter()
            .map(|v| {
                HashTable::build(v, split, params).map_err(|e| match e {
                    Error::InvalidArgument(m) => {
                        Error::InvalidArgument(format!("view {}: {m}", v.view_id))
                    }
                    other => other,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(tables)
    }

    pub fn num_views(&self) -> usize {
        self.tables.len()
    }

    pub fn item_ids(&self) -> &[usize] {
        &self.tables[0].item_ids
    }
}
