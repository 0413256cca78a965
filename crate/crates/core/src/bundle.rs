//! On-disk index: a directory holding `manifest.json`, `split.json` and
//! four binary artifacts per view, each listed in the manifest with its
//! SHA-256.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchors::AnchorModel;
use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::hashing::{HashModel, PackedCodes};
use crate::index::{BuildParams, HashTable, MultiTableIndex};
use crate::io::{read_file, write_file};
use crate::qrank::IndependenceMatrix;

pub const BUNDLE_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub view_id: usize,
    pub dim: usize,
    pub bits: usize,
    pub model: Artifact,
    pub codes: Artifact,
    pub anchors: Artifact,
    pub independence: Artifact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub params: BuildParams,
    pub num_items: usize,
    pub split: Artifact,
    pub views: Vec<ViewEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn put(dir: &Path, file: String, bytes: &[u8]) -> Result<Artifact> {
    write_file(&dir.join(&file), bytes)?;
    Ok(Artifact {
        sha256: sha256_hex(bytes),
        file,
    })
}

fn get(dir: &Path, a: &Artifact) -> Result<Vec<u8>> {
    if a.file.contains(['/', '\\']) || a.file.starts_with('.') {
        return Err(Error::Format(format!("bad artifact name {:?}", a.file)));
    }
    let bytes = read_file(&dir.join(&a.file))?;
    let got = sha256_hex(&bytes);
    if got != a.sha256 {
        return Err(Error::Format(format!(
            "{}: checksum mismatch (manifest {}, file {got})",
            a.file, a.sha256
        )));
    }
    Ok(bytes)
}

/// Write the index into `dir` (created if missing) and return its manifest.
pub fn save_index(
    dir: &Path,
    index: &MultiTableIndex,
    split: &DatasetSplit,
    params: &BuildParams,
) -> Result<Manifest> {
    if split.database_idx != index.item_ids() {
        return Err(Error::invalid("split database differs from the indexed items"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let split_json = serde_json::to_vec_pretty(split)?;
    let split_art = put(dir, SPLIT_FILE.to_string(), &split_json)?;
    let mut views = Vec::with_capacity(index.num_views());
    for t in &index.tables {
        let v = t.view_id;
        views.push(ViewEntry {
            view_id: v,
            dim: t.dim(),
            bits: t.bits(),
            model: put(dir, format!("view{v}.model"), &t.hash_model.to_bytes())?,
            codes: put(dir, format!("view{v}.codes"), &t.codes.to_bytes())?,
            anchors: put(dir, format!("view{v}.anchors"), &t.anchors.to_bytes())?,
            independence: put(dir, format!("view{v}.indep"), &t.independence.to_bytes())?,
        });
    }
    let manifest = Manifest {
        version: BUNDLE_VERSION,
        params: *params,
        num_items: index.item_ids().len(),
        split: split_art,
        views,
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let bytes = read_file(&dir.join(MANIFEST_FILE))?;
    let m: Manifest = serde_json::from_slice(&bytes)?;
    if m.version != BUNDLE_VERSION {
        return Err(Error::Format(format!(
            "unsupported bundle version {} (expected {BUNDLE_VERSION})",
            m.version
        )));
    }
    Ok(m)
}

/// Load and verify a bundle written by [`save_index`].
pub fn load_index(dir: &Path) -> Result<(MultiTableIndex, DatasetSplit, Manifest)> {
    let manifest = load_manifest(dir)?;
    let split: DatasetSplit = serde_json::from_slice(&get(dir, &manifest.split)?)?;
    let mut tables = Vec::with_capacity(manifest.views.len());
    for v in &manifest.views {
        let named = |e: Error| match e {
            Error::Format(m) => Error::Format(format!("view {}: {m}", v.view_id)),
            other => other,
        };
        let hash_model = HashModel::from_bytes(&get(dir, &v.model)?).map_err(named)?;
        let codes = PackedCodes::from_bytes(&get(dir, &v.codes)?).map_err(named)?;
        let anchors = AnchorModel::from_bytes(&get(dir, &v.anchors)?).map_err(named)?;
        let independence =
            IndependenceMatrix::from_bytes(&get(dir, &v.independence)?).map_err(named)?;
        tables.push(HashTable::new(
            v.view_id,
            hash_model,
            codes,
            split.database_idx.clone(),
            anchors,
            independence,
        )?);
    }
    Ok((MultiTableIndex::new(tables)?, split, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::AnchorParams;
    use crate::dataset::{gen_synthetic, make_split, SyntheticSpec};

    fn small() -> (MultiTableIndex, DatasetSplit, BuildParams) {
        let ds = gen_synthetic(&SyntheticSpec {
            clusters: 3,
            per_cluster: 40,
            views: 2,
            dim: 8,
            noise: 0.5,
            seed: 9,
        })
        .unwrap();
        let split = make_split(ds.n(), 60, 10, 2).unwrap();
        let params = BuildParams {
            bits: 12,
            anchors: AnchorParams {
                num_anchors: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        (MultiTableIndex::build(&ds, &split, &params).unwrap(), split, params)
    }

    #[test]
    fn round_trip_and_deterministic_hashes() {
        let (index, split, params) = small();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ma = save_index(a.path(), &index, &split, &params).unwrap();
        let mb = save_index(b.path(), &index, &split, &params).unwrap();
        assert_eq!(ma, mb);
        let (loaded, lsplit, lm) = load_index(a.path()).unwrap();
        assert_eq!(loaded, index);
        assert_eq!(lsplit, split);
        assert_eq!(lm, ma);
    }

    #[test]
    fn corrupted_artifact_detected() {
        let (index, split, params) = small();
        let d = tempfile::tempdir().unwrap();
        let m = save_index(d.path(), &index, &split, &params).unwrap();
        let p = d.path().join(&m.views[1].codes.file);
        let mut bytes = std::fs::read(&p).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&p, bytes).unwrap();
        let err = load_index(d.path()).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }
}
