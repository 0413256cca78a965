//! Run configuration: one flat JSON object, every key optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anchors::{AnchorMethod, AnchorParams, DEFAULT_NUM_ANCHORS, DEFAULT_S_NN};
use crate::dataset::{SyntheticSpec, VectorFormat};
use crate::error::{Error, Result};
use crate::fusion::{
    QsrfParams, DEFAULT_ALPHA, DEFAULT_RESTART_MASS, DEFAULT_WALK_ITERS, DEFAULT_WALK_TOL,
};
use crate::hashing::{HashFamily, DEFAULT_ITQ_ITERS};
use crate::index::BuildParams;
use crate::qrank::{
    QRankParams, DEFAULT_CALIBRATION_ITERS, DEFAULT_CALIBRATION_TOL, DEFAULT_GAMMA,
    DEFAULT_LAMBDA, DEFAULT_NEIGHBORS, DEFAULT_TOP_N,
};

/// Supported code lengths for the standard protocol.
pub const BIT_PRESETS: [usize; 2] = [48, 96];
pub const DEFAULT_BITS: usize = BIT_PRESETS[0];
pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_N_TRAIN: usize = 5000;
pub const DEFAULT_N_QUERY: usize = 3000;
pub const DEFAULT_EVAL_KS: [usize; 3] = [5, 10, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSource {
    pub path: PathBuf,
    /// Guessed from the extension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<VectorFormat>,
}

impl ViewSource {
    pub fn format(&self) -> VectorFormat {
        self.format.unwrap_or_else(|| VectorFormat::from_path(&self.path))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub views: Vec<ViewSource>,
    pub labels: Option<PathBuf>,
    pub output: PathBuf,

    pub bits: usize,
    pub family: HashFamily,
    pub itq_iters: usize,

    pub anchors: usize,
    pub anchor_method: AnchorMethod,
    pub s_nn: usize,

    pub neighbors: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub calibrate: bool,
    pub calibration_tol: f64,
    pub calibration_max_iters: usize,

    pub alpha: f64,
    pub restart: f64,
    pub top_n: usize,
    pub walk_tol: f64,
    pub walk_max_iters: usize,

    pub n_train: usize,
    pub n_query: usize,
    pub seed: u64,
    pub runs: usize,
    pub eval_ks: Vec<usize>,

    pub synth_clusters: usize,
    pub synth_per_cluster: usize,
    pub synth_views: usize,
    pub synth_dim: usize,
    pub synth_noise: f64,
    /// When set, `synth` makes each view reliable only on its own share of
    /// the clusters and applies this noise level to the rest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth_complementary_noise: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        Self {
            views: Vec::new(),
            labels: None,
            output: PathBuf::from("out"),
            bits: DEFAULT_BITS,
            family: HashFamily::Lsh,
            itq_iters: DEFAULT_ITQ_ITERS,
            anchors: DEFAULT_NUM_ANCHORS,
            anchor_method: AnchorMethod::Random,
            s_nn: DEFAULT_S_NN,
            neighbors: DEFAULT_NEIGHBORS,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            calibrate: true,
            calibration_tol: DEFAULT_CALIBRATION_TOL,
            calibration_max_iters: DEFAULT_CALIBRATION_ITERS,
            alpha: DEFAULT_ALPHA,
            restart: DEFAULT_RESTART_MASS,
            top_n: DEFAULT_TOP_N,
            walk_tol: DEFAULT_WALK_TOL,
            walk_max_iters: DEFAULT_WALK_ITERS,
            n_train: DEFAULT_N_TRAIN,
            n_query: DEFAULT_N_QUERY,
            seed: 0,
            runs: DEFAULT_RUNS,
            eval_ks: DEFAULT_EVAL_KS.to_vec(),
            synth_clusters: synth.clusters,
            synth_per_cluster: synth.per_cluster,
            synth_views: synth.views,
            synth_dim: synth.dim,
            synth_noise: synth.noise,
            synth_complementary_noise: None,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn at_least_one(name: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be at least 1")))
    }
}

impl RunConfig {
    /// Read a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for v in &mut self.views {
            fix(&mut v.path);
        }
        if let Some(l) = &mut self.labels {
            fix(l);
        }
        fix(&mut self.output);
    }

    /// Range checks for every numeric parameter. Views are not required
    /// here since `synth` runs without them.
    pub fn validate(&self) -> Result<()> {
        at_least_one("bits", self.bits)?;
        at_least_one("anchors", self.anchors)?;
        at_least_one("s_nn", self.s_nn)?;
        if self.s_nn > self.anchors {
            return Err(Error::invalid(format!(
                "s_nn ({}) exceeds the number of anchors ({})",
                self.s_nn, self.anchors
            )));
        }
        at_least_one("neighbors", self.neighbors)?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        positive("lambda", self.lambda)?;
        positive("calibration_tol", self.calibration_tol)?;
        at_least_one("calibration_max_iters", self.calibration_max_iters)?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.restart) {
            return Err(Error::invalid(format!("restart must lie in [0, 1], got {}", self.restart)));
        }
        at_least_one("top_n", self.top_n)?;
        positive("walk_tol", self.walk_tol)?;
        at_least_one("walk_max_iters", self.walk_max_iters)?;
        at_least_one("n_train", self.n_train)?;
        at_least_one("n_query", self.n_query)?;
        at_least_one("runs", self.runs)?;
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::invalid("eval_ks must be a non-empty list of positive cutoffs"));
        }
        at_least_one("synth_clusters", self.synth_clusters)?;
        at_least_one("synth_per_cluster", self.synth_per_cluster)?;
        at_least_one("synth_views", self.synth_views)?;
        at_least_one("synth_dim", self.synth_dim)?;
        if !(self.synth_noise >= 0.0 && self.synth_noise.is_finite()) {
            return Err(Error::invalid("synth_noise must be >= 0"));
        }
        if let Some(h) = self.synth_complementary_noise {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(Error::invalid("synth_complementary_noise must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn build_params(&self) -> BuildParams {
        BuildParams {
            family: self.family,
            bits: self.bits,
            itq_iters: self.itq_iters,
            anchors: AnchorParams {
                num_anchors: self.anchors,
                method: self.anchor_method,
                s_nn: self.s_nn,
            },
            lambda: self.lambda,
            seed: self.seed,
        }
    }

    pub fn qrank_params(&self) -> QRankParams {
        QRankParams {
            gamma: self.gamma,
            neighbors: self.neighbors,
            tol: self.calibration_tol,
            max_iters: self.calibration_max_iters,
            calibrate: self.calibrate,
        }
    }

    pub fn qsrf_params(&self) -> QsrfParams {
        QsrfParams {
            qrank: self.qrank_params(),
            top_n: self.top_n,
            alpha: self.alpha,
            restart_mass: self.restart,
            walk_tol: self.walk_tol,
            walk_max_iters: self.walk_max_iters,
        }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            clusters: self.synth_clusters,
            per_cluster: self.synth_per_cluster,
            views: self.synth_views,
            dim: self.synth_dim,
            noise: self.synth_noise,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!(c.anchors, 300);
        assert_eq!(c.top_n, 1000);
        assert_eq!(c.restart, 0.99);
        assert!(c.alpha > 0.8 && c.alpha < 1.0);
        assert!(BIT_PRESETS.contains(&c.bits));
        assert_eq!(BIT_PRESETS, [48, 96]);
        assert_eq!(c.runs, 10);
        assert_eq!((c.n_train, c.n_query), (5000, 3000));
        assert_eq!(c.synth_clusters * c.synth_per_cluster, 2000);
        assert_eq!(c.synth_views, 2);
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"bits": 96, "views": [{"path": "v0.bin"}], "labels": "l.txt"}"#).unwrap();
        let c = RunConfig::load(&p).unwrap();
        assert_eq!(c.bits, 96);
        assert_eq!(c.anchors, 300);
        assert_eq!(c.views[0].path, dir.path().join("v0.bin"));
        assert_eq!(c.views[0].format(), VectorFormat::BinaryF32);
        assert_eq!(c.labels.as_deref(), Some(dir.path().join("l.txt").as_path()));

        std::fs::write(&p, r#"{"bitz": 96}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }

    #[test]
    fn validation_rejects_out_of_range() {
        for c in [
            RunConfig { alpha: 1.0, ..Default::default() },
            RunConfig { restart: 1.5, ..Default::default() },
            RunConfig { s_nn: 400, ..Default::default() },
            RunConfig { eval_ks: vec![0], ..Default::default() },
            RunConfig { lambda: 0.0, ..Default::default() },
            RunConfig { gamma: -1.0, ..Default::default() },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
