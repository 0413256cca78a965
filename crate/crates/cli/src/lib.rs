//! Command-line front end: `synth`, `build`, `query` and `eval`.
//!
//! Every command reads an optional JSON [`RunConfig`] and applies the
//! command-line overrides on top. Data goes to stdout or output files,
//! diagnostics to stderr.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mvhash_core::anchors::AnchorMethod;
use mvhash_core::config::{RunConfig, ViewSource};
use mvhash_core::dataset::{load_labels, load_vectors, MultiViewDataset};
use mvhash_core::hashing::HashFamily;

pub mod eval;
pub mod query;
pub mod synth;

#[derive(Debug, Parser)]
#[command(name = "mvhash", version, about = "Multi-view hashing search with query-adaptive ranking and rank fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-view dataset and a config pointing at it.
    Synth(SynthArgs),
    /// Train hash functions and anchors per view and write an index bundle.
    Build(BuildArgs),
    /// Rank database items for query vectors.
    Query(QueryArgs),
    /// Run the retrieval protocol and write metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hamming,
    Qrank,
    Qsrf,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Hamming => "hamming",
            Mode::Qrank => "qrank",
            Mode::Qsrf => "qsrf",
        }
    }
}

/// Flags that override keys of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file; missing keys take their defaults.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    /// Vector file of one view; repeat in view order.
    #[arg(long = "view")]
    pub views: Vec<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub bits: Option<usize>,
    #[arg(long)]
    pub family: Option<HashFamily>,
    #[arg(long)]
    pub itq_iters: Option<usize>,
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long)]
    pub anchor_method: Option<AnchorMethod>,
    #[arg(long)]
    pub s_nn: Option<usize>,
    /// Anchor neighbors used for query-adaptive weights (L).
    #[arg(long)]
    pub neighbors: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Use the raw query-adaptive weights without calibration.
    #[arg(long)]
    pub no_calibrate: bool,
    #[arg(long)]
    pub calibration_tol: Option<f64>,
    #[arg(long)]
    pub calibration_max_iters: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub restart: Option<f64>,
    /// Candidates taken per table (N_k).
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long)]
    pub walk_tol: Option<f64>,
    #[arg(long)]
    pub walk_max_iters: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_query: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Cutoffs for precision, recall and AP, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub eval_ks: Option<Vec<usize>>,
}

macro_rules! set {
    ($cfg:ident, $o:ident, $($f:ident),*) => {
        $(if let Some(v) = $o.$f.clone() { $cfg.$f = v; })*
    };
}

impl Overrides {
    /// Config file (or defaults) with the flags applied and validated.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        if !self.views.is_empty() {
            cfg.views = self
                .views
                .iter()
                .map(|p| ViewSource { path: p.clone(), format: None })
                .collect();
        }
        if let Some(l) = &self.labels {
            cfg.labels = Some(l.clone());
        }
        if let Some(o) = &self.output {
            cfg.output = o.clone();
        }
        set!(
            cfg, self, bits, family, itq_iters, anchors, anchor_method, s_nn, neighbors, gamma,
            lambda, calibration_tol, calibration_max_iters, alpha, restart, top_n, walk_tol,
            walk_max_iters, n_train, n_query, seed, runs, eval_ks
        );
        if self.no_calibrate {
            cfg.calibrate = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long)]
    pub per_cluster: Option<usize>,
    #[arg(long = "views")]
    pub num_views: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Give each view low noise on its own share of the clusters only.
    #[arg(long)]
    pub complementary_noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: Overrides,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Index bundle directory; defaults to the configured output.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Query vectors of one view, one query per row; repeat in view order.
    #[arg(long = "query", required = true)]
    pub queries: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "qsrf")]
    pub mode: Mode,
    #[arg(long, short = 'k', default_value_t = 10)]
    pub k: usize,
    /// Table used by the single-view modes.
    #[arg(long = "table", default_value_t = 0)]
    pub table: usize,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Evaluate this bundle once instead of rebuilding per run.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hamming,qrank,qsrf")]
    pub modes: Vec<Mode>,
    /// Evaluate qsrf even with a single view.
    #[arg(long)]
    pub force_qsrf: bool,
    /// Table used by the single-view modes.
    #[arg(long = "table", default_value_t = 0)]
    pub table: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth::run(&a),
        Command::Build(a) => build(&a),
        Command::Query(a) => query::run(&a),
        Command::Eval(a) => eval::run(&a),
    }
}

/// Load every configured view and the labels, if any.
pub fn load_dataset(cfg: &RunConfig, need_labels: bool) -> Result<MultiViewDataset> {
    if cfg.views.is_empty() {
        bail!("no views configured; pass --view or a config with \"views\"");
    }
    let mut views = Vec::with_capacity(cfg.views.len());
    for (m, v) in cfg.views.iter().enumerate() {
        views.push(
            load_vectors(&v.path, v.format(), m)
                .with_context(|| format!("view {m}: loading {}", v.path.display()))?,
        );
    }
    let labels = match &cfg.labels {
        Some(p) => Some(load_labels(p).with_context(|| format!("loading labels {}", p.display()))?),
        None if need_labels => bail!("labels are required; pass --labels or set \"labels\""),
        None => None,
    };
    Ok(MultiViewDataset::new(views, labels)?)
}

fn build(args: &BuildArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let ds = load_dataset(&cfg, false)?;
    let (index, split) = build_index(&cfg, &ds, cfg.seed)?;
    let manifest = mvhash_core::bundle::save_index(&cfg.output, &index, &split, &cfg.build_params())
        .with_context(|| format!("writing bundle {}", cfg.output.display()))?;
    log::info!(
        "indexed {} items in {} tables ({} bits) into {}",
        manifest.num_items,
        manifest.views.len(),
        cfg.bits,
        cfg.output.display()
    );
    println!("{}", cfg.output.display());
    Ok(())
}

/// Protocol split plus one hash table per view, all seeded by `seed`.
pub fn build_index(
    cfg: &RunConfig,
    ds: &MultiViewDataset,
    seed: u64,
) -> Result<(mvhash_core::index::MultiTableIndex, mvhash_core::dataset::DatasetSplit)> {
    let split = mvhash_core::dataset::make_split(ds.n(), cfg.n_train, cfg.n_query, seed)?;
    let params = mvhash_core::index::BuildParams {
        seed,
        ..cfg.build_params()
    };
    let index = mvhash_core::index::MultiTableIndex::build(ds, &split, &params)?;
    Ok((index, split))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
