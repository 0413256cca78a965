use std::path::PathBuf;

use anyhow::{Context, Result};

use mvhash_core::config::ViewSource;
use mvhash_core::dataset::{
    gen_synthetic, gen_synthetic_complementary, save_labels, save_vectors, VectorFormat,
};

use crate::SynthArgs;

pub const CONFIG_FILE: &str = "config.json";
pub const LABELS_FILE: &str = "labels.txt";

/// Writes `view{m}.bin`, `labels.txt` and a `config.json` whose paths are
/// relative to the output directory, so the directory can be moved as a
/// whole. Prints the config path.
pub fn run(args: &SynthArgs) -> Result<()> {
    let mut cfg = args.common.resolve()?;
    if let Some(v) = args.clusters {
        cfg.synth_clusters = v;
    }
    if let Some(v) = args.per_cluster {
        cfg.synth_per_cluster = v;
    }
    if let Some(v) = args.num_views {
        cfg.synth_views = v;
    }
    if let Some(v) = args.dim {
        cfg.synth_dim = v;
    }
    if let Some(v) = args.noise {
        cfg.synth_noise = v;
    }
    if args.complementary_noise.is_some() {
        cfg.synth_complementary_noise = args.complementary_noise;
    }
    cfg.validate()?;

    let spec = cfg.synthetic_spec();
    let ds = match cfg.synth_complementary_noise {
        Some(h) => gen_synthetic_complementary(&spec, h)?,
        None => gen_synthetic(&spec)?,
    };
    let dir = cfg.output.clone();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut views = Vec::with_capacity(ds.num_views());
    for v in ds.views() {
        let name = format!("view{}.bin", v.view_id);
        save_vectors(v, &dir.join(&name), VectorFormat::BinaryF32)?;
        views.push(ViewSource {
            path: PathBuf::from(name),
            format: Some(VectorFormat::BinaryF32),
        });
    }
    if let Some(labels) = ds.labels() {
        save_labels(labels, &dir.join(LABELS_FILE))?;
    }

    // The standard split sizes assume a larger collection than the default
    // synthetic one; shrink them to 50% training and 10% queries when they
    // do not fit.
    let n = ds.n();
    if cfg.n_train + cfg.n_query > n {
        cfg.n_train = (n / 2).max(1);
        cfg.n_query = (n / 10).max(1);
        log::info!("split sizes scaled to n_train={} n_query={}", cfg.n_train, cfg.n_query);
    }
    cfg.views = views;
    cfg.labels = Some(PathBuf::from(LABELS_FILE));
    cfg.output = PathBuf::from("index");
    cfg.validate()?;
    let path = dir.join(CONFIG_FILE);
    cfg.save(&path)?;
    log::info!(
        "wrote {} items x {} views ({} dims) to {}",
        n,
        ds.num_views(),
        cfg.synth_dim,
        dir.display()
    );
    println!("{}", path.display());
    Ok(())
}
