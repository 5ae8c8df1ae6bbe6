//! `cw gen`: write a synthetic task to disk as tensor files, label CSVs, and
//! a manifest.

use std::path::Path;

use cw_core::synth::{make_synthetic, SyntheticSpec};

use crate::error::{CliError, Result};
use crate::logging::info;
use crate::manifest::write_labels;
use crate::tensorfile::{write_tensor, Dtype};

#[derive(Debug, Clone, clap::Args)]
pub struct GenArgs {
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: std::path::PathBuf,
    /// Preset: the reference classification or importance benchmark.
    #[arg(long, value_parser = ["classification", "importance"])]
    pub benchmark: Option<String>,
    /// Data flavor when not using a preset.
    #[arg(long, default_value = "vector", value_parser = ["vector", "image"])]
    pub kind: String,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 2)]
    pub concepts: usize,
    /// Vector input dimension.
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Image channels and side.
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 16)]
    pub side: usize,
    #[arg(long = "train-n", default_value_t = 2048)]
    pub train_n: usize,
    #[arg(long = "eval-n", default_value_t = 512)]
    pub eval_n: usize,
    #[arg(long = "concept-n", default_value_t = 256)]
    pub concept_n: usize,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(args: &GenArgs) -> Result<()> {
    let (spec, seed) = match args.benchmark.as_deref() {
        Some("classification") => (
            SyntheticSpec::benchmark_classification(),
            cw_core::synth::BENCHMARK_SEED,
        ),
        Some("importance") => (
            SyntheticSpec::benchmark_importance(),
            cw_core::synth::IMPORTANCE_SEED,
        ),
        Some(other) => return Err(CliError::Config(format!("unknown benchmark '{}'", other))),
        None => {
            let mut spec = match args.kind.as_str() {
                "vector" => SyntheticSpec::vector(args.classes, args.concepts, args.dim),
                "image" => {
                    SyntheticSpec::image(args.classes, args.concepts, args.channels, args.side)
                }
                other => return Err(CliError::Config(format!("unknown kind '{}'", other))),
            };
            spec.train_n = args.train_n;
            spec.eval_n = args.eval_n;
            spec.concept_n = args.concept_n;
            spec.noise = args.noise;
            (spec, args.seed)
        }
    };

    let synth = make_synthetic(&spec, seed).map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&args.out)?;
    write_split(&args.out, "train", &synth.train)?;
    write_split(&args.out, "eval", &synth.eval)?;

    let mut manifest = String::new();
    manifest.push_str("main = train.cwt\nlabels = train_labels.csv\n");
    manifest.push_str("eval = eval.cwt\neval_labels = eval_labels.csv\n");
    for set in &synth.bank.concepts {
        let file = format!("concept_{}.cwt", set.name);
        write_tensor(&args.out.join(&file), &set.samples, Dtype::F64)?;
        manifest.push_str(&format!("concept = {}, {}, {}\n", set.name, set.axis, file));
    }
    std::fs::write(args.out.join("manifest.txt"), manifest)?;
    info!(
        "generated {} train / {} eval samples, {} concept sets -> {}",
        synth.train.len(),
        synth.eval.len(),
        synth.bank.len(),
        args.out.display()
    );
    Ok(())
}

fn write_split(dir: &Path, name: &str, dataset: &cw_core::synth::Dataset) -> Result<()> {
    write_tensor(&dir.join(format!("{}.cwt", name)), &dataset.inputs, Dtype::F64)?;
    write_labels(&dir.join(format!("{}_labels.csv", name)), &dataset.labels)
}
