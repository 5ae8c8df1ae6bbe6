//! `cw train`: alternating optimization from a config and manifest, emitting
//! a checkpoint plus the per-step history CSV.

use std::path::PathBuf;

use cw_core::model::{Arch, Model, SlotVariant};
use cw_core::trainer::{fit, History};

use crate::checkpoint::{save, Checkpoint};
use crate::commands::{class_count, load_data};
use crate::config::{ArchKind, Config};
use crate::error::{CliError, Result};
use crate::logging::info;
use crate::manifest::Manifest;

#[derive(Debug, Clone, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV path; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

/// Architecture from the config kind plus data-derived dimensions.
pub fn resolve_arch(kind: ArchKind, inputs: &cw_core::Tensor, classes: usize) -> Result<Arch> {
    match (kind, inputs.shape()) {
        (ArchKind::Mlp, [d, _]) => Ok(Arch::Mlp {
            input_dim: *d,
            hidden: 32,
            classes,
        }),
        (ArchKind::Cnn, [_, c, h, w]) => {
            if h != w {
                return Err(CliError::Data(format!(
                    "CNN expects square images, got {}x{}",
                    h, w
                )));
            }
            Ok(Arch::Cnn {
                in_channels: *c,
                side: *h,
                classes,
            })
        }
        (ArchKind::Mlp, s) => Err(CliError::Data(format!(
            "mlp arch expects rank-2 inputs, got {:?}",
            s
        ))),
        (ArchKind::Cnn, s) => Err(CliError::Data(format!(
            "cnn arch expects rank-4 inputs, got {:?}",
            s
        ))),
    }
}

pub fn write_history_csv(path: &std::path::Path, history: &History) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["step", "main_loss", "align_objective", "orthogonality_error"])?;
    for row in &history.rows {
        let align = row
            .align_objective
            .map(|v| v.to_string())
            .unwrap_or_default();
        writer.write_record([
            row.step.to_string(),
            row.main_loss.to_string(),
            align,
            row.orthogonality_error.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn run(args: &TrainArgs) -> Result<()> {
    let config = Config::load(&args.config)?;
    let manifest = Manifest::load(&args.manifest)?;
    let data = load_data(&manifest)?;
    if config.train.variant != SlotVariant::Bn && data.bank.is_empty() {
        return Err(CliError::Config(
            "cw and bn_aux variants need concept entries in the manifest".into(),
        ));
    }
    let classes = class_count(&data.train.labels)?;
    let arch = resolve_arch(config.arch, &data.train.inputs, classes)?;
    let mut model = Model::new(
        arch,
        config.train.variant,
        config.train.cw_index,
        data.bank.len(),
        config.train.reducer,
        config.train.seed,
    )
    .map_err(CliError::from)?;

    info!(
        "training {:?} ({:?}) on {} samples, {} concepts",
        config.train.variant,
        arch,
        data.train.len(),
        data.bank.len()
    );
    let history = fit(&mut model, &data.train, &data.bank, &config.train)?;
    let steps = history.rows.len() as u64;

    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| history_default_path(&args.out));
    write_history_csv(&history_path, &history)?;

    save(
        &args.out,
        &Checkpoint {
            model,
            steps,
            config_echo: config.canonical(),
        },
    )?;
    info!(
        "wrote checkpoint {} and history {}",
        args.out.display(),
        history_path.display()
    );
    Ok(())
}

pub fn history_default_path(out: &std::path::Path) -> PathBuf {
    let mut os = out.as_os_str().to_owned();
    os.push(".history.csv");
    PathBuf::from(os)
}
