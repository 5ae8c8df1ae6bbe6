//! `cw swap-bn`: replace a trained BN slot with a calibrated CW layer.

use std::path::PathBuf;

use cw_core::model::swap_bn_for_cw;

use crate::checkpoint::{load, save, Checkpoint};
use crate::commands::load_data;
use crate::error::{CliError, Result};
use crate::logging::info;
use crate::manifest::Manifest;

#[derive(Debug, Clone, clap::Args)]
pub struct SwapArgs {
    /// Input checkpoint.
    #[arg(long)]
    pub input: PathBuf,
    /// Slot index whose BN layer is replaced.
    #[arg(long)]
    pub layer: usize,
    /// Manifest providing the calibration data (its main split).
    #[arg(long)]
    pub calibration: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Covariance ridge used for the calibration whitener.
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    /// Samples drawn from the calibration split.
    #[arg(long, default_value_t = 2048)]
    pub samples: usize,
    #[arg(long = "ema-momentum", default_value_t = 0.97)]
    pub ema_momentum: f64,
    #[arg(long = "newton-iters", default_value_t = 6)]
    pub newton_iters: usize,
}

pub fn run(args: &SwapArgs) -> Result<()> {
    let checkpoint = load(&args.input)?;
    let manifest = Manifest::load(&args.calibration)?;
    let data = load_data(&manifest)?;
    let take = args.samples.min(data.train.len());
    let calibration = data
        .train
        .batch(&(0..take).collect::<Vec<_>>())
        .map_err(CliError::from)?;
    let concepts = data.bank.len().max(1);
    let reducer = checkpoint
        .model
        .cw_layer()
        .map(|cw| cw.reducer)
        .unwrap_or(cw_core::layer::ActivationReducer::MaxpoolMean { pool: 2 });
    let swapped = swap_bn_for_cw(
        &checkpoint.model,
        args.layer,
        &calibration,
        concepts,
        reducer,
        args.eps,
        args.ema_momentum,
        args.newton_iters,
    )?;
    save(
        &args.out,
        &Checkpoint {
            model: swapped,
            steps: checkpoint.steps,
            config_echo: checkpoint.config_echo,
        },
    )?;
    info!(
        "swapped BN slot {} for CW (calibrated on {} samples) -> {}",
        args.layer,
        take,
        args.out.display()
    );
    Ok(())
}
