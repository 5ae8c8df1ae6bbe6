//! Plain-text key = value training configuration.

use cw_core::layer::ActivationReducer;
use cw_core::model::SlotVariant;
use cw_core::trainer::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    Mlp,
    Cnn,
}

/// Parsed configuration: the architecture/slot selection plus the trainer
/// settings. Model dimensions come from the data, not the config.
#[derive(Debug, Clone)]
pub struct Config {
    pub arch: ArchKind,
    pub train: TrainConfig,
}

impl Default for Config {
    fn default() -> Config {
        Config {
            arch: ArchKind::Mlp,
            train: TrainConfig::default(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| CliError::Config(format!("bad value '{}' for key '{}'", value, key)))
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut config = Config::default();
        let mut pool_size: usize = 2;
        let mut reducer_kind = String::from("maxpool_mean");
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("config line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "arch" => {
                    config.arch = match value {
                        "mlp" => ArchKind::Mlp,
                        "cnn" => ArchKind::Cnn,
                        other => {
                            return Err(CliError::Config(format!("unknown arch '{}'", other)))
                        }
                    }
                }
                "slot" => {
                    config.train.variant = match value {
                        "bn" => SlotVariant::Bn,
                        "cw" => SlotVariant::Cw,
                        "bn_aux" => SlotVariant::BnAux,
                        other => {
                            return Err(CliError::Config(format!("unknown slot '{}'", other)))
                        }
                    }
                }
                "cw_layer" => config.train.cw_index = parse_value(key, value)?,
                "reducer" => reducer_kind = value.to_string(),
                "pool_size" => pool_size = parse_value(key, value)?,
                "lr" => config.train.lr = parse_value(key, value)?,
                "momentum" => config.train.sgd_momentum = parse_value(key, value)?,
                "batch_size" => config.train.batch_size = parse_value(key, value)?,
                "epochs" => config.train.epochs = parse_value(key, value)?,
                "align_frequency" => config.train.align_frequency = parse_value(key, value)?,
                "beta" => config.train.beta = parse_value(key, value)?,
                "newton_iters" => config.train.newton_iters = parse_value(key, value)?,
                "eps" => config.train.eps = parse_value(key, value)?,
                "ema_momentum" => config.train.ema_momentum = parse_value(key, value)?,
                "seed" => config.train.seed = parse_value(key, value)?,
                // Optional extras beyond the core key set.
                "stop_gradient" => config.train.stop_gradient = parse_value(key, value)?,
                "align_batch_stats" => config.train.align_batch_stats = parse_value(key, value)?,
                "aux_weight" => config.train.aux_weight = parse_value(key, value)?,
                "aux_label_noise" => config.train.aux_label_noise = parse_value(key, value)?,
                "probe_samples" => config.train.probe_samples = parse_value(key, value)?,
                other => {
                    return Err(CliError::Config(format!(
                        "config line {}: unknown key '{}'",
                        lineno + 1,
                        other
                    )))
                }
            }
        }
        config.train.reducer = match reducer_kind.as_str() {
            "mean" => ActivationReducer::Mean,
            "max" => ActivationReducer::Max,
            "positive_mean" => ActivationReducer::PositiveMean,
            "maxpool_mean" => ActivationReducer::MaxpoolMean { pool: pool_size },
            other => return Err(CliError::Config(format!("unknown reducer '{}'", other))),
        };
        config
            .train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e)))?;
        Config::parse(&text)
    }

    /// Canonical key = value dump, echoed verbatim into checkpoints.
    pub fn canonical(&self) -> String {
        let t = &self.train;
        let (reducer, pool) = match t.reducer {
            ActivationReducer::Mean => ("mean", 2),
            ActivationReducer::Max => ("max", 2),
            ActivationReducer::PositiveMean => ("positive_mean", 2),
            ActivationReducer::MaxpoolMean { pool } => ("maxpool_mean", pool),
        };
        let arch = match self.arch {
            ArchKind::Mlp => "mlp",
            ArchKind::Cnn => "cnn",
        };
        let slot = match t.variant {
            SlotVariant::Bn => "bn",
            SlotVariant::Cw => "cw",
            SlotVariant::BnAux => "bn_aux",
        };
        format!(
            "arch = {arch}\nslot = {slot}\ncw_layer = {}\nreducer = {reducer}\npool_size = {pool}\n\
             lr = {}\nmomentum = {}\nbatch_size = {}\nepochs = {}\nalign_frequency = {}\n\
             beta = {}\nnewton_iters = {}\neps = {}\nema_momentum = {}\nseed = {}\n\
             stop_gradient = {}\nalign_batch_stats = {}\naux_weight = {}\naux_label_noise = {}\n\
             probe_samples = {}\n",
            t.cw_index,
            t.lr,
            t.sgd_momentum,
            t.batch_size,
            t.epochs,
            t.align_frequency,
            t.beta,
            t.newton_iters,
            t.eps,
            t.ema_momentum,
            t.seed,
            t.stop_gradient,
            t.align_batch_stats,
            t.aux_weight,
            t.aux_label_noise,
            t.probe_samples,
        )
    }
}
