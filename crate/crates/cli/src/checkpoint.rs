//! CWCK checkpoint container: architecture descriptor, every parameter
//! tensor, the normalization slots with their whitening/rotation state, the
//! training-step counter, and a canonical config echo. Loading reproduces
//! eval outputs bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cw_core::layer::{ActivationReducer, CwLayer};
use cw_core::model::{Arch, BatchNormState, Model, NormSlot, SlotVariant, Weights};
use cw_core::stiefel::RotationState;
use cw_core::whitening::{WhitenSolver, WhiteningState};
use cw_core::Tensor;

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"CWCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub steps: u64,
    pub config_echo: String,
}

// ── primitive writers/readers ────────────────────────────────────────

fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_string(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_u8(w, t.shape().len() as u8)?;
    for extent in t.shape() {
        write_u64(w, *extent as u64)?;
    }
    for v in t.data() {
        write_f64(w, *v)?;
    }
    Ok(())
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| CliError::Data(format!("bad utf-8 in checkpoint: {}", e)))
}

fn read_tensor(r: &mut impl Read, parameter: bool) -> Result<Tensor> {
    let ndim = read_u8(r)? as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(read_f64(r)?);
    }
    let tensor = if parameter {
        Tensor::parameter(&shape, data)
    } else {
        Tensor::from_vec(&shape, data)
    };
    tensor.map_err(CliError::from)
}

// ── slot state ───────────────────────────────────────────────────────

fn write_reducer(w: &mut impl Write, reducer: ActivationReducer) -> Result<()> {
    match reducer {
        ActivationReducer::Mean => write_u8(w, 0),
        ActivationReducer::Max => write_u8(w, 1),
        ActivationReducer::PositiveMean => write_u8(w, 2),
        ActivationReducer::MaxpoolMean { pool } => {
            write_u8(w, 3)?;
            write_u64(w, pool as u64)
        }
    }
}

fn read_reducer(r: &mut impl Read) -> Result<ActivationReducer> {
    Ok(match read_u8(r)? {
        0 => ActivationReducer::Mean,
        1 => ActivationReducer::Max,
        2 => ActivationReducer::PositiveMean,
        3 => ActivationReducer::MaxpoolMean {
            pool: read_u64(r)? as usize,
        },
        other => return Err(CliError::Data(format!("unknown reducer tag {}", other))),
    })
}

fn write_slot(w: &mut impl Write, slot: &NormSlot) -> Result<()> {
    match slot {
        NormSlot::Bn(bn) => {
            write_u8(w, 0)?;
            write_u64(w, bn.dim as u64)?;
            write_f64(w, bn.eps)?;
            write_f64(w, bn.momentum)?;
            write_tensor(w, &bn.gamma)?;
            write_tensor(w, &bn.beta)?;
            write_tensor(w, &bn.running_mean)?;
            write_tensor(w, &bn.running_var)?;
        }
        NormSlot::Cw(cw) => {
            write_u8(w, 1)?;
            let wh = &cw.whitening;
            write_u64(w, wh.dim as u64)?;
            write_f64(w, wh.eps)?;
            write_f64(w, wh.ema_momentum)?;
            write_u64(w, wh.newton_iters as u64)?;
            write_u8(w, if wh.solver == WhitenSolver::Exact { 0 } else { 1 })?;
            write_u8(w, u8::from(wh.stop_gradient))?;
            write_tensor(w, &wh.batch_mean)?;
            write_tensor(w, &wh.batch_whitener)?;
            write_tensor(w, &wh.running_mean)?;
            write_tensor(w, &wh.running_whitener)?;
            write_tensor(w, &cw.rotation.q)?;
            write_tensor(w, &cw.rotation.grad_momentum)?;
            write_f64(w, cw.rotation.beta)?;
            write_u64(w, cw.rotation.concept_axes as u64)?;
            write_reducer(w, cw.reducer)?;
        }
    }
    Ok(())
}

fn read_slot(r: &mut impl Read) -> Result<NormSlot> {
    match read_u8(r)? {
        0 => {
            let dim = read_u64(r)? as usize;
            let eps = read_f64(r)?;
            let momentum = read_f64(r)?;
            let gamma = read_tensor(r, true)?;
            let beta = read_tensor(r, true)?;
            let running_mean = read_tensor(r, false)?;
            let running_var = read_tensor(r, false)?;
            Ok(NormSlot::Bn(BatchNormState {
                dim,
                eps,
                momentum,
                gamma,
                beta,
                running_mean,
                running_var,
            }))
        }
        1 => {
            let dim = read_u64(r)? as usize;
            let eps = read_f64(r)?;
            let ema_momentum = read_f64(r)?;
            let newton_iters = read_u64(r)? as usize;
            let solver = if read_u8(r)? == 0 {
                WhitenSolver::Exact
            } else {
                WhitenSolver::Newton
            };
            let stop_gradient = read_u8(r)? != 0;
            let batch_mean = read_tensor(r, false)?;
            let batch_whitener = read_tensor(r, false)?;
            let running_mean = read_tensor(r, false)?;
            let running_whitener = read_tensor(r, false)?;
            let mut whitening = WhiteningState::new(dim)
                .with_eps(eps)
                .with_momentum(ema_momentum)
                .with_newton_iters(newton_iters)
                .with_solver(solver)
                .with_stop_gradient(stop_gradient);
            whitening.batch_mean = batch_mean;
            whitening.batch_whitener = batch_whitener;
            whitening.running_mean = running_mean;
            whitening.running_whitener = running_whitener;

            let q = read_tensor(r, false)?;
            let grad_momentum = read_tensor(r, false)?;
            let beta = read_f64(r)?;
            let concept_axes = read_u64(r)? as usize;
            let mut rotation = RotationState::identity(dim, concept_axes)?;
            rotation.q = q;
            rotation.grad_momentum = grad_momentum;
            rotation.beta = beta;
            let reducer = read_reducer(r)?;
            Ok(NormSlot::Cw(CwLayer {
                whitening,
                rotation,
                reducer,
            }))
        }
        other => Err(CliError::Data(format!("unknown slot tag {}", other))),
    }
}

// ── checkpoint ───────────────────────────────────────────────────────

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    match checkpoint.model.arch {
        Arch::Mlp {
            input_dim,
            hidden,
            classes,
        } => {
            write_u8(&mut w, 0)?;
            write_u64(&mut w, input_dim as u64)?;
            write_u64(&mut w, hidden as u64)?;
            write_u64(&mut w, classes as u64)?;
        }
        Arch::Cnn {
            in_channels,
            side,
            classes,
        } => {
            write_u8(&mut w, 1)?;
            write_u64(&mut w, in_channels as u64)?;
            write_u64(&mut w, side as u64)?;
            write_u64(&mut w, classes as u64)?;
        }
    }
    write_u8(
        &mut w,
        match checkpoint.model.variant {
            SlotVariant::Bn => 0,
            SlotVariant::Cw => 1,
            SlotVariant::BnAux => 2,
        },
    )?;
    write_u64(&mut w, checkpoint.model.cw_index as u64)?;
    write_u64(&mut w, checkpoint.steps)?;
    write_string(&mut w, &checkpoint.config_echo)?;

    let named = checkpoint.model.weights.named();
    write_u32(&mut w, named.len() as u32)?;
    for (name, tensor) in named {
        write_string(&mut w, name)?;
        write_tensor(&mut w, tensor)?;
    }
    write_u32(&mut w, checkpoint.model.slots.len() as u32)?;
    for slot in &checkpoint.model.slots {
        write_slot(&mut w, slot)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(
        File::open(path).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?,
    );
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::Data(format!(
            "{}: not a CWCK checkpoint",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported checkpoint version {}",
            path.display(),
            version
        )));
    }
    let arch = match read_u8(&mut r)? {
        0 => Arch::Mlp {
            input_dim: read_u64(&mut r)? as usize,
            hidden: read_u64(&mut r)? as usize,
            classes: read_u64(&mut r)? as usize,
        },
        1 => Arch::Cnn {
            in_channels: read_u64(&mut r)? as usize,
            side: read_u64(&mut r)? as usize,
            classes: read_u64(&mut r)? as usize,
        },
        other => return Err(CliError::Data(format!("unknown arch tag {}", other))),
    };
    let variant = match read_u8(&mut r)? {
        0 => SlotVariant::Bn,
        1 => SlotVariant::Cw,
        2 => SlotVariant::BnAux,
        other => return Err(CliError::Data(format!("unknown variant tag {}", other))),
    };
    let cw_index = read_u64(&mut r)? as usize;
    let steps = read_u64(&mut r)?;
    let config_echo = read_string(&mut r)?;

    let n_weights = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(n_weights);
    for _ in 0..n_weights {
        let name = read_string(&mut r)?;
        let tensor = read_tensor(&mut r, true)?;
        tensors.push((name, tensor));
    }
    let weights = build_weights(&arch, tensors)?;

    let n_slots = read_u32(&mut r)? as usize;
    let mut slots = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        slots.push(read_slot(&mut r)?);
    }

    Ok(Checkpoint {
        model: Model {
            arch,
            variant,
            cw_index,
            weights,
            slots,
        },
        steps,
        config_echo,
    })
}

fn build_weights(arch: &Arch, tensors: Vec<(String, Tensor)>) -> Result<Weights> {
    let find = |name: &str| -> Result<Tensor> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| CliError::Data(format!("checkpoint missing weight '{}'", name)))
    };
    Ok(match arch {
        Arch::Mlp { .. } => Weights::Mlp {
            w1: find("w1")?,
            b1: find("b1")?,
            w2: find("w2")?,
            b2: find("b2")?,
            w3: find("w3")?,
            b3: find("b3")?,
        },
        Arch::Cnn { .. } => Weights::Cnn {
            k1: find("k1")?,
            cb1: find("cb1")?,
            k2: find("k2")?,
            cb2: find("cb2")?,
            w: find("w")?,
            b: find("b")?,
        },
    })
}
