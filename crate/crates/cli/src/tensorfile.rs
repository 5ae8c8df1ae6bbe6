//! CWT1 tensor container: magic "CWT1", u32 version, u8 dtype (0 = f64 LE,
//! 1 = f32 LE), u8 ndim, ndim×u64 extents, raw row-major payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use cw_core::Tensor;

use crate::error::{CliError, Result};

const MAGIC: &[u8; 4] = b"CWT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64 = 0,
    F32 = 1,
}

pub fn write_tensor(path: &Path, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[dtype as u8])?;
    let shape = tensor.shape();
    if shape.len() > u8::MAX as usize {
        return Err(CliError::Data(format!("rank {} too large", shape.len())));
    }
    out.write_all(&[shape.len() as u8])?;
    for extent in shape {
        out.write_all(&(*extent as u64).to_le_bytes())?;
    }
    match dtype {
        Dtype::F64 => {
            for v in tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Dtype::F32 => {
            for v in tensor.data() {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut input = BufReader::new(
        File::open(path).map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?,
    );
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::Data(format!(
            "{}: not a CWT1 tensor file",
            path.display()
        )));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported version {}",
            path.display(),
            version
        )));
    }
    let mut byte = [0u8; 1];
    input.read_exact(&mut byte)?;
    let dtype = match byte[0] {
        0 => Dtype::F64,
        1 => Dtype::F32,
        other => {
            return Err(CliError::Data(format!(
                "{}: unknown dtype {}",
                path.display(),
                other
            )))
        }
    };
    input.read_exact(&mut byte)?;
    let ndim = byte[0] as usize;
    let mut shape = Vec::with_capacity(ndim);
    let mut extent = [0u8; 8];
    for _ in 0..ndim {
        input.read_exact(&mut extent)?;
        shape.push(u64::from_le_bytes(extent) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    match dtype {
        Dtype::F64 => {
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
        }
        Dtype::F32 => {
            let mut buf = [0u8; 4];
            for _ in 0..numel {
                input.read_exact(&mut buf)?;
                data.push(f32::from_le_bytes(buf) as f64);
            }
        }
    }
    // Trailing bytes mean a corrupt payload length.
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(CliError::Data(format!(
            "{}: payload longer than header implies",
            path.display()
        )));
    }
    Tensor::from_vec(&shape, data).map_err(CliError::from)
}
