//! Binary checkpoint format.
//!
//! ```text
//! magic        b"ENSD"
//! version      u32 LE
//! sample_dim   u32 LE
//! embed_dim    u32 LE
//! num_hidden   u32 LE
//! hidden[i]    u32 LE, num_hidden entries
//! per layer, input layer first:
//!   weights    f32 LE, outputs × inputs row-major
//!   bias       f32 LE, outputs
//! ```

use std::io::{Read, Write};

use super::mlp::{Architecture, DenoiserParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ENSD";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(params: &DenoiserParams, mut out: W) -> Result<()> {
    let arch = &params.arch;
    out.write_all(MAGIC)?;
    let header = [
        FORMAT_VERSION,
        arch.sample_dim as u32,
        arch.embed_dim as u32,
        arch.hidden.len() as u32,
    ];
    for v in header.iter().chain(arch.hidden.iter().map(|&h| h as u32).collect::<Vec<_>>().iter()) {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in params.flat() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn to_bytes(params: &DenoiserParams) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + params.num_params() * 4);
    write_checkpoint(params, &mut buf).expect("writing to a Vec cannot fail");
    buf
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<DenoiserParams> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let sample_dim = read_u32(&mut input)? as usize;
    let embed_dim = read_u32(&mut input)? as usize;
    let num_hidden = read_u32(&mut input)? as usize;
    if num_hidden > 64 {
        return Err(Error::Format(format!("implausible layer count {num_hidden}")));
    }
    let hidden = (0..num_hidden)
        .map(|_| read_u32(&mut input).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let arch = Architecture {
        sample_dim,
        embed_dim,
        hidden,
    };
    let template = DenoiserParams::zeros(arch)?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != template.num_params() * 4 {
        return Err(Error::Format(format!(
            "expected {} weight bytes, found {}",
            template.num_params() * 4,
            bytes.len()
        )));
    }
    let flat: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite weight".into()));
    }
    template.with_flat(&flat)
}
