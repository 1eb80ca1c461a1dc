//! Parameter files: magic `b"PGDF"`, `u32` version 1, `u32` header length,
//! a JSON header with dims and scalars, then the weight blocks as
//! little-endian `f32` in [`BLOCK_NAMES`](super::BLOCK_NAMES) order.
//! Matrices are stored row-major.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::FusionParams;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: [u8; 4] = *b"PGDF";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    physics_channels: usize,
    channels: usize,
    hidden: usize,
    lambda: f64,
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
}

pub fn encode_params(p: &FusionParams) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        physics_channels: p.physics_channels(),
        channels: p.channels(),
        hidden: p.hidden(),
        lambda: p.lambda,
        alpha: p.alpha,
        beta: p.beta,
        gamma: p.gamma,
        delta: p.delta,
    })
    .expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(&PARAMS_MAGIC);
    out.extend_from_slice(&PARAMS_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for block in p.blocks() {
        for &v in block.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<FusionParams> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != PARAMS_MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != PARAMS_VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let header_len = word(8) as usize;
    let rest = &bytes[12..];
    if rest.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            found: rest.len(),
        });
    }
    let h: Header = serde_json::from_slice(&rest[..header_len])?;
    let (cp, c, ch) = (h.physics_channels, h.channels, h.hidden);
    let sizes = [cp * c, c * c, c, c * ch, ch, ch * c, c];
    let expected: usize = sizes.iter().sum::<usize>() * 4;
    let payload = &rest[header_len..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let mut floats = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))));
    let mut take = |n: usize| floats.by_ref().take(n).collect::<Vec<f64>>();
    let mat = |v: Vec<f64>, r: usize, cols: usize| Array2::from_shape_vec((r, cols), v).expect("sized");
    let p = FusionParams {
        lambda: h.lambda,
        alpha: h.alpha,
        beta: h.beta,
        gamma: h.gamma,
        delta: h.delta,
        w_query: mat(take(cp * c), cp, c),
        w_linear: mat(take(c * c), c, c),
        b_linear: Array1::from(take(c)),
        w_ffn1: mat(take(c * ch), c, ch),
        b_ffn1: Array1::from(take(ch)),
        w_ffn2: mat(take(ch * c), ch, c),
        b_ffn2: Array1::from(take(c)),
    };
    p.validate()?;
    Ok(p)
}

pub fn save_params(path: impl AsRef<Path>, p: &FusionParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(p)).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<FusionParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}
