//! The PGDH binary container for heatmap stacks and binary target maps.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 4 | magic `b"PGDH"` |
//! | 4 | 4 | `u32` version = 1 |
//! | 8 | 4 | `u32` K |
//! | 12 | 4 | `u32` H |
//! | 16 | 4 | `u32` W |
//! | 20 | 4·K·H·W | IEEE-754 `f32` values, channel-major then row-major |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;

pub const MAGIC: [u8; 4] = *b"PGDH";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

pub fn encode(stack: &HeatmapStack) -> Vec<u8> {
    let (k, h, w) = stack.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * stack.values().len());
    out.extend_from_slice(&MAGIC);
    for v in [VERSION, k as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in stack.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<HeatmapStack> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let version = word(1);
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let (k, h, w) = (word(2) as usize, word(3) as usize, word(4) as usize);
    let expected = k
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .and_then(|n| n.checked_mul(4))
        .unwrap_or(usize::MAX);
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::UnsupportedFormat(format!(
            "{} trailing bytes after PGDH payload",
            payload.len() - expected
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    HeatmapStack::new(k, h, w, values)
}

pub fn save_container(path: impl AsRef<Path>, stack: &HeatmapStack) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(stack)).map_err(|e| Error::io(path, e))
}

pub fn load_container(path: impl AsRef<Path>) -> Result<HeatmapStack> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
