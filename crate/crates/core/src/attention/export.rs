//! Raw dumps of axial kernel matrices.
//!
//! Each record is a header of three little-endian `u32` values (axis, head,
//! `S_m`) followed by `S_m * S_m` little-endian `f64` entries in row-major order.

use std::fs;
use std::path::Path;

use super::kernels::AxialKernelSet;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One exported kernel matrix with its position in the set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelRecord {
    pub axis: usize,
    pub head: usize,
    pub matrix: Matrix,
}

pub fn encode_kernel_dump(set: &AxialKernelSet) -> Vec<u8> {
    let mut out = Vec::new();
    for (axis, heads) in set.kernels.iter().enumerate() {
        for (head, a) in heads.iter().enumerate() {
            for v in [axis, head, a.rows()] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            for x in a.as_slice() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

pub fn write_kernel_dump(path: &Path, set: &AxialKernelSet) -> Result<()> {
    fs::write(path, encode_kernel_dump(set)).map_err(|e| Error::io(path, e))
}

pub fn read_kernel_dump(path: &Path) -> Result<Vec<KernelRecord>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_kernel_dump(&bytes).map_err(|detail| Error::format(path, detail))
}

pub fn decode_kernel_dump(mut bytes: &[u8]) -> std::result::Result<Vec<KernelRecord>, String> {
    let mut records = Vec::new();
    while !bytes.is_empty() {
        if bytes.len() < 12 {
            return Err(format!("truncated record header ({} bytes left)", bytes.len()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
        let (axis, head, s) = (word(0), word(1), word(2));
        let len = s
            .checked_mul(s)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| format!("kernel extent {s} overflows"))?;
        bytes = &bytes[12..];
        if bytes.len() < len {
            return Err(format!("kernel ({axis}, {head}) needs {len} payload bytes, found {}", bytes.len()));
        }
        let data = bytes[..len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        bytes = &bytes[len..];
        let matrix = Matrix::from_vec(s, s, data).map_err(|e| e.to_string())?;
        records.push(KernelRecord { axis, head, matrix });
    }
    Ok(records)
}
