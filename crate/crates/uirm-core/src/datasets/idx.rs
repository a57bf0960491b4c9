//! IDX binary tensor format (the MNIST distribution format).
//!
//! Layout: two zero bytes, a dtype code byte, a rank byte, `rank` big-endian
//! u32 dimensions, then the raw payload in row-major order. Supported dtype
//! codes: 0x08 (unsigned byte) and 0x0D (big-endian f32).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

impl IdxData {
    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxTensor {
    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }
}

pub fn read_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let bytes = std::fs::read(path.as_ref())?;
    read_idx_bytes(&bytes)
}

pub fn read_idx_bytes(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::parse(0, "file shorter than the 4-byte magic"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::parse(
            0,
            format!(
                "bad magic: expected two zero bytes, got {:#04x} {:#04x}",
                bytes[0], bytes[1]
            ),
        ));
    }
    let dtype = bytes[2];
    let rank = bytes[3] as usize;
    let header_len = 4 + 4 * rank;
    if bytes.len() < header_len {
        return Err(Error::parse(
            bytes.len() as u64,
            format!("truncated header: rank {rank} needs {header_len} bytes"),
        ));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 4 + 4 * i;
        let dim = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        dims.push(dim);
    }
    let count: usize = dims.iter().product();
    let payload = &bytes[header_len..];

    let data = match dtype {
        0x08 => {
            if payload.len() < count {
                return Err(Error::parse(
                    bytes.len() as u64,
                    format!("truncated payload: need {count} bytes, have {}", payload.len()),
                ));
            }
            IdxData::U8(payload[..count].to_vec())
        }
        0x0D => {
            if payload.len() < 4 * count {
                return Err(Error::parse(
                    bytes.len() as u64,
                    format!(
                        "truncated payload: need {} bytes, have {}",
                        4 * count,
                        payload.len()
                    ),
                ));
            }
            let values = (0..count)
                .map(|i| f32::from_be_bytes(payload[4 * i..4 * i + 4].try_into().unwrap()))
                .collect();
            IdxData::F32(values)
        }
        other => {
            return Err(Error::parse(
                2,
                format!("unsupported dtype code {other:#04x}"),
            ));
        }
    };
    Ok(IdxTensor { dims, data })
}

pub fn write_idx(path: impl AsRef<Path>, tensor: &IdxTensor) -> Result<()> {
    std::fs::write(path.as_ref(), encode_idx(tensor)?)?;
    Ok(())
}

pub fn encode_idx(tensor: &IdxTensor) -> Result<Vec<u8>> {
    if tensor.data.len() != tensor.element_count() {
        return Err(Error::dim(format!(
            "dims {:?} imply {} elements but data has {}",
            tensor.dims,
            tensor.element_count(),
            tensor.data.len()
        )));
    }
    if tensor.dims.len() > u8::MAX as usize {
        return Err(Error::domain("rank exceeds 255"));
    }
    let dtype = match tensor.data {
        IdxData::U8(_) => 0x08u8,
        IdxData::F32(_) => 0x0Du8,
    };
    let mut out = vec![0u8, 0u8, dtype, tensor.dims.len() as u8];
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    match &tensor.data {
        IdxData::U8(v) => out.extend_from_slice(v),
        IdxData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_be_bytes());
            }
        }
    }
    Ok(out)
}
