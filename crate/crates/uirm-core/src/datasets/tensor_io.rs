//! The toolkit's binary tensor container.
//!
//! Bit-exact layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4    magic "UIRM"
//! bytes 4..6    u16 version (currently 1)
//! byte  6       u8 dtype: 0 = f32, 1 = f64, 2 = u8
//! byte  7       u8 reserved (0)
//! bytes 8..12   u32 ndim
//! then          ndim × u64 dims
//! then          payload, row-major, little-endian
//! then          u32 metadata byte length
//! then          metadata: UTF-8 "key=value" lines separated by '\n'
//! ```
//!
//! Metadata keys are sorted on write, so equal content produces equal bytes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"UIRM";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 0,
            TensorData::F64(_) => 1,
            TensorData::U8(_) => 2,
        }
    }

    fn all_finite(&self) -> bool {
        match self {
            TensorData::F32(v) => v.iter().all(|x| x.is_finite()),
            TensorData::F64(v) => v.iter().all(|x| x.is_finite()),
            TensorData::U8(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let count: usize = dims.iter().product();
        if data.len() != count {
            return Err(Error::dim(format!(
                "dims {:?} imply {count} elements but data has {}",
                dims,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn f64_slice(&self) -> Result<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Ok(v),
            other => Err(Error::domain(format!(
                "expected f64 tensor, found dtype code {}",
                other.dtype_code()
            ))),
        }
    }

    pub fn u8_slice(&self) -> Result<&[u8]> {
        match &self.data {
            TensorData::U8(v) => Ok(v),
            other => Err(Error::domain(format!(
                "expected u8 tensor, found dtype code {}",
                other.dtype_code()
            ))),
        }
    }
}

/// Key=value metadata block. Keys may not contain '=' or newlines; values
/// may not contain newlines.
pub type Metadata = BTreeMap<String, String>;

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor, metadata: &Metadata) -> Result<()> {
    std::fs::write(path.as_ref(), encode_tensor(tensor, metadata)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<(Tensor, Metadata)> {
    let bytes = std::fs::read(path.as_ref())?;
    decode_tensor(&bytes)
}

pub fn encode_tensor(tensor: &Tensor, metadata: &Metadata) -> Result<Vec<u8>> {
    if !tensor.data.all_finite() {
        return Err(Error::numeric("tensor payload contains non-finite values"));
    }
    if tensor.data.len() != tensor.dims.iter().product::<usize>() {
        return Err(Error::dim(format!(
            "dims {:?} do not match payload length {}",
            tensor.dims,
            tensor.data.len()
        )));
    }
    let mut meta_text = String::new();
    for (k, v) in metadata {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::domain(format!(
                "metadata entry {k:?} contains a reserved character"
            )));
        }
        if !meta_text.is_empty() {
            meta_text.push('\n');
        }
        meta_text.push_str(k);
        meta_text.push('=');
        meta_text.push_str(v);
    }

    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(tensor.data.dtype_code());
    out.push(0);
    out.extend_from_slice(&(tensor.dims.len() as u32).to_le_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &tensor.data {
        TensorData::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorData::U8(v) => out.extend_from_slice(v),
    }
    out.extend_from_slice(&(meta_text.len() as u32).to_le_bytes());
    out.extend_from_slice(meta_text.as_bytes());
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, Metadata)> {
    let need = |end: usize, what: &str| -> Result<()> {
        if bytes.len() < end {
            Err(Error::parse(
                bytes.len() as u64,
                format!("truncated container: {what} needs {end} bytes"),
            ))
        } else {
            Ok(())
        }
    };
    need(12, "header")?;
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::parse(
            0,
            format!("bad magic {:?}, expected {TENSOR_MAGIC:?}", &bytes[0..4]),
        ));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(Error::parse(
            4,
            format!("unsupported container version {version}"),
        ));
    }
    let dtype = bytes[6];
    let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dims_end = 12 + 8 * ndim;
    need(dims_end, "dims")?;
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let off = 12 + 8 * i;
            u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize
        })
        .collect();
    let count: usize = dims.iter().product();

    let elem_size = match dtype {
        0 => 4,
        1 => 8,
        2 => 1,
        other => {
            return Err(Error::parse(6, format!("unsupported dtype byte {other}")));
        }
    };
    let payload_end = dims_end + elem_size * count;
    need(payload_end, "payload")?;
    let payload = &bytes[dims_end..payload_end];
    let data = match dtype {
        0 => TensorData::F32(
            (0..count)
                .map(|i| f32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap()))
                .collect(),
        ),
        1 => TensorData::F64(
            (0..count)
                .map(|i| f64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().unwrap()))
                .collect(),
        ),
        _ => TensorData::U8(payload.to_vec()),
    };

    need(payload_end + 4, "metadata length")?;
    let meta_len =
        u32::from_le_bytes(bytes[payload_end..payload_end + 4].try_into().unwrap()) as usize;
    let meta_end = payload_end + 4 + meta_len;
    need(meta_end, "metadata")?;
    let meta_text = std::str::from_utf8(&bytes[payload_end + 4..meta_end])
        .map_err(|e| Error::parse((payload_end + 4) as u64, format!("metadata not UTF-8: {e}")))?;
    let mut metadata = Metadata::new();
    for line in meta_text.split('\n') {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::parse(
                (payload_end + 4) as u64,
                format!("metadata line without '=': {line:?}"),
            )
        })?;
        metadata.insert(k.to_string(), v.to_string());
    }
    Ok((Tensor { dims, data }, metadata))
}
