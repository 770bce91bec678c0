//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `ICSI`, version `u32`, config length `u32`
//! plus UTF-8 JSON, tensor count `u32`, then per tensor: name length `u16`
//! plus UTF-8 name, dtype `u8` (0 = f32, 1 = f64), rank `u8`, dims as `u32`,
//! raw row-major data.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::error::CheckpointError;
use crate::model::{TransformerConfig, TransformerParams};

pub const MAGIC: [u8; 4] = *b"ICSI";
pub const VERSION: u32 = 1;

/// A tensor of either stored precision.
#[derive(Clone, Debug, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn of<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            0 => Self::F32(t.cast()),
            _ => Self::F64(t.cast()),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Self::F32(t) => t.shape(),
            Self::F64(t) => t.shape(),
        }
    }

    pub fn to<T: Real>(&self) -> Tensor<T> {
        match self {
            Self::F32(t) => t.cast(),
            Self::F64(t) => t.cast(),
        }
    }
}

/// JSON header: model architecture plus free-form run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: TransformerConfig,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_container<W: Write>(
    w: &mut W,
    header: &CheckpointHeader,
    tensors: &[(String, StoredTensor)],
) -> Result<(), CheckpointError> {
    let blob = serde_json::to_vec(header)?;
    let invalid = |field: String, msg: String| CheckpointError::Invalid { field, msg };
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let blob_len = u32::try_from(blob.len()).map_err(|_| invalid("config".into(), "blob too large".into()))?;
    w.write_all(&blob_len.to_le_bytes())?;
    w.write_all(&blob)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        let name_len = u16::try_from(name.len()).map_err(|_| invalid(format!("tensor {name}"), "name too long".into()))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        let shape = t.shape();
        let rank = u8::try_from(shape.len()).map_err(|_| invalid(format!("tensor {name}"), "rank > 255".into()))?;
        w.write_all(&[match t {
            StoredTensor::F32(_) => 0,
            StoredTensor::F64(_) => 1,
        }])?;
        w.write_all(&[rank])?;
        for &d in shape {
            let d = u32::try_from(d).map_err(|_| invalid(format!("tensor {name}"), "dimension overflows u32".into()))?;
            w.write_all(&d.to_le_bytes())?;
        }
        match t {
            StoredTensor::F32(t) => t.data().iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
            StoredTensor::F64(t) => t.data().iter().try_for_each(|x| w.write_all(&x.to_le_bytes()))?,
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: impl Fn() -> String) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: impl Fn() -> String) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: impl Fn() -> String) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: impl Fn() -> String) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn read_container(buf: &[u8]) -> Result<(CheckpointHeader, Vec<(String, StoredTensor)>), CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, || "magic".into())?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(CheckpointError::Magic(magic));
    }
    let version = r.u32(|| "version".into())?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let blob_len = r.u32(|| "config length".into())? as usize;
    let blob = r.take(blob_len, || "config".into())?;
    let header: CheckpointHeader = serde_json::from_slice(blob)?;
    let count = r.u32(|| "tensor count".into())?;
    let mut tensors = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = |part: &'static str| move || format!("tensor {i} {part}");
        let name_len = r.u16(at("name length"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, at("name"))?)
            .map_err(|e| CheckpointError::Invalid { field: format!("tensor {i} name"), msg: e.to_string() })?
            .to_string();
        let named = |part: &str| {
            let name = name.clone();
            let part = part.to_string();
            move || format!("tensor {i} `{name}` {part}")
        };
        let dtype = r.u8(named("dtype"))?;
        let rank = r.u8(named("rank"))? as usize;
        let shape = (0..rank).map(|_| r.u32(named("dims")).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(8usize, |acc, &d| acc.checked_mul(d))
            .map(|bytes| bytes / 8)
            .ok_or_else(|| CheckpointError::Invalid { field: format!("tensor {i} `{name}` dims"), msg: format!("{shape:?} overflows") })?;
        let t = match dtype {
            0 => {
                let raw = r.take(len * 4, named("data"))?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                StoredTensor::F32(Tensor::new(&shape, data).expect("length checked"))
            }
            1 => {
                let raw = r.take(len * 8, named("data"))?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                StoredTensor::F64(Tensor::new(&shape, data).expect("length checked"))
            }
            other => {
                return Err(CheckpointError::Invalid { field: format!("tensor {i} `{name}` dtype"), msg: format!("unknown code {other}") })
            }
        };
        tensors.push((name, t));
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::Invalid { field: "trailer".into(), msg: format!("{} unexpected bytes", buf.len() - r.pos) });
    }
    Ok((header, tensors))
}

pub fn save_checkpoint<T: Real>(
    params: &TransformerParams<T>,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    let header = CheckpointHeader { model: params.config().clone(), meta };
    let tensors: Vec<_> = params.named_tensors().into_iter().map(|(n, t)| (n.to_string(), StoredTensor::of(t))).collect();
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, &header, &tensors)?;
    w.flush()?;
    Ok(())
}

/// Loads parameters at the stored architecture and capacities.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(TransformerParams<T>, serde_json::Value), CheckpointError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    let (header, tensors) = read_container(&buf)?;
    let named = tensors.into_iter().map(|(n, t)| (n, t.to::<T>())).collect();
    let params = TransformerParams::from_named(&header.model, named)
        .map_err(|e| CheckpointError::Invalid { field: "tensors".into(), msg: e.to_string() })?;
    Ok((params, header.meta))
}

/// Loads learned weights into `config`, which may differ from the stored one
/// only in positional capacities; tables are regenerated at the new lengths.
pub fn load_checkpoint_into<T: Real>(
    path: impl AsRef<Path>,
    config: &TransformerConfig,
) -> Result<(TransformerParams<T>, serde_json::Value), CheckpointError> {
    let (params, meta) = load_checkpoint::<T>(path)?;
    if !params.config().same_architecture(config) {
        return Err(CheckpointError::Invalid {
            field: "config".into(),
            msg: format!("stored architecture {:?} does not match {:?}", params.config(), config),
        });
    }
    let params = params
        .with_capacity(config.n_ctx_enc, config.n_ctx_dec)
        .map_err(|e| CheckpointError::Invalid { field: "config".into(), msg: e.to_string() })?;
    Ok((params, meta))
}
