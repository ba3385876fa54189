//! Checkpoint container: a little-endian manifest of named tensors followed
//! by contiguous weight blobs, storable at full (f32) or half (f16)
//! precision. Normalization statistics and the architecture profile travel
//! inside the manifest as metadata entries.

use super::{init_params, named_shapes, ModelConfig, ModelParameters};
use crate::featurize::{NormStats, FEATURE_DIM};
use half::f16;
use std::io::{self, Read, Write};
use thiserror::Error;

const MAGIC: &[u8; 4] = b"NSCK";
const VERSION: u16 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F16: u8 = 1;
const DTYPE_META: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobDtype {
    F32,
    F16,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("tensor {name}: expected {expected} elements, found {found}")]
    TensorShape { name: String, expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn encode_config(cfg: &ModelConfig) -> Vec<u8> {
    let mut v = Vec::with_capacity(8 * 9);
    for d in [
        cfg.input_dim,
        cfg.proj_dim,
        cfg.hidden,
        cfg.layers,
        usize::from(cfg.bidirectional),
        cfg.cls_hidden,
        cfg.tau as usize,
    ] {
        v.extend_from_slice(&(d as u64).to_le_bytes());
    }
    v.extend_from_slice(&cfg.lambda_cls.to_le_bytes());
    v.extend_from_slice(&cfg.dropout_p.to_le_bytes());
    v
}

fn decode_config(bytes: &[u8]) -> Result<ModelConfig, CheckpointError> {
    if bytes.len() != 8 * 9 {
        return Err(CheckpointError::Malformed("bad config metadata size".into()));
    }
    let u = |i: usize| u64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap()) as usize;
    let f = |i: usize| f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
    Ok(ModelConfig {
        input_dim: u(0),
        proj_dim: u(1),
        hidden: u(2),
        layers: u(3),
        bidirectional: u(4) != 0,
        cls_hidden: u(5),
        tau: u(6) as u32,
        lambda_cls: f(7),
        dropout_p: f(8),
    })
}

fn encode_norm(norm: &NormStats) -> Vec<u8> {
    let mut v = Vec::with_capacity(16 * FEATURE_DIM);
    for x in norm.mean.iter().chain(norm.std.iter()) {
        v.extend_from_slice(&x.to_le_bytes());
    }
    v
}

fn decode_norm(bytes: &[u8]) -> Result<NormStats, CheckpointError> {
    if bytes.len() != 16 * FEATURE_DIM {
        return Err(CheckpointError::Malformed("bad norm metadata size".into()));
    }
    let mut norm = NormStats { mean: [0.0; FEATURE_DIM], std: [0.0; FEATURE_DIM] };
    for i in 0..FEATURE_DIM {
        norm.mean[i] = f64::from_le_bytes(bytes[i * 8..i * 8 + 8].try_into().unwrap());
        let j = (FEATURE_DIM + i) * 8;
        norm.std[i] = f64::from_le_bytes(bytes[j..j + 8].try_into().unwrap());
    }
    Ok(norm)
}

/// Serializes parameters to the checkpoint container.
pub fn save_checkpoint<W: Write>(
    params: &ModelParameters<f32>,
    dtype: BlobDtype,
    mut sink: W,
) -> Result<(), CheckpointError> {
    let shapes = named_shapes(&params.config);
    let tensors = params.block.flat();
    debug_assert_eq!(shapes.len(), tensors.len());

    struct Entry {
        name: String,
        dtype: u8,
        dims: Vec<u64>,
        bytes: Vec<u8>,
    }
    let mut entries: Vec<Entry> = Vec::with_capacity(shapes.len() + 2);
    entries.push(Entry {
        name: "meta.config".into(),
        dtype: DTYPE_META,
        dims: vec![],
        bytes: encode_config(&params.config),
    });
    entries.push(Entry {
        name: "meta.norm_stats".into(),
        dtype: DTYPE_META,
        dims: vec![],
        bytes: encode_norm(&params.norm),
    });
    let elem_dtype = match dtype {
        BlobDtype::F32 => DTYPE_F32,
        BlobDtype::F16 => DTYPE_F16,
    };
    for ((name, shape), data) in shapes.iter().zip(&tensors) {
        let mut bytes = Vec::new();
        match dtype {
            BlobDtype::F32 => {
                bytes.reserve(data.len() * 4);
                for &x in *data {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
            }
            BlobDtype::F16 => {
                bytes.reserve(data.len() * 2);
                for &x in *data {
                    bytes.extend_from_slice(&f16::from_f32(x).to_le_bytes());
                }
            }
        }
        entries.push(Entry {
            name: name.clone(),
            dtype: elem_dtype,
            dims: shape.iter().map(|&d| d as u64).collect(),
            bytes,
        });
    }

    sink.write_all(MAGIC)?;
    sink.write_all(&VERSION.to_le_bytes())?;
    sink.write_all(&(entries.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for e in &entries {
        sink.write_all(&(e.name.len() as u16).to_le_bytes())?;
        sink.write_all(e.name.as_bytes())?;
        sink.write_all(&[e.dtype])?;
        sink.write_all(&[e.dims.len() as u8])?;
        for d in &e.dims {
            sink.write_all(&d.to_le_bytes())?;
        }
        sink.write_all(&offset.to_le_bytes())?;
        sink.write_all(&(e.bytes.len() as u64).to_le_bytes())?;
        offset += e.bytes.len() as u64;
    }
    for e in &entries {
        sink.write_all(&e.bytes)?;
    }
    Ok(())
}

/// Reads a checkpoint back into f32 parameters (f16 blobs are widened).
pub fn load_checkpoint<R: Read>(mut source: R) -> Result<ModelParameters<f32>, CheckpointError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
        if *pos + n > buf.len() {
            return Err(CheckpointError::Malformed("truncated".into()));
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let mut pos = 0usize;
    if take(&mut pos, 4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let n_entries = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;

    struct RawEntry {
        name: String,
        dtype: u8,
        dims: Vec<u64>,
        offset: u64,
        len: u64,
    }
    let mut raw = Vec::with_capacity(n_entries);
    for _ in 0..n_entries {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("non-utf8 tensor name".into()))?;
        let dtype = take(&mut pos, 1)?[0];
        let rank = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        raw.push(RawEntry { name, dtype, dims, offset, len });
    }
    let blob_base = pos;
    let blob = |e: &RawEntry| -> Result<&[u8], CheckpointError> {
        let start = blob_base + e.offset as usize;
        let end = start + e.len as usize;
        if end > buf.len() {
            return Err(CheckpointError::Malformed(format!("blob for {} out of range", e.name)));
        }
        Ok(&buf[start..end])
    };

    let find = |name: &str| raw.iter().find(|e| e.name == name);
    let cfg_entry = find("meta.config")
        .ok_or_else(|| CheckpointError::Malformed("missing meta.config".into()))?;
    let config = decode_config(blob(cfg_entry)?)?;
    let norm_entry = find("meta.norm_stats")
        .ok_or_else(|| CheckpointError::Malformed("missing meta.norm_stats".into()))?;
    let norm = decode_norm(blob(norm_entry)?)?;

    let mut params = init_params::<f32>(&config, 0);
    params.norm = norm;
    let shapes = named_shapes(&config);
    {
        let mut slices = params.block.flat_mut();
        for ((name, shape), dst) in shapes.iter().zip(slices.iter_mut()) {
            let e = find(name).ok_or_else(|| {
                CheckpointError::Malformed(format!("missing tensor {name}"))
            })?;
            let expected: usize = shape.iter().product();
            let got_dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
            if got_dims != *shape {
                return Err(CheckpointError::TensorShape {
                    name: name.clone(),
                    expected,
                    found: got_dims.iter().product(),
                });
            }
            let bytes = blob(e)?;
            match e.dtype {
                DTYPE_F32 => {
                    if bytes.len() != expected * 4 {
                        return Err(CheckpointError::TensorShape {
                            name: name.clone(),
                            expected,
                            found: bytes.len() / 4,
                        });
                    }
                    for (i, x) in dst.iter_mut().enumerate() {
                        *x = f32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().unwrap());
                    }
                }
                DTYPE_F16 => {
                    if bytes.len() != expected * 2 {
                        return Err(CheckpointError::TensorShape {
                            name: name.clone(),
                            expected,
                            found: bytes.len() / 2,
                        });
                    }
                    for (i, x) in dst.iter_mut().enumerate() {
                        *x = f16::from_le_bytes(bytes[i * 2..i * 2 + 2].try_into().unwrap())
                            .to_f32();
                    }
                }
                other => {
                    return Err(CheckpointError::Malformed(format!(
                        "tensor {name} has unexpected dtype {other}"
                    )))
                }
            }
        }
    }
    Ok(params)
}
