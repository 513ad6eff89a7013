//! Checkpoint files: one JSON header line (shapes, hyperparameters,
//! role-tag, seed, slice index) followed by flat little-endian 64-bit float
//! arrays in the order the header declares.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{EncoderParams, TopicMatrix, TopicRole};

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint payload mismatch: expected {expected} floats, found {found}")]
    Payload { expected: usize, found: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> CheckpointError {
    CheckpointError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Declared shape of one flat array in the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The JSON header line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CkptHeader {
    pub version: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<TopicRole>,
    pub seed: u64,
    pub slice: usize,
    pub hyper: serde_json::Value,
    pub arrays: Vec<ArraySpec>,
}

/// Run metadata stamped into each checkpoint.
#[derive(Debug, Clone)]
pub struct CkptMeta {
    pub seed: u64,
    pub slice: usize,
    pub hyper: serde_json::Value,
}

fn write_file(path: &Path, header: &CkptHeader, arrays: &[&[f64]]) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    let header_json =
        serde_json::to_string(header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    out.write_all(header_json.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| io_err(path, e))?;
    for array in arrays {
        for &x in *array {
            out.write_all(&x.to_le_bytes()).map_err(|e| io_err(path, e))?;
        }
    }
    out.flush().map_err(|e| io_err(path, e))
}

fn read_file(path: &Path) -> Result<(CkptHeader, Vec<Vec<f64>>), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| CheckpointError::Header("missing header line".into()))?;
    let header: CkptHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let payload = &bytes[newline + 1..];
    let expected: usize = header
        .arrays
        .iter()
        .map(|a| a.shape.iter().product::<usize>())
        .sum();
    if payload.len() != expected * 8 {
        return Err(CheckpointError::Payload {
            expected,
            found: payload.len() / 8,
        });
    }
    let mut offset = 0;
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for spec in &header.arrays {
        let len: usize = spec.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let chunk: [u8; 8] = payload[offset..offset + 8].try_into().expect("8 bytes");
            data.push(f64::from_le_bytes(chunk));
            offset += 8;
        }
        arrays.push(data);
    }
    Ok((header, arrays))
}

pub fn write_topic_matrix(
    path: &Path,
    matrix: &TopicMatrix,
    meta: &CkptMeta,
) -> Result<(), CheckpointError> {
    let (k, v) = matrix.values.dim();
    let header = CkptHeader {
        version: crate::ARTIFACT_VERSION.to_string(),
        kind: "topic_matrix".to_string(),
        role: Some(matrix.role),
        seed: meta.seed,
        slice: meta.slice,
        hyper: meta.hyper.clone(),
        arrays: vec![ArraySpec {
            name: "values".to_string(),
            shape: vec![k, v],
        }],
    };
    let values = matrix.values.as_slice().expect("row-major layout");
    write_file(path, &header, &[values])
}

pub fn read_topic_matrix(path: &Path) -> Result<(TopicMatrix, CkptHeader), CheckpointError> {
    let (header, mut arrays) = read_file(path)?;
    if header.kind != "topic_matrix" || arrays.len() != 1 {
        return Err(CheckpointError::Header(format!(
            "expected a topic_matrix checkpoint, found kind {:?}",
            header.kind
        )));
    }
    let shape = &header.arrays[0].shape;
    if shape.len() != 2 {
        return Err(CheckpointError::Header("topic matrix must be 2-d".into()));
    }
    let values = Array2::from_shape_vec((shape[0], shape[1]), arrays.remove(0))
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let role = header.role.unwrap_or(TopicRole::Local);
    Ok((TopicMatrix { values, role }, header))
}

pub fn write_encoder(
    path: &Path,
    enc: &EncoderParams,
    meta: &CkptMeta,
) -> Result<(), CheckpointError> {
    let (h, v) = enc.w1.dim();
    let (k, _) = enc.w2.dim();
    let header = CkptHeader {
        version: crate::ARTIFACT_VERSION.to_string(),
        kind: "encoder".to_string(),
        role: None,
        seed: meta.seed,
        slice: meta.slice,
        hyper: meta.hyper.clone(),
        arrays: vec![
            ArraySpec {
                name: "w1".to_string(),
                shape: vec![h, v],
            },
            ArraySpec {
                name: "b1".to_string(),
                shape: vec![h],
            },
            ArraySpec {
                name: "w2".to_string(),
                shape: vec![k, h],
            },
            ArraySpec {
                name: "b2".to_string(),
                shape: vec![k],
            },
        ],
    };
    write_file(
        path,
        &header,
        &[
            enc.w1.as_slice().expect("row-major"),
            enc.b1.as_slice().expect("contiguous"),
            enc.w2.as_slice().expect("row-major"),
            enc.b2.as_slice().expect("contiguous"),
        ],
    )
}

pub fn read_encoder(path: &Path) -> Result<(EncoderParams, CkptHeader), CheckpointError> {
    let (header, mut arrays) = read_file(path)?;
    if header.kind != "encoder" || arrays.len() != 4 {
        return Err(CheckpointError::Header(format!(
            "expected an encoder checkpoint, found kind {:?}",
            header.kind
        )));
    }
    let shape_of = |i: usize| header.arrays[i].shape.clone();
    let s0 = shape_of(0);
    let s2 = shape_of(2);
    if s0.len() != 2 || s2.len() != 2 {
        return Err(CheckpointError::Header("weight matrices must be 2-d".into()));
    }
    let w1 = Array2::from_shape_vec((s0[0], s0[1]), arrays.remove(0))
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let b1 = Array1::from_vec(arrays.remove(0));
    let w2 = Array2::from_shape_vec((s2[0], s2[1]), arrays.remove(0))
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let b2 = Array1::from_vec(arrays.remove(0));
    Ok((EncoderParams { w1, b1, w2, b2 }, header))
}
