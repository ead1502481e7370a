//! On-disk formats for encoder parameters and prototype banks.
//!
//! Both files start with a little-endian `u64` header length followed by a
//! JSON header, then packed little-endian floats in header order.
//!
//! - parameters: header `{"dtype": "f32"|"f64", "tensors": [{"name", "shape"}]}`;
//! - bank: header `{"dim", "entries": [{"class", "session"}]}`, values `f64`.
//!
//! `f64` parameter files round-trip bit-exactly. `f32` files are half the
//! size and round-trip bit-exactly only for values representable in `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, ParamStore};
use crate::error::{Error, Result};
use crate::proto::{BankEntry, PrototypeBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct ParamsHeader {
    dtype: Precision,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct BankHeader {
    dim: usize,
    entries: Vec<BankEntryHeader>,
}

#[derive(Serialize, Deserialize)]
struct BankEntryHeader {
    class: usize,
    session: usize,
}

fn frame(header: &impl Serialize, body: Vec<u8>) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + header.len() + body.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&body);
    Ok(out)
}

fn unframe<'a, H: Deserialize<'a>>(bytes: &'a [u8]) -> std::result::Result<(H, &'a [u8]), String> {
    if bytes.len() < 8 {
        return Err("file shorter than its length prefix".into());
    }
    let len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let rest = &bytes[8..];
    if rest.len() < len {
        return Err(format!("header length {len} exceeds file size"));
    }
    let header = serde_json::from_slice(&rest[..len]).map_err(|e| format!("header: {e}"))?;
    Ok((header, &rest[len..]))
}

pub fn encode_params(params: &ParamStore, precision: Precision) -> Result<Vec<u8>> {
    let tensors = params
        .iter()
        .map(|(name, m)| TensorHeader {
            name: name.to_string(),
            shape: [m.rows(), m.cols()],
        })
        .collect();
    let mut body = Vec::with_capacity(params.numel() * precision.width());
    for (_, m) in params.iter() {
        for &x in m.as_slice() {
            match precision {
                Precision::F32 => body.extend_from_slice(&(x as f32).to_le_bytes()),
                Precision::F64 => body.extend_from_slice(&x.to_le_bytes()),
            }
        }
    }
    frame(
        &ParamsHeader {
            dtype: precision,
            tensors,
        },
        body,
    )
}

pub fn decode_params(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let (header, mut body): (ParamsHeader, _) = unframe(bytes)?;
    let w = header.dtype.width();
    let mut store = ParamStore::new();
    for t in header.tensors {
        let n = t.shape[0] * t.shape[1];
        if body.len() < n * w {
            return Err(format!("tensor {} truncated", t.name));
        }
        let (chunk, rest) = body.split_at(n * w);
        body = rest;
        let data = chunk
            .chunks_exact(w)
            .map(|c| match header.dtype {
                Precision::F32 => f64::from(f32::from_le_bytes(c.try_into().unwrap())),
                Precision::F64 => f64::from_le_bytes(c.try_into().unwrap()),
            })
            .collect();
        let m = DenseMatrix::from_vec(t.shape[0], t.shape[1], data).map_err(|e| e.to_string())?;
        store.insert(t.name, m).map_err(|e| e.to_string())?;
    }
    if !body.is_empty() {
        return Err(format!("{} trailing bytes", body.len()));
    }
    Ok(store)
}

pub fn encode_bank(bank: &PrototypeBank) -> Result<Vec<u8>> {
    let header = BankHeader {
        dim: bank.dim(),
        entries: bank
            .entries()
            .iter()
            .map(|e| BankEntryHeader {
                class: e.class,
                session: e.session,
            })
            .collect(),
    };
    let mut body = Vec::with_capacity(8 * bank.len() * bank.dim());
    for e in bank.entries() {
        for &x in &e.vector {
            body.extend_from_slice(&x.to_le_bytes());
        }
    }
    frame(&header, body)
}

pub fn decode_bank(bytes: &[u8]) -> std::result::Result<PrototypeBank, String> {
    let (header, body): (BankHeader, _) = unframe(bytes)?;
    if body.len() != 8 * header.dim * header.entries.len() {
        return Err(format!(
            "expected {} vectors of dim {}, body holds {} bytes",
            header.entries.len(),
            header.dim,
            body.len()
        ));
    }
    let entries = header
        .entries
        .iter()
        .zip(body.chunks_exact(8 * header.dim.max(1)))
        .map(|(h, chunk)| BankEntry {
            class: h.class,
            session: h.session,
            vector: chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
        .collect();
    PrototypeBank::from_entries(header.dim, entries).map_err(|e| e.to_string())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn corrupt(path: &Path, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    }
}

pub fn save_params(path: &Path, params: &ParamStore, precision: Precision) -> Result<()> {
    write(path, &encode_params(params, precision)?)
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    decode_params(&read(path)?).map_err(|m| corrupt(path, m))
}

pub fn save_bank(path: &Path, bank: &PrototypeBank) -> Result<()> {
    write(path, &encode_bank(bank)?)
}

pub fn load_bank(path: &Path) -> Result<PrototypeBank> {
    decode_bank(&read(path)?).map_err(|m| corrupt(path, m))
}
