//! `PULSEW1` weight files.
//!
//! ```text
//! magic        8 bytes   "PULSEW1\n"
//! header_len   u64 LE
//! header       UTF-8 JSON {"config": PulseConfig, "tensors": [{"name", "shape", "offset"}]}
//! payload      f32 LE tensors concatenated in header order; offsets are byte
//!              offsets from the start of the payload
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::PulseConfig;
use super::params::{ParamLayout, PulseParams};
use crate::error::{PulseError, Result};
use crate::fsutil::{atomic_write, f32_from_le_bytes, f32_to_le_bytes};
use crate::tensorcore::Tensor;

pub const WEIGHT_MAGIC: &[u8; 8] = b"PULSEW1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightHeader {
    pub config: PulseConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn encode_params(params: &PulseParams) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let tensors = params
        .layout()
        .specs
        .iter()
        .zip(&params.tensors)
        .map(|(s, t)| {
            let e = TensorEntry {
                name: s.name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 4 * t.len() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&WeightHeader {
        config: params.config().clone(),
        tensors,
    })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in &params.tensors {
        out.extend(f32_to_le_bytes(t.data()));
    }
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<PulseParams> {
    let fmt = |m: String| PulseError::Format(m);
    if bytes.len() < 16 || &bytes[..8] != WEIGHT_MAGIC {
        return Err(fmt("bad magic: not a PULSEW1 weight file".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt(format!("header length {header_len} exceeds file size {}", bytes.len())))?;
    let header: WeightHeader = serde_json::from_slice(&bytes[16..payload_start])?;
    let payload = &bytes[payload_start..];

    let layout = Arc::new(ParamLayout::new(&header.config)?);
    if header.tensors.len() != layout.specs.len() {
        return Err(fmt(format!(
            "header lists {} tensors, config implies {}",
            header.tensors.len(),
            layout.specs.len()
        )));
    }
    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (entry, spec) in header.tensors.iter().zip(&layout.specs) {
        if entry.name != spec.name || entry.shape != spec.shape {
            return Err(fmt(format!(
                "tensor {} {:?} does not match layout entry {} {:?}",
                entry.name, entry.shape, spec.name, spec.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(fmt(format!("tensor {} at offset {}, expected {expected_offset}", entry.name, entry.offset)));
        }
        let n = spec.len();
        let start = entry.offset as usize;
        let end = start + 4 * n;
        let chunk = payload
            .get(start..end)
            .ok_or_else(|| fmt(format!("payload truncated inside tensor {}", entry.name)))?;
        let data = f32_from_le_bytes(chunk).expect("multiple of 4");
        tensors.push(Tensor::new(spec.shape.clone(), data)?);
        expected_offset = end as u64;
    }
    if payload.len() as u64 != expected_offset {
        return Err(fmt(format!(
            "payload has {} bytes, header accounts for {expected_offset}",
            payload.len()
        )));
    }
    PulseParams::from_tensors(layout, tensors)
}

pub fn save_params(params: &PulseParams, path: &Path) -> Result<()> {
    atomic_write(path, &encode_params(params)?)
}

pub fn load_params(path: &Path) -> Result<PulseParams> {
    decode_params(&std::fs::read(path)?)
}

/// Parses only the header of a weight file.
pub fn read_header(bytes: &[u8]) -> Result<WeightHeader> {
    if bytes.len() < 16 || &bytes[..8] != WEIGHT_MAGIC {
        return Err(PulseError::Format("bad magic: not a PULSEW1 weight file".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(n)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| PulseError::Format("header length exceeds file size".into()))?;
    Ok(serde_json::from_slice(&bytes[16..end])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    #[test]
    fn round_trip_is_byte_exact() {
        let p = init_params(&PulseConfig::tiny(), 11).unwrap();
        let bytes = encode_params(&p).unwrap();
        let q = decode_params(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode_params(&q).unwrap(), bytes);
    }

    #[test]
    fn corrupted_magic() {
        let p = init_params(&PulseConfig::tiny(), 1).unwrap();
        let mut bytes = encode_params(&p).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_params(&bytes), Err(PulseError::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let p = init_params(&PulseConfig::tiny(), 1).unwrap();
        let bytes = encode_params(&p).unwrap();
        assert!(decode_params(&bytes[..bytes.len() - 4]).is_err());
    }

    #[test]
    fn header_shapes_cover_payload() {
        let p = init_params(&PulseConfig::tiny(), 2).unwrap();
        let bytes = encode_params(&p).unwrap();
        let h = read_header(&bytes).unwrap();
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let elems: usize = h.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        assert_eq!(bytes.len(), 16 + header_len + 4 * elems);
        assert_eq!(elems, p.element_count());
    }
}
