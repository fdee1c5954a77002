//! Measurement files: one JSON header line, then the values as raw
//! little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Measurement;
use crate::error::{Error, Result};

const FORMAT_TAG: &str = "measopt-measurement-v1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    dims: Vec<usize>,
    count: usize,
    operator_id: String,
    noise_sigma: f64,
    seed: Option<u64>,
}

pub fn write_measurement(path: &Path, m: &Measurement) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.into(),
        dims: m.dims.clone(),
        count: m.values.len(),
        operator_id: m.operator_id.clone(),
        noise_sigma: m.noise_sigma,
        seed: m.seed,
    };
    let mut buf = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    buf.push(b'\n');
    buf.reserve(m.values.len() * 8);
    for v in &m.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_measurement(path: &Path) -> Result<Measurement> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(e.to_string()))?;
    if header.format != FORMAT_TAG {
        return Err(Error::Format(format!("unknown format `{}`", header.format)));
    }
    let body = &bytes[nl + 1..];
    if body.len() != header.count * 8 || header.dims.iter().product::<usize>() != header.count {
        return Err(Error::Format("payload length does not match header".into()));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Measurement {
        values,
        dims: header.dims,
        noise_sigma: header.noise_sigma,
        operator_id: header.operator_id,
        seed: header.seed,
    })
}
