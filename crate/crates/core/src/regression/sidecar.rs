//! Binary sidecar for fitted affine maps, laid out like a REPD file:
//! magic `REPM`, u32 version, u32 header length, JSON header, then
//! `rows * cols` f64 LE weights (row-major) followed by `cols` intercepts.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::AffineMap;
use crate::error::{Error, Result};
use crate::repstore::split_container;
use crate::scalar::Real;

pub const MAP_MAGIC: [u8; 4] = *b"REPM";
const MAP_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapHeader {
    rows: usize,
    cols: usize,
    lambda: f64,
    source_layer: Option<usize>,
    target_layer: Option<usize>,
    dtype: String,
}

pub fn map_to_bytes<T: Real>(map: &AffineMap<T>) -> Result<Vec<u8>> {
    let (rows, cols) = map.weights.dim();
    let header = serde_json::to_vec(&MapHeader {
        rows,
        cols,
        lambda: map.lambda.to_f64_lossy(),
        source_layer: map.source_layer,
        target_layer: map.target_layer,
        dtype: "f64le".into(),
    })?;
    let mut out = Vec::with_capacity(12 + header.len() + (rows + 1) * cols * 8);
    out.extend_from_slice(&MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in map.weights.iter().chain(map.intercept.iter()) {
        out.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    Ok(out)
}

pub fn map_from_bytes<T: Real>(bytes: &[u8]) -> Result<AffineMap<T>> {
    let (header, payload) = split_container(bytes, MAP_MAGIC, MAP_VERSION)?;
    let h: MapHeader = serde_json::from_slice(header).map_err(|e| Error::Header(e.to_string()))?;
    if h.dtype != "f64le" {
        return Err(Error::Header(format!("unsupported dtype {:?}", h.dtype)));
    }
    let expected = (h.rows + 1) * h.cols * 8;
    if payload.len() < expected {
        return Err(Error::Truncated {
            section: "payload",
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes {
            extra: payload.len() - expected,
        });
    }
    let vals: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect();
    let (w, b) = vals.split_at(h.rows * h.cols);
    let weights = Array2::from_shape_vec((h.rows, h.cols), w.to_vec()).map_err(|e| Error::Shape(e.to_string()))?;
    let mut map = AffineMap::new(weights, Array1::from_vec(b.to_vec()), T::of(h.lambda))?;
    map.source_layer = h.source_layer;
    map.target_layer = h.target_layer;
    Ok(map)
}

pub fn write_map<T: Real>(map: &AffineMap<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, map_to_bytes(map)?).map_err(|e| Error::io(path, e))
}

pub fn read_map<T: Real>(path: impl AsRef<Path>) -> Result<AffineMap<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    map_from_bytes(&bytes)
}
