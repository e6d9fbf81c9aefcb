//! Middlebury `.flo` dense flow files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

const MAGIC: &[u8; 4] = b"PIEH";

/// Encodes `u` and `v` as `PIEH`, width, height (`i32` LE) and interleaved
/// `f32` pairs in row-major order.
pub fn encode(u: &Grid<f64>, v: &Grid<f64>) -> Vec<u8> {
    assert!(u.same_shape(v), "flow components must share shape");
    let mut out = Vec::with_capacity(12 + u.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(u.width() as i32).to_le_bytes());
    out.extend_from_slice(&(u.height() as i32).to_le_bytes());
    for (a, b) in u.iter().zip(v.iter()) {
        out.extend_from_slice(&(*a as f32).to_le_bytes());
        out.extend_from_slice(&(*b as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Grid<f64>, Grid<f64>)> {
    let bad = |m: &str| Error::parse(path, 0, m);
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(bad("missing PIEH header"));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if w <= 0 || h <= 0 {
        return Err(bad("non-positive dimensions"));
    }
    let (w, h) = (w as usize, h as usize);
    let body = &bytes[12..];
    if body.len() != w * h * 8 {
        return Err(bad("payload length does not match dimensions"));
    }
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for pair in body.chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[..4].try_into().unwrap()) as f64);
        v.push(f32::from_le_bytes(pair[4..].try_into().unwrap()) as f64);
    }
    Ok((Grid::from_vec(w, h, u), Grid::from_vec(w, h, v)))
}

pub fn write(path: &Path, u: &Grid<f64>, v: &Grid<f64>) -> Result<()> {
    fs::write(path, encode(u, v)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Grid<f64>, Grid<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
