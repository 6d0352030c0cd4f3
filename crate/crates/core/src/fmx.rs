//! The FMX1 binary matrix format: magic `FMX1`, `u32` row count, `u32`
//! column count, then row-major little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAGIC: &[u8; 4] = b"FMX1";
const HEADER_LEN: usize = 12;

pub fn encode(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.rows() * m.cols());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::MalformedFile("missing FMX1 header".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::MalformedFile("FMX1 dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(Error::MalformedFile(format!(
            "FMX1 {rows}x{cols} needs {expected} payload bytes, found {}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Matrix::from_vec(rows, cols, data)
}

pub fn read_file(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::MalformedFile(m) => Error::MalformedFile(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_file(path: &Path, m: &Matrix) -> Result<()> {
    std::fs::write(path, encode(m)).map_err(|e| Error::io(path, e))
}

/// One row per line, comma-separated decimals.
pub fn to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str) -> Result<Matrix> {
    let rows = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| {
                        Error::MalformedFile(format!("line {}: bad number {cell:?}", i + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows).map_err(|_| Error::MalformedFile("ragged CSV rows".into()))
}
