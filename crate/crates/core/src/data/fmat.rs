use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FMAT_MAGIC: [u8; 4] = *b"FMAT";
const FMAT_VERSION: u8 = 1;
pub const FMAT_HEADER_LEN: usize = 13;

/// Writes a row-major f32 matrix: `FMAT`, version byte 1, LE u32 rows,
/// LE u32 cols, then rows*cols LE f32 values.
pub fn write_matrix(path: impl AsRef<Path>, matrix: &Array2<f32>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = matrix.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::invalid("too many rows for FMAT"))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::invalid("too many cols for FMAT"))?;
    let mut buf = Vec::with_capacity(FMAT_HEADER_LEN + 4 * rows * cols);
    buf.extend_from_slice(&FMAT_MAGIC);
    buf.push(FMAT_VERSION);
    buf.extend_from_slice(&rows32.to_le_bytes());
    buf.extend_from_slice(&cols32.to_le_bytes());
    for ((r, c), v) in matrix.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row: r, col: c });
        }
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let truncated = |offset: usize, needed: usize| Error::Truncated {
        path: path.to_path_buf(),
        offset,
        needed,
        available: bytes.len().saturating_sub(offset),
    };
    if bytes.len() < FMAT_HEADER_LEN {
        return Err(truncated(0, FMAT_HEADER_LEN));
    }
    if bytes[..4] != FMAT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_be_bytes(FMAT_MAGIC),
            found: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        });
    }
    if bytes[4] != FMAT_VERSION {
        return Err(Error::BadVersion {
            path: path.to_path_buf(),
            version: bytes[4],
        });
    }
    let rows = u32::from_le_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]) as usize;
    let cols = u32::from_le_bytes([bytes[9], bytes[10], bytes[11], bytes[12]]) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::invalid("FMAT dimensions overflow"))?;
    let payload = &bytes[FMAT_HEADER_LEN..];
    if payload.len() < count * 4 {
        return Err(truncated(FMAT_HEADER_LEN, count * 4));
    }
    if payload.len() > count * 4 {
        return Err(Error::Shape(format!(
            "{}: {} trailing bytes after {rows}x{cols} payload",
            path.display(),
            payload.len() - count * 4
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Shape(e.to_string()))
}
