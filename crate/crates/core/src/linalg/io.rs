//! Matrix file formats.
//!
//! `DMAT1`: the six magic bytes `DMAT1\0`, rows and cols as `u64` little
//! endian, then `rows · cols` little-endian `f64` values in row-major order.
//!
//! CSV: one matrix row per line, comma-separated decimals.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::matrix::DenseMatrix;
use crate::error::{Error, Result};

pub const DMAT_MAGIC: &[u8; 6] = b"DMAT1\0";

pub fn write_dmat<W: Write>(mut w: W, m: &DenseMatrix) -> Result<()> {
    w.write_all(DMAT_MAGIC)?;
    w.write_all(&(m.rows() as u64).to_le_bytes())?;
    w.write_all(&(m.cols() as u64).to_le_bytes())?;
    for x in m.as_slice() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dmat<R: Read>(mut r: R) -> Result<DenseMatrix> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("DMAT1", "truncated header"))?;
    if &magic != DMAT_MAGIC {
        return Err(Error::format("DMAT1", "bad magic"));
    }
    let rows = read_u64(&mut r)? as usize;
    let cols = read_u64(&mut r)? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format("DMAT1", "dimension overflow"))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(Error::format(
            "DMAT1",
            format!("expected {} payload bytes, found {}", len * 8, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DenseMatrix::from_vec_finite(rows, cols, data)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("DMAT1", "truncated header"))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn save_dmat(path: &Path, m: &DenseMatrix) -> Result<()> {
    let mut buf = Vec::with_capacity(22 + 8 * m.as_slice().len());
    write_dmat(&mut buf, m)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_dmat(path: &Path) -> Result<DenseMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_dmat(BufReader::new(fs::File::open(path)?))
}

pub fn read_csv_matrix<R: Read>(r: R) -> Result<DenseMatrix> {
    let mut cols = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let x: f64 = field.trim().parse().map_err(|_| {
                Error::format(
                    "CSV",
                    format!("line {}: cannot parse {field:?}", lineno + 1),
                )
            })?;
            data.push(x);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::format(
                    "CSV",
                    format!("line {}: expected {c} fields, found {count}", lineno + 1),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::format("CSV", "empty file"))?;
    DenseMatrix::from_vec_finite(rows, cols, data)
}

pub fn load_csv_matrix(path: &Path) -> Result<DenseMatrix> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_csv_matrix(fs::File::open(path)?)
}

/// Loads by extension: `.csv` as CSV, anything else as DMAT1.
pub fn load_matrix(path: &Path) -> Result<DenseMatrix> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => load_csv_matrix(path),
        _ => load_dmat(path),
    }
}
