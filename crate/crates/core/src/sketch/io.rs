//! `SKCH1` sketch files.
//!
//! Layout, all integers `u64` little endian and floats `f64` little endian:
//!
//! ```text
//! magic  "SKCH1\0"
//! m, n, B
//! B × { rows_b, row_of[n], value_of[n], trainable[n] as one byte each }
//! ```
//!
//! `row_of` is local to its block; block `b` starts at global row
//! `rows_0 + … + rows_{b-1}`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{SketchBlock, SparseSketch};
use crate::error::{Error, Result};

pub const SKCH_MAGIC: &[u8; 6] = b"SKCH1\0";

pub fn write_sketch<W: Write>(mut w: W, s: &SparseSketch) -> Result<()> {
    w.write_all(SKCH_MAGIC)?;
    for x in [s.m(), s.n(), s.blocks().len()] {
        w.write_all(&(x as u64).to_le_bytes())?;
    }
    for b in s.blocks() {
        w.write_all(&(b.rows as u64).to_le_bytes())?;
        for &r in &b.row_of {
            w.write_all(&(r as u64).to_le_bytes())?;
        }
        for &v in &b.value_of {
            w.write_all(&v.to_le_bytes())?;
        }
        let mask: Vec<u8> = b.trainable.iter().map(|&t| t as u8).collect();
        w.write_all(&mask)?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.buf.len() < len {
            return Err(Error::format("SKCH1", "truncated"));
        }
        let (head, tail) = self.buf.split_at(len);
        self.buf = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_sketch<R: Read>(mut r: R) -> Result<SparseSketch> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { buf: &bytes };
    if c.take(6)? != SKCH_MAGIC {
        return Err(Error::format("SKCH1", "bad magic"));
    }
    let m = c.u64()? as usize;
    let n = c.u64()? as usize;
    let nblocks = c.u64()? as usize;
    let mut blocks = Vec::with_capacity(nblocks.min(1024));
    for _ in 0..nblocks {
        let rows = c.u64()? as usize;
        let row_of = (0..n)
            .map(|_| c.u64().map(|x| x as usize))
            .collect::<Result<Vec<_>>>()?;
        let value_of = (0..n).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        let trainable = c
            .take(n)?
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::format("SKCH1", format!("bad mask byte {b}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let block = SketchBlock::new(rows, row_of, value_of, trainable)
            .map_err(|e| Error::format("SKCH1", e.to_string()))?;
        blocks.push(block);
    }
    if !c.buf.is_empty() {
        return Err(Error::format("SKCH1", "trailing bytes"));
    }
    let s =
        SparseSketch::from_blocks(n, blocks).map_err(|e| Error::format("SKCH1", e.to_string()))?;
    if s.m() != m {
        return Err(Error::format(
            "SKCH1",
            format!("header says m={m}, blocks sum to {}", s.m()),
        ));
    }
    Ok(s)
}

pub fn save_sketch(path: &Path, s: &SparseSketch) -> Result<()> {
    let mut buf = Vec::new();
    write_sketch(&mut buf, s)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_sketch(path: &Path) -> Result<SparseSketch> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_sketch(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{concat_sketches, sparse_random_sketch};

    #[test]
    fn header_layout() {
        let s = sparse_random_sketch(2, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_sketch(&mut buf, &s).unwrap();
        assert_eq!(&buf[..6], b"SKCH1\0");
        assert_eq!(&buf[6..14], &2u64.to_le_bytes());
        assert_eq!(&buf[14..22], &3u64.to_le_bytes());
        assert_eq!(&buf[22..30], &1u64.to_le_bytes());
        // rows + 3 rows + 3 values + 3 mask bytes
        assert_eq!(buf.len(), 30 + 8 + 24 + 24 + 3);
    }

    #[test]
    fn roundtrip_with_blocks_and_odd_values() {
        let mut s1 = sparse_random_sketch(3, 7, 1).unwrap();
        s1.set_values(&[0.1, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 3.0, 7.0])
            .unwrap();
        let mut s2 = sparse_random_sketch(2, 7, 2).unwrap();
        s2.set_trainable(false);
        let s = concat_sketches(&s1, &s2).unwrap();
        let mut buf = Vec::new();
        write_sketch(&mut buf, &s).unwrap();
        let back = read_sketch(&buf[..]).unwrap();
        assert_eq!(back.blocks().len(), 2);
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(back.values()), bits(s.values()));
        assert_eq!(back.trainable_mask(), s.trainable_mask());
        assert_eq!(back.row_of(), s.row_of());
    }

    #[test]
    fn rejects_corruption() {
        let s = sparse_random_sketch(2, 3, 1).unwrap();
        let mut buf = Vec::new();
        write_sketch(&mut buf, &s).unwrap();
        let mut bad = buf.clone();
        *bad.last_mut().unwrap() = 7;
        assert!(read_sketch(&bad[..]).is_err());
        let mut bad = buf.clone();
        bad[6] = 9;
        assert!(read_sketch(&bad[..]).is_err());
        assert!(read_sketch(&buf[..buf.len() - 1]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_sketch(&long[..]).is_err());
    }
}
