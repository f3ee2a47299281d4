//! Binary cache for a basis chain and its compressed operators.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CTEB" | u32 version | u32 levels | u32 original_dim
//! per level: u32 rows | u32 cols | f64 residual
//!            rows*cols f64 basis (row-major)
//!            cols f64 retained values
//!            cols*cols f64 operator (row-major)
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::{BasisChain, CompressedOperator};

pub const CACHE_MAGIC: &[u8; 4] = b"CTEB";
pub const CACHE_VERSION: u32 = 1;

pub fn write_chain_cache<W: Write>(mut w: W, chain: &BasisChain, operators: &[CompressedOperator]) -> Result<()> {
    if operators.len() != chain.depth() {
        return Err(Error::Dimension(format!(
            "{} operators for a chain of depth {}",
            operators.len(),
            chain.depth()
        )));
    }
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    w.write_u32::<LittleEndian>(to_u32(chain.depth())?)?;
    w.write_u32::<LittleEndian>(to_u32(chain.original_dim)?)?;
    for (k, basis) in chain.bases.iter().enumerate() {
        let (rows, cols) = basis.shape();
        w.write_u32::<LittleEndian>(to_u32(rows)?)?;
        w.write_u32::<LittleEndian>(to_u32(cols)?)?;
        w.write_f64::<LittleEndian>(chain.residuals[k])?;
        write_row_major(&mut w, basis)?;
        let retained = &chain.retained[k];
        if retained.len() != cols {
            return Err(Error::Dimension(format!("level {} keeps {} values for {cols} columns", k + 1, retained.len())));
        }
        for s in retained {
            w.write_f64::<LittleEndian>(*s)?;
        }
        let op = &operators[k].matrix;
        if op.shape() != (cols, cols) {
            return Err(Error::Dimension(format!("level {} operator is {:?}, expected {cols}x{cols}", k + 1, op.shape())));
        }
        write_row_major(&mut w, op)?;
    }
    Ok(())
}

pub fn read_chain_cache<R: Read>(mut r: R) -> Result<(BasisChain, Vec<CompressedOperator>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Cache("file too short".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let levels = read_u32(&mut r)? as usize;
    let original_dim = read_u32(&mut r)? as usize;
    let mut chain = BasisChain {
        original_dim,
        bases: Vec::with_capacity(levels),
        retained: Vec::with_capacity(levels),
        residuals: Vec::with_capacity(levels),
    };
    let mut operators = Vec::with_capacity(levels);
    let mut expected_rows = original_dim;
    for level in 1..=levels {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        if rows != expected_rows || cols > rows || cols == 0 {
            return Err(Error::Cache(format!("level {level} has inconsistent shape {rows}x{cols}")));
        }
        let residual = read_f64(&mut r)?;
        let basis = read_row_major(&mut r, rows, cols)?;
        let retained = (0..cols).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        let matrix = read_row_major(&mut r, cols, cols)?;
        chain.bases.push(basis);
        chain.retained.push(retained);
        chain.residuals.push(residual);
        operators.push(CompressedOperator { level, matrix });
        expected_rows = cols;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Cache("trailing bytes after last level".into()));
    }
    Ok((chain, operators))
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::TooLarge(format!("dimension {n} does not fit the cache format")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(|_| Error::Cache("truncated file".into()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    r.read_f64::<LittleEndian>().map_err(|_| Error::Cache("truncated file".into()))
}

fn write_row_major<W: Write>(w: &mut W, m: &DMatrix<f64>) -> Result<()> {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_f64::<LittleEndian>(m[(i, j)])?;
        }
    }
    Ok(())
}

fn read_row_major<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(read_f64(r)?);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multiscale::{build_chain, ChainConfig, Truncation};

    fn sample() -> (BasisChain, Vec<CompressedOperator>) {
        let m = DMatrix::from_fn(5, 5, |r, c| 1.0 / (1.0 + r as f64 + 2.0 * c as f64));
        let cfg = ChainConfig::svd(Truncation::RetainCount(3), 2).unwrap();
        build_chain(&m, &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (chain, ops) = sample();
        let mut buf = Vec::new();
        write_chain_cache(&mut buf, &chain, &ops).unwrap();
        assert_eq!(&buf[..4], b"CTEB");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        let (back, back_ops) = read_chain_cache(buf.as_slice()).unwrap();
        assert_eq!(back, chain);
        assert_eq!(back_ops, ops);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let (chain, ops) = sample();
        let mut buf = Vec::new();
        write_chain_cache(&mut buf, &chain, &ops).unwrap();

        let mut bad_magic = buf.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_chain_cache(bad_magic.as_slice()), Err(Error::Cache(_))));

        let mut bad_version = buf.clone();
        bad_version[4] = 9;
        assert!(matches!(read_chain_cache(bad_version.as_slice()), Err(Error::Cache(_))));

        let truncated = &buf[..buf.len() - 3];
        assert!(matches!(read_chain_cache(truncated), Err(Error::Cache(_))));

        let mut trailing = buf.clone();
        trailing.push(0);
        assert!(matches!(read_chain_cache(trailing.as_slice()), Err(Error::Cache(_))));
    }
}
