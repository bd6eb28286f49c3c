//! `.spkw` parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//! magic `SPKW`, version, parameter count, then per parameter the name length,
//! UTF-8 name bytes, rank, each dimension, and the values as `f32` LE.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{DiffError, Result};
use crate::params::NetworkParams;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPKW";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> DiffError {
    DiffError::Checkpoint(msg.into())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_params(params: &NetworkParams, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.entries() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads a checkpoint. The seed is not stored in the file and is set to 0.
pub fn read_params(r: &mut impl Read) -> Result<NetworkParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(r)?;
    let mut params = NetworkParams::empty(0);
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| bad("parameter name is not UTF-8"))?;
        let rank = read_u32(r)? as usize;
        if !(1..=4).contains(&rank) {
            return Err(bad(format!("parameter '{name}' has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        params.push(name, Tensor::new(&dims, data)?);
    }
    Ok(params)
}

pub fn save(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<NetworkParams> {
    read_params(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamBuilder;

    #[test]
    fn header_layout() {
        let p = NetworkParams::from_entries(0, vec![("ab".into(), Tensor::scalar(1.0))]);
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let mut expect = b"SPKW".to_vec();
        for v in [1u32, 1, 2] {
            expect.extend(v.to_le_bytes());
        }
        expect.extend(b"ab");
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1.0f32.to_le_bytes());
        assert_eq!(buf, expect);
    }

    #[test]
    fn round_trip_and_bad_magic() {
        let mut b = ParamBuilder::new(3);
        b.fan_in("conv.w", &[4, 2, 3, 3], 18).fan_in("conv.b", &[4], 18);
        let p = b.build();
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        let back = read_params(&mut buf.as_slice()).unwrap();
        assert_eq!(back.entries(), p.entries());
        buf[0] = b'X';
        assert!(matches!(read_params(&mut buf.as_slice()), Err(DiffError::Checkpoint(_))));
    }
}
