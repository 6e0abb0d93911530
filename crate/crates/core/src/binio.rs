//! Little-endian primitives shared by the binary artifact formats.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::diffcore::Tensor;
use crate::error::{MufiError, Result};

pub fn write_magic<W: Write>(w: &mut W, magic: &[u8; 8]) -> Result<()> {
    w.write_all(magic)?;
    Ok(())
}

/// Reads 8 bytes and rejects anything but `magic`. A matching 7-byte stem
/// with a different trailing version digit is reported as a version mismatch.
pub fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| MufiError::Format("file too short for header".into()))?;
    if &buf == magic {
        return Ok(());
    }
    let want = String::from_utf8_lossy(magic);
    let got = String::from_utf8_lossy(&buf);
    if buf[..7] == magic[..7] {
        Err(MufiError::Format(format!(
            "version mismatch: expected {want}, found {got}"
        )))
    } else {
        Err(MufiError::Format(format!("bad magic: expected {want}, found {got:?}")))
    }
}

pub fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| MufiError::Format(format!("{v} exceeds u32")))?;
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<usize> {
    Ok(r.read_u32::<LittleEndian>().map_err(truncated)? as usize)
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_u64::<LittleEndian>(v)?;
    Ok(())
}

pub fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    r.read_u64::<LittleEndian>().map_err(truncated)
}

pub fn write_f64s<W: Write>(w: &mut W, vs: &[f64]) -> Result<()> {
    for &v in vs {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out).map_err(truncated)?;
    Ok(out)
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)?;
    if n > 1 << 24 {
        return Err(MufiError::Format(format!("string length {n} implausible")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| MufiError::Format("invalid utf-8 string".into()))
}

/// Shape (rank, extents) followed by values.
pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    write_u32(w, t.ndim())?;
    for &e in t.shape() {
        write_u32(w, e)?;
    }
    write_f64s(w, t.data())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = read_u32(r)?;
    if rank > 8 {
        return Err(MufiError::Format(format!("tensor rank {rank} implausible")));
    }
    let shape = (0..rank).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    if n > 1 << 28 {
        return Err(MufiError::Format(format!("tensor of {n} values implausible")));
    }
    let data = read_f64s(r, n)?;
    Tensor::new(shape, data).map_err(|e| MufiError::Format(e.to_string()))
}

fn truncated(e: std::io::Error) -> MufiError {
    MufiError::Format(format!("truncated file: {e}"))
}
