//! Codebook file: `"RVQC"`, version byte, `K` (u32), `D` (u16), channel
//! byte, `K*D` f32 values, CRC-32 of everything before it. Little-endian.

use ndarray::Array2;

use super::Codebook;
use crate::{Error, Result, Scalar};

pub const CODEBOOK_MAGIC: &[u8; 4] = b"RVQC";
pub const CODEBOOK_VERSION: u8 = 1;

const HEADER: usize = 4 + 1 + 4 + 2 + 1;

pub fn write_codebook<T: Scalar>(book: &Codebook<T>, channel: u8) -> Result<Vec<u8>> {
    let (k, d) = (book.size(), book.dim());
    let k32 = u32::try_from(k).map_err(|_| Error::Format("codebook too large".into()))?;
    let d16 = u16::try_from(d).map_err(|_| Error::Format("codevector dimension too large".into()))?;
    let mut out = Vec::with_capacity(HEADER + 4 * k * d + 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.push(CODEBOOK_VERSION);
    out.extend_from_slice(&k32.to_le_bytes());
    out.extend_from_slice(&d16.to_le_bytes());
    out.push(channel);
    for v in book.vectors().iter() {
        out.extend_from_slice(&(v.to64() as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses a codebook file into `(channel, codebook)`.
pub fn read_codebook<T: Scalar>(bytes: &[u8]) -> Result<(u8, Codebook<T>)> {
    if bytes.len() < HEADER + 4 {
        return Err(Error::Format("codebook file truncated".into()));
    }
    if &bytes[..4] != CODEBOOK_MAGIC {
        return Err(Error::Format("not a codebook file".into()));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if bytes[4] != CODEBOOK_VERSION {
        return Err(Error::Version {
            found: bytes[4] as u32,
            expected: CODEBOOK_VERSION as u32,
        });
    }
    let k = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let d = u16::from_le_bytes(bytes[9..11].try_into().expect("2 bytes")) as usize;
    let channel = bytes[11];
    let payload = &body[HEADER..];
    if k.checked_mul(d).and_then(|n| n.checked_mul(4)) != Some(payload.len()) {
        return Err(Error::Format(format!("payload length {} does not match {k}x{d}", payload.len())));
    }
    let values: Vec<T> = payload
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
        .collect();
    let vectors = Array2::from_shape_vec((k, d), values).map_err(|e| Error::Format(e.to_string()))?;
    Ok((channel, Codebook::new(vectors)?))
}
