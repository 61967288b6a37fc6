//! Multi-channel container: `"RAVM"`, version u8, count u8, then per
//! channel `(channel:u8, offset:u32, length:u32)` with offsets relative to
//! the start of the data section, the concatenated streams, and a CRC-32 of
//! everything before it.

use super::HoloBitstream;
use crate::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"RAVM";
const CONTAINER_VERSION: u8 = 1;

pub fn pack_channels(streams: &[HoloBitstream]) -> Result<Vec<u8>> {
    if streams.is_empty() || streams.len() > u8::MAX as usize {
        return Err(Error::Format(format!("{} channels cannot be packed", streams.len())));
    }
    let mut seen = streams.iter().map(|s| s.header.channel).collect::<Vec<_>>();
    seen.sort_unstable();
    if seen.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Format("duplicate channel id".into()));
    }
    let mut out = CONTAINER_MAGIC.to_vec();
    out.extend_from_slice(&[CONTAINER_VERSION, streams.len() as u8]);
    let data: Vec<Vec<u8>> = streams.iter().map(|s| s.serialize()).collect();
    let mut offset = 0u32;
    for (s, d) in streams.iter().zip(&data) {
        let len = u32::try_from(d.len()).map_err(|_| Error::Format("stream too large".into()))?;
        out.push(s.header.channel);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
        offset = offset
            .checked_add(len)
            .ok_or_else(|| Error::Format("container too large".into()))?;
    }
    for d in data {
        out.extend(d);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn unpack_channels(bytes: &[u8]) -> Result<Vec<HoloBitstream>> {
    if bytes.len() < 10 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::Format("missing RAVM magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    if body[4] != CONTAINER_VERSION {
        return Err(Error::Version {
            found: body[4] as u32,
            expected: CONTAINER_VERSION as u32,
        });
    }
    let n = body[5] as usize;
    let data_start = 6 + 9 * n;
    if n == 0 || body.len() < data_start {
        return Err(Error::Format("truncated channel table".into()));
    }
    let data = &body[data_start..];
    let mut expected = 0usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let e = &body[6 + 9 * i..6 + 9 * (i + 1)];
        let channel = e[0];
        let offset = u32::from_le_bytes(e[1..5].try_into().expect("4 bytes")) as usize;
        let len = u32::from_le_bytes(e[5..9].try_into().expect("4 bytes")) as usize;
        if offset != expected || data.len() - offset < len {
            return Err(Error::Format(format!("channel {channel} has a bad offset or length")));
        }
        expected = offset + len;
        let s = HoloBitstream::parse(&data[offset..expected])?;
        if s.header.channel != channel || out.iter().any(|o: &HoloBitstream| o.header.channel == channel) {
            return Err(Error::Format(format!("channel table entry {channel} does not match its stream")));
        }
        out.push(s);
    }
    if expected != data.len() {
        return Err(Error::Format("unreferenced bytes in container".into()));
    }
    Ok(out)
}
