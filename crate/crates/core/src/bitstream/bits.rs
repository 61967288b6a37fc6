//! MSB-first bit packing.

use crate::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `n` bits of `value`, most significant first.
    pub fn write(&mut self, value: u64, n: u32) {
        debug_assert!(n <= 64);
        for i in (0..n).rev() {
            let bit = (value >> i) & 1;
            let pos = (self.len % 8) as u32;
            if pos == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().expect("byte pushed") |= 0x80 >> pos;
            }
            self.len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    /// Packed bytes; padding bits are zero.
    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.len)
    }
}

#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    len: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    /// Reader over the first `len` bits of `bytes`.
    pub fn new(bytes: &'a [u8], len: u64) -> Result<Self> {
        if len > bytes.len() as u64 * 8 {
            return Err(Error::CorruptStream {
                offset: bytes.len() as u64 * 8,
                reason: format!("bit length {len} exceeds buffer"),
            });
        }
        Ok(Self { bytes, len, pos: 0 })
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.len - self.pos
    }

    pub fn read_bit(&mut self) -> Result<u32> {
        if self.pos >= self.len {
            return Err(Error::CorruptStream {
                offset: self.pos,
                reason: "premature end of payload".into(),
            });
        }
        let b = self.bytes[(self.pos / 8) as usize] >> (7 - (self.pos % 8)) & 1;
        self.pos += 1;
        Ok(b as u32)
    }

    pub fn read(&mut self, n: u32) -> Result<u64> {
        if (n as u64) > self.remaining() {
            return Err(Error::CorruptStream {
                offset: self.len,
                reason: format!("need {n} bits at {}, payload ends", self.pos),
            });
        }
        let mut v = 0u64;
        for _ in 0..n {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Ok(v)
    }
}
