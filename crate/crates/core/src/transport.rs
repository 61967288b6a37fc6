//! Sender/receiver exchange of hologram bitstreams over any reliable byte
//! stream. Codebooks are pre-distributed through a registry directory
//! (`books/<channel>/<level>/<K>.rvqc`); only headers and index payloads
//! travel on the wire, each stream in a frame with a u32 LE length prefix.

use std::collections::BTreeMap;
use std::fs;
use std::io::{ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use crate::bitstream::{HoloBitstream, StreamHeader};
use crate::codec::{HoloCodec, Level, Sample};
use crate::optics::PhaseMap;
use crate::vq::{read_codebook, write_codebook, Codebook};
use crate::{Error, Result, Scalar};

/// Frames above this size are refused before any allocation.
pub const MAX_FRAME: usize = 64 << 20;

/// Read-only map `(channel, level, K) -> codebook`.
#[derive(Clone, Debug, Default)]
pub struct CodebookRegistry<T: Scalar> {
    books: BTreeMap<(u8, Level, usize), Codebook<T>>,
}

fn level_dir(level: Level) -> &'static str {
    level.name()
}

impl<T: Scalar> CodebookRegistry<T> {
    pub fn new() -> Self {
        Self { books: BTreeMap::new() }
    }

    pub fn insert(&mut self, channel: u8, level: Level, book: Codebook<T>) {
        self.books.insert((channel, level, book.size()), book);
    }

    pub fn get(&self, channel: u8, level: Level, size: usize) -> Result<&Codebook<T>> {
        self.books.get(&(channel, level, size)).ok_or(Error::RegistryMiss {
            channel,
            level: level.name(),
            size,
        })
    }

    /// `(bottom, top)` books of one size.
    pub fn pair(&self, channel: u8, size: usize) -> Result<(&Codebook<T>, &Codebook<T>)> {
        Ok((self.get(channel, Level::Bottom, size)?, self.get(channel, Level::Top, size)?))
    }

    pub fn len(&self) -> usize {
        self.books.len()
    }

    pub fn is_empty(&self) -> bool {
        self.books.is_empty()
    }

    /// Sizes registered for both levels of `channel`.
    pub fn sizes(&self, channel: u8) -> Vec<usize> {
        self.books
            .keys()
            .filter(|(c, l, k)| *c == channel && *l == Level::Bottom && self.books.contains_key(&(*c, Level::Top, *k)))
            .map(|k| k.2)
            .collect()
    }

    /// Adapted books of every size in `sizes` for both levels of `model`.
    pub fn from_model(model: &HoloCodec<T>, sizes: &[usize]) -> Result<Self> {
        let mut reg = Self::new();
        for &k in sizes {
            let (b, t) = model.books_for(k, k)?;
            reg.insert(model.channel, Level::Bottom, b);
            reg.insert(model.channel, Level::Top, t);
        }
        Ok(reg)
    }

    /// Writes every book under `root`; returns the files written.
    pub fn export(&self, root: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for ((channel, level, k), book) in &self.books {
            let dir = root.join(channel.to_string()).join(level_dir(*level));
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{k}.rvqc"));
            fs::write(&path, write_codebook(book, *channel)?)?;
            out.push(path);
        }
        Ok(out)
    }

    /// Loads every `<channel>/<level>/<K>.rvqc` under `root`. Each file must
    /// pass its checksum and agree with its path.
    pub fn load(root: &Path) -> Result<Self> {
        let mut reg = Self::new();
        for ch in fs::read_dir(root)? {
            let ch = ch?;
            let Some(channel) = ch.file_name().to_str().and_then(|s| s.parse::<u8>().ok()) else {
                continue;
            };
            for level in [Level::Bottom, Level::Top] {
                let dir = ch.path().join(level_dir(level));
                if !dir.is_dir() {
                    continue;
                }
                for f in fs::read_dir(&dir)? {
                    let path = f?.path();
                    if path.extension().and_then(|e| e.to_str()) != Some("rvqc") {
                        continue;
                    }
                    let (file_channel, book) = read_codebook::<T>(&fs::read(&path)?)?;
                    let named = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<usize>().ok());
                    if file_channel != channel || named != Some(book.size()) {
                        return Err(Error::Format(format!("{} does not match its contents", path.display())));
                    }
                    reg.insert(channel, level, book);
                }
            }
        }
        Ok(reg)
    }
}

/// Writes one length-prefixed frame; returns the bytes written.
pub fn write_frame<W: Write>(conn: &mut W, payload: &[u8]) -> Result<usize> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l as usize <= MAX_FRAME)
        .ok_or_else(|| Error::Protocol(format!("frame of {} bytes exceeds the limit", payload.len())))?;
    let mut written = 0;
    for part in [&len.to_le_bytes()[..], payload] {
        let mut rest = part;
        while !rest.is_empty() {
            match conn.write(rest) {
                Ok(0) => {
                    return Err(Error::Connection {
                        written,
                        source: ErrorKind::WriteZero.into(),
                    })
                }
                Ok(n) => {
                    written += n;
                    rest = &rest[n..];
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(source) => return Err(Error::Connection { written, source }),
            }
        }
    }
    conn.flush().map_err(|source| Error::Connection { written, source })?;
    Ok(written)
}

fn read_full<R: Read>(conn: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match conn.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(source) => return Err(Error::Connection { written: 0, source }),
        }
    }
    Ok(got)
}

/// Reads one frame payload; `None` on a clean end of stream.
pub fn read_frame<R: Read>(conn: &mut R) -> Result<Option<Vec<u8>>> {
    let mut prefix = [0u8; 4];
    match read_full(conn, &mut prefix)? {
        0 => return Ok(None),
        4 => {}
        n => return Err(Error::Protocol(format!("truncated length prefix ({n} of 4 bytes)"))),
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame length {len} exceeds the limit")));
    }
    let mut payload = vec![0u8; len];
    let got = read_full(conn, &mut payload)?;
    if got != len {
        return Err(Error::Protocol(format!("truncated frame ({got} of {len} bytes)")));
    }
    Ok(Some(payload))
}

/// One side of the exchange: a trained codec and the shared registry.
#[derive(Clone, Copy, Debug)]
pub struct Endpoint<'a, T: Scalar> {
    pub model: &'a HoloCodec<T>,
    pub registry: &'a CodebookRegistry<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Received<T: Scalar> {
    pub stream: HoloBitstream,
    pub phase: PhaseMap<T>,
    /// Bytes consumed from the connection, prefix included.
    pub wire_bytes: usize,
}

impl<'a, T: Scalar> Endpoint<'a, T> {
    pub fn new(model: &'a HoloCodec<T>, registry: &'a CodebookRegistry<T>) -> Self {
        Self { model, registry }
    }

    /// Compresses `sample` with the registry books of size `qos` at both
    /// levels.
    pub fn encode(&self, sample: &Sample<T>, qos: usize, huffman: bool) -> Result<HoloBitstream> {
        let m = self.model;
        let (bottom, top) = self.registry.pair(m.channel, qos)?;
        let (ib, it) = m.codec.compress(&sample.input, bottom, top)?;
        let header = StreamHeader::new(m.profile(), &m.optics, m.channel, sample.frame(), qos, qos, huffman)?;
        HoloBitstream::encode(header, &ib, &it)
    }

    /// Phase map of a parsed stream using the books its header names.
    pub fn decode(&self, stream: &HoloBitstream) -> Result<PhaseMap<T>> {
        let h = &stream.header;
        let bottom = self.registry.get(h.channel, Level::Bottom, h.k_bottom())?;
        let top = self.registry.get(h.channel, Level::Top, h.k_top())?;
        let (ib, it) = stream.indices()?;
        self.model.codec.decompress(&ib, &it, bottom, top)
    }

    /// Encodes, frames and writes; returns the bytes written.
    pub fn send<W: Write>(&self, sample: &Sample<T>, qos: usize, huffman: bool, conn: &mut W) -> Result<usize> {
        let stream = self.encode(sample, qos, huffman)?;
        write_frame(conn, &stream.serialize())
    }

    /// Next frame from `conn`; `None` at end of stream. A frame that fails
    /// validation is consumed whole, so the connection stays usable.
    pub fn receive<R: Read>(&self, conn: &mut R) -> Result<Option<Received<T>>> {
        let Some(payload) = read_frame(conn)? else {
            return Ok(None);
        };
        let stream = HoloBitstream::parse(&payload)?;
        let phase = self.decode(&stream)?;
        Ok(Some(Received {
            stream,
            phase,
            wire_bytes: payload.len() + 4,
        }))
    }
}
