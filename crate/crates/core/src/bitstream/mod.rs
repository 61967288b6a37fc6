//! Hologram bitstream: entropy-coded codebook indices in a self-describing,
//! checksummed container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "RAVQ" version:u8 channel:u8 profile:u8 log2K_bottom:u8 log2K_top:u8
//! bottom(h,w):u16x2 top(h,w):u16x2 frame(H,W):u16x2 roi(h,w):u16x2
//! wavelength_nm:f32 pitch_um:f32 distance_mm:f32 flags:u8
//! per level (bottom, top):
//!     symbols:u16 (symbol:u16 length:u8)*symbols bit_len:u32 bytes
//! crc32:u32
//! ```
//!
//! `profile` is log2 of the bottom downsampling factor. Flag bit 0 selects
//! Huffman coding; without it every index takes `log2 K` bits and the symbol
//! list is empty.

mod bits;
mod container;
mod huffman;

pub use bits::{BitReader, BitWriter};
pub use container::{pack_channels, unpack_channels, CONTAINER_MAGIC};
pub use huffman::{build_huffman, histogram, HuffmanTable, MAX_CODE_LEN};

use crate::codec::CodecProfile;
use crate::optics::{OpticsConfig, DEFAULT_PAD_FACTOR};
use crate::vq::IndexGrid;
use crate::{Error, Result};

/// Largest codebook size a stream can address.
pub const MAX_CODEBOOK: usize = 32768;
pub const STREAM_MAGIC: &[u8; 4] = b"RAVQ";
pub const STREAM_VERSION: u8 = 1;
const FLAG_HUFFMAN: u8 = 1;
/// Bytes before the first level payload.
pub const HEADER_BYTES: usize = 4 + 5 + 16 + 12 + 1;

/// Everything in a stream except the payloads.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub channel: u8,
    pub profile: u8,
    pub log2_k_bottom: u8,
    pub log2_k_top: u8,
    pub bottom: (u16, u16),
    pub top: (u16, u16),
    pub frame: (u16, u16),
    pub roi: (u16, u16),
    pub wavelength_nm: f32,
    pub pitch_um: f32,
    pub distance_mm: f32,
    pub huffman: bool,
}

/// Coded indices of one latent level.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelPayload {
    /// Present only in Huffman mode with a nonempty grid.
    pub table: Option<HuffmanTable>,
    pub bit_len: u32,
    pub bits: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoloBitstream {
    pub header: StreamHeader,
    pub bottom: LevelPayload,
    pub top: LevelPayload,
}

fn dim16(what: &str, d: (usize, usize)) -> Result<(u16, u16)> {
    match (u16::try_from(d.0), u16::try_from(d.1)) {
        (Ok(a), Ok(b)) => Ok((a, b)),
        _ => Err(Error::InvalidConfig(format!("{what} {d:?} exceeds 16-bit dimensions"))),
    }
}

/// `log2 k` for a power-of-two `k` in `1..=MAX_CODEBOOK`.
pub fn size_id(k: usize) -> Result<u8> {
    if k == 0 || !k.is_power_of_two() || k > MAX_CODEBOOK {
        return Err(Error::Range {
            what: "stream codebook size (power of two)",
            value: k,
            min: 1,
            max: MAX_CODEBOOK,
        });
    }
    Ok(k.trailing_zeros() as u8)
}

fn cells(d: (u16, u16)) -> usize {
    d.0 as usize * d.1 as usize
}

impl StreamHeader {
    /// Header for a frame coded by `profile` with codebooks of `k_bottom` and
    /// `k_top` entries.
    pub fn new(
        profile: &CodecProfile,
        optics: &OpticsConfig,
        channel: u8,
        frame: (usize, usize),
        k_bottom: usize,
        k_top: usize,
        huffman: bool,
    ) -> Result<Self> {
        profile.check_frame(frame)?;
        let roi = optics.roi_in(frame)?;
        Ok(Self {
            channel,
            profile: profile.geometry_id(),
            log2_k_bottom: size_id(k_bottom)?,
            log2_k_top: size_id(k_top)?,
            bottom: dim16("bottom grid", profile.bottom_shape(frame))?,
            top: dim16("top grid", profile.top_shape(frame))?,
            frame: dim16("frame", frame)?,
            roi: dim16("roi", roi)?,
            wavelength_nm: (optics.wavelength * 1e9) as f32,
            pitch_um: (optics.pixel_pitch * 1e6) as f32,
            distance_mm: (optics.distance * 1e3) as f32,
            huffman,
        })
    }

    pub fn k_bottom(&self) -> usize {
        1 << self.log2_k_bottom
    }

    pub fn k_top(&self) -> usize {
        1 << self.log2_k_top
    }

    pub fn frame_pixels(&self) -> usize {
        cells(self.frame)
    }

    /// Optics recorded in the stream (single precision), with the default
    /// padding factor.
    pub fn optics(&self) -> OpticsConfig {
        OpticsConfig {
            wavelength: self.wavelength_nm as f64 * 1e-9,
            pixel_pitch: self.pitch_um as f64 * 1e-6,
            distance: self.distance_mm as f64 * 1e-3,
            pad_factor: DEFAULT_PAD_FACTOR,
            roi: (self.roi.0 as usize, self.roi.1 as usize),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Format(reason));
        if self.log2_k_bottom as usize > MAX_CODEBOOK.trailing_zeros() as usize
            || self.log2_k_top as usize > MAX_CODEBOOK.trailing_zeros() as usize
        {
            return bad("codebook size id out of range".into());
        }
        if !(1..=8).contains(&self.profile) {
            return bad(format!("unknown profile id {}", self.profile));
        }
        let fb = 1usize << self.profile;
        let (h, w) = (self.frame.0 as usize, self.frame.1 as usize);
        if h == 0 || w == 0 || h % (2 * fb) != 0 || w % (2 * fb) != 0 {
            return bad(format!("frame {:?} does not fit profile {}", self.frame, self.profile));
        }
        if cells(self.bottom) * fb * fb != h * w
            || self.bottom != ((h / fb) as u16, (w / fb) as u16)
            || self.top != ((h / fb / 2) as u16, (w / fb / 2) as u16)
        {
            return bad("latent geometry inconsistent with frame".into());
        }
        if self.roi.0 == 0 || self.roi.1 == 0 || self.roi.0 > self.frame.0 || self.roi.1 > self.frame.1 {
            return bad(format!("roi {:?} outside frame", self.roi));
        }
        for v in [self.wavelength_nm, self.pitch_um, self.distance_mm] {
            if !v.is_finite() {
                return bad("non-finite optics field".into());
            }
        }
        if !(self.wavelength_nm > 0.0 && self.pitch_um > 0.0) {
            return bad("wavelength and pitch must be positive".into());
        }
        Ok(())
    }
}

fn encode_level(grid: &IndexGrid, k: usize, huffman: bool) -> Result<LevelPayload> {
    let symbols: Vec<u32> = grid.data.iter().copied().collect();
    let hist = histogram(&symbols, k)?;
    if huffman {
        if symbols.is_empty() {
            return Ok(LevelPayload { table: None, bit_len: 0, bits: Vec::new() });
        }
        let table = build_huffman(&hist)?;
        let (bits, len) = table.encode(&symbols)?;
        let bit_len = u32::try_from(len).map_err(|_| Error::Coding("payload exceeds 2^32 bits".into()))?;
        Ok(LevelPayload { table: Some(table), bit_len, bits })
    } else {
        let n = k.trailing_zeros();
        let mut w = BitWriter::new();
        for &s in &symbols {
            w.write(s as u64, n);
        }
        let (bits, len) = w.finish();
        let bit_len = u32::try_from(len).map_err(|_| Error::Coding("payload exceeds 2^32 bits".into()))?;
        Ok(LevelPayload { table: None, bit_len, bits })
    }
}

fn decode_level(p: &LevelPayload, shape: (u16, u16), k: usize, huffman: bool) -> Result<IndexGrid> {
    let n = cells(shape);
    let symbols = if huffman {
        match &p.table {
            Some(t) => {
                let s = t.decode(&p.bits, p.bit_len as u64, n)?;
                let used: u64 = s.iter().map(|&v| t.length_of(v).unwrap_or(0) as u64).sum();
                if used != p.bit_len as u64 {
                    return Err(Error::CorruptStream {
                        offset: used,
                        reason: "trailing bits after the last symbol".into(),
                    });
                }
                s
            }
            None if n == 0 => Vec::new(),
            None => return Err(Error::Format("Huffman payload without a code table".into())),
        }
    } else {
        let width = k.trailing_zeros();
        if p.bit_len as u64 != n as u64 * width as u64 {
            return Err(Error::Format("fixed-length payload has the wrong size".into()));
        }
        let mut r = BitReader::new(&p.bits, p.bit_len as u64)?;
        (0..n).map(|_| r.read(width).map(|v| v as u32)).collect::<Result<_>>()?
    };
    let grid = IndexGrid::from_vec((shape.0 as usize, shape.1 as usize), symbols)?;
    grid.check_below(k)?;
    Ok(grid)
}

impl HoloBitstream {
    pub fn encode(header: StreamHeader, bottom: &IndexGrid, top: &IndexGrid) -> Result<Self> {
        header.validate()?;
        let want = |g: &IndexGrid, d: (u16, u16), what: &str| {
            if g.shape() != (d.0 as usize, d.1 as usize) {
                return Err(Error::Shape(format!("{what} grid {:?} expected {d:?}", g.shape())));
            }
            Ok(())
        };
        want(bottom, header.bottom, "bottom")?;
        want(top, header.top, "top")?;
        Ok(Self {
            bottom: encode_level(bottom, header.k_bottom(), header.huffman)?,
            top: encode_level(top, header.k_top(), header.huffman)?,
            header,
        })
    }

    /// `(bottom, top)` index grids.
    pub fn indices(&self) -> Result<(IndexGrid, IndexGrid)> {
        let h = &self.header;
        Ok((
            decode_level(&self.bottom, h.bottom, h.k_bottom(), h.huffman)?,
            decode_level(&self.top, h.top, h.k_top(), h.huffman)?,
        ))
    }

    pub fn serialize(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(STREAM_MAGIC);
        out.extend_from_slice(&[STREAM_VERSION, h.channel, h.profile, h.log2_k_bottom, h.log2_k_top]);
        for d in [h.bottom, h.top, h.frame, h.roi] {
            out.extend_from_slice(&d.0.to_le_bytes());
            out.extend_from_slice(&d.1.to_le_bytes());
        }
        for v in [h.wavelength_nm, h.pitch_um, h.distance_mm] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(if h.huffman { FLAG_HUFFMAN } else { 0 });
        for p in [&self.bottom, &self.top] {
            let entries = p.table.as_ref().map(|t| t.entries()).unwrap_or(&[]);
            out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
            for &(s, l) in entries {
                out.extend_from_slice(&s.to_le_bytes());
                out.push(l);
            }
            out.extend_from_slice(&p.bit_len.to_le_bytes());
            out.extend_from_slice(&p.bits);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        let level = |p: &LevelPayload| 2 + 3 * p.table.as_ref().map_or(0, |t| t.len()) + 4 + p.bits.len();
        HEADER_BYTES + level(&self.bottom) + level(&self.top) + 4
    }

    /// Parses and fully validates a stream, including that both payloads
    /// decode to index grids of the declared geometry.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_BYTES + 4 {
            return Err(Error::CorruptStream {
                offset: bytes.len() as u64 * 8,
                reason: "stream shorter than its header".into(),
            });
        }
        if &bytes[..4] != STREAM_MAGIC {
            return Err(Error::Format("missing RAVQ magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = ByteReader { bytes: body, pos: 4 };
        let version = r.u8()?;
        if version != STREAM_VERSION {
            return Err(Error::Version {
                found: version as u32,
                expected: STREAM_VERSION as u32,
            });
        }
        let (channel, profile, log2_k_bottom, log2_k_top) = (r.u8()?, r.u8()?, r.u8()?, r.u8()?);
        let mut dims = [(0u16, 0u16); 4];
        for d in &mut dims {
            *d = (r.u16()?, r.u16()?);
        }
        let (wavelength_nm, pitch_um, distance_mm) = (r.f32()?, r.f32()?, r.f32()?);
        let flags = r.u8()?;
        if flags & !FLAG_HUFFMAN != 0 {
            return Err(Error::Format(format!("unknown flag bits {flags:#04x}")));
        }
        let header = StreamHeader {
            channel,
            profile,
            log2_k_bottom,
            log2_k_top,
            bottom: dims[0],
            top: dims[1],
            frame: dims[2],
            roi: dims[3],
            wavelength_nm,
            pitch_um,
            distance_mm,
            huffman: flags & FLAG_HUFFMAN != 0,
        };
        header.validate()?;
        let bottom = r.level(header.k_bottom(), header.huffman)?;
        let top = r.level(header.k_top(), header.huffman)?;
        if r.pos != body.len() {
            return Err(Error::CorruptStream {
                offset: r.pos as u64 * 8,
                reason: "trailing bytes before the checksum".into(),
            });
        }
        let s = Self { header, bottom, top };
        s.indices()?;
        Ok(s)
    }

    /// Serialized bits per frame pixel.
    pub fn bpp(&self) -> Result<f64> {
        bpp(self.byte_len() as u64 * 8, self.header.frame_pixels())
    }

    /// Bits per frame pixel of the indices alone at `log2 K` bits each.
    pub fn fixed_bpp(&self) -> Result<f64> {
        let h = &self.header;
        fixed_bpp(&[(cells(h.bottom), h.k_bottom()), (cells(h.top), h.k_top())], h.frame_pixels())
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptStream {
                offset: self.bytes.len() as u64 * 8,
                reason: format!("need {n} bytes at byte {}", self.pos),
            });
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn level(&mut self, k: usize, huffman: bool) -> Result<LevelPayload> {
        let n = self.u16()? as usize;
        if n > k || (!huffman && n > 0) {
            return Err(Error::Format(format!("{n} table entries for a {k}-entry codebook")));
        }
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let s = self.u16()?;
            if s as usize >= k {
                return Err(Error::Format(format!("table symbol {s} outside codebook of {k}")));
            }
            entries.push((s, self.u8()?));
        }
        let table = if n > 0 { Some(HuffmanTable::from_lengths(entries)?) } else { None };
        let bit_len = self.u32()?;
        let bytes = (bit_len as usize).div_ceil(8);
        let bits = self.take(bytes)?.to_vec();
        if bit_len % 8 != 0 && bits[bytes - 1] & (0xff >> (bit_len % 8)) != 0 {
            return Err(Error::CorruptStream {
                offset: bit_len as u64,
                reason: "nonzero padding bits".into(),
            });
        }
        Ok(LevelPayload { table, bit_len, bits })
    }
}

/// `bits / pixels`.
pub fn bpp(bits: u64, pixels: usize) -> Result<f64> {
    if pixels == 0 {
        return Err(Error::Domain("bpp needs a positive pixel count".into()));
    }
    Ok(bits as f64 / pixels as f64)
}

/// `sum(cells * ceil(log2 K)) / pixels` over `(cells, K)` levels.
pub fn fixed_bpp(levels: &[(usize, usize)], pixels: usize) -> Result<f64> {
    let bits: u64 = levels
        .iter()
        .map(|&(c, k)| c as u64 * k.max(1).next_power_of_two().trailing_zeros() as u64)
        .sum();
    bpp(bits, pixels)
}

/// Fixed-length bits per pixel of `profile` at the given codebook sizes,
/// for any frame divisible by the top factor.
pub fn profile_fixed_bpp(profile: &CodecProfile, k_bottom: usize, k_top: usize) -> f64 {
    let b = |k: usize| k.max(1).next_power_of_two().trailing_zeros() as f64;
    let fb = profile.bottom_factor as f64;
    let ft = profile.top_factor as f64;
    b(k_bottom) / (fb * fb) + b(k_top) / (ft * ft)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(huffman: bool) -> StreamHeader {
        let optics = OpticsConfig {
            roi: (16, 24),
            ..OpticsConfig::reference(1)
        };
        StreamHeader::new(&CodecProfile::tiny(), &optics, 1, (16, 32), 32, 8, huffman).unwrap()
    }

    fn grids() -> (IndexGrid, IndexGrid) {
        let b = IndexGrid::from_vec((4, 8), (0..32).map(|i| (i * 7 % 5) as u32).collect()).unwrap();
        let t = IndexGrid::from_vec((2, 4), vec![7, 7, 7, 1, 0, 7, 7, 7]).unwrap();
        (b, t)
    }

    #[test]
    fn round_trip_both_modes() {
        let (b, t) = grids();
        for huffman in [true, false] {
            let s = HoloBitstream::encode(header(huffman), &b, &t).unwrap();
            let bytes = s.serialize();
            assert_eq!(bytes.len(), s.byte_len());
            let p = HoloBitstream::parse(&bytes).unwrap();
            assert_eq!(p, s);
            assert_eq!(p.indices().unwrap(), (b.clone(), t.clone()));
        }
        let fixed = HoloBitstream::encode(header(false), &b, &t).unwrap();
        assert_eq!(fixed.bottom.bit_len, 32 * 5);
        assert_eq!(fixed.top.bit_len, 8 * 3);
        assert_eq!(fixed.fixed_bpp().unwrap(), (32.0 * 5.0 + 8.0 * 3.0) / 512.0);
    }

    #[test]
    fn header_fields_little_endian() {
        let (b, t) = grids();
        let bytes = HoloBitstream::encode(header(true), &b, &t).unwrap().serialize();
        assert_eq!(&bytes[..4], b"RAVQ");
        assert_eq!(&bytes[4..9], &[1, 1, 2, 5, 3]);
        assert_eq!(&bytes[9..13], &[4, 0, 8, 0]);
        assert_eq!(&bytes[17..21], &[16, 0, 32, 0]);
        assert_eq!(&bytes[21..25], &[16, 0, 24, 0]);
        assert_eq!(f32::from_le_bytes(bytes[25..29].try_into().unwrap()), 520.0);
        assert_eq!(bytes[37], 1);
    }

    #[test]
    fn rejects_corruption() {
        let (b, t) = grids();
        let bytes = HoloBitstream::encode(header(true), &b, &t).unwrap().serialize();
        for i in 0..bytes.len() {
            let mut c = bytes.clone();
            c[i] ^= 0x10;
            assert!(HoloBitstream::parse(&c).is_err(), "flip at byte {i} accepted");
        }
        for n in 0..bytes.len() {
            assert!(HoloBitstream::parse(&bytes[..n]).is_err());
        }
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let (b, _) = grids();
        let big = IndexGrid::from_vec((2, 4), vec![8; 8]).unwrap();
        assert!(matches!(HoloBitstream::encode(header(true), &b, &big), Err(Error::Coding(_))));
        assert!(matches!(HoloBitstream::encode(header(false), &b, &big), Err(Error::Coding(_))));
        assert!(HoloBitstream::encode(header(true), &big, &big).is_err());
        assert!(size_id(48).is_err());
        assert!(size_id(65536).is_err());
        assert_eq!(size_id(32768).unwrap(), 15);
    }

    #[test]
    fn bpp_accounting() {
        let low = CodecProfile::full_low();
        let (h, w) = (1072, 1920);
        let levels = [(h / 4 * (w / 4), 4096), (h / 8 * (w / 8), 4096)];
        assert_eq!(fixed_bpp(&levels[..1], h * w).unwrap(), 0.75);
        assert_eq!(fixed_bpp(&levels, h * w).unwrap(), 0.9375);
        assert_eq!(profile_fixed_bpp(&low, 4096, 4096), 0.9375);
        let ultra = CodecProfile::full_ultra_low();
        assert_eq!(profile_fixed_bpp(&ultra, 4096, 4096), 12.0 / 64.0 + 12.0 / 256.0);
        assert!(bpp(10, 0).is_err());
    }
}
