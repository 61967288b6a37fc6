//! Canonical Huffman coding of codebook indices.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::bits::{BitReader, BitWriter};
use crate::{Error, Result};

/// Longest code the decoder accepts.
pub const MAX_CODE_LEN: u8 = 32;

/// Canonical prefix code over the present symbols. Codes are assigned in
/// order of `(length, symbol)`, counting up from zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanTable {
    /// `(symbol, length)` sorted by length, then symbol.
    entries: Vec<(u16, u8)>,
    codes: Vec<u64>,
    /// Per length `l`: first canonical code, number of codes, index of the
    /// first entry with that length.
    first: Vec<(u64, u32, u32)>,
    /// Per length: largest prefix any code can start with.
    max_prefix: Vec<u64>,
}

/// Symbol histogram of `symbols` over `0..k`.
pub fn histogram(symbols: &[u32], k: usize) -> Result<Vec<u64>> {
    let mut h = vec![0u64; k];
    for (i, &s) in symbols.iter().enumerate() {
        *h.get_mut(s as usize).ok_or_else(|| {
            Error::Coding(format!("symbol {s} at position {i} is outside 0..{k}"))
        })? += 1;
    }
    Ok(h)
}

fn code_lengths(counts: &[(u16, u64)]) -> Vec<u8> {
    let n = counts.len();
    if n == 1 {
        return vec![1];
    }
    // internal nodes are numbered from n; parent[] holds the tree
    let mut parent = vec![0usize; 2 * n - 1];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        counts.iter().enumerate().map(|(i, &(_, c))| Reverse((c, i))).collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((ca, a)) = heap.pop().expect("two nodes");
        let Reverse((cb, b)) = heap.pop().expect("two nodes");
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((ca + cb, next)));
        next += 1;
    }
    let root = next - 1;
    let mut depth = vec![0u8; 2 * n - 1];
    for node in (0..root).rev() {
        depth[node] = depth[parent[node]].saturating_add(1);
    }
    depth[..n].to_vec()
}

/// Optimal prefix code for the nonzero entries of `hist` (indexed by
/// symbol). A single present symbol gets a 1-bit code. Histograms whose
/// optimal code would exceed [`MAX_CODE_LEN`] bits are flattened by halving
/// counts until it fits.
pub fn build_huffman(hist: &[u64]) -> Result<HuffmanTable> {
    if hist.len() > u16::MAX as usize + 1 {
        return Err(Error::Coding(format!("alphabet of {} symbols is too large", hist.len())));
    }
    let mut counts: Vec<(u16, u64)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(s, &c)| (s as u16, c))
        .collect();
    if counts.is_empty() {
        return Err(Error::Coding("histogram has no nonzero count".into()));
    }
    loop {
        let lengths = code_lengths(&counts);
        if lengths.iter().all(|&l| l <= MAX_CODE_LEN) {
            let entries = counts.iter().map(|&(s, _)| s).zip(lengths).collect();
            return HuffmanTable::from_lengths(entries);
        }
        for c in &mut counts {
            c.1 = (c.1 / 2).max(1);
        }
    }
}

impl HuffmanTable {
    /// Canonical table from `(symbol, length)` pairs in any order.
    pub fn from_lengths(mut entries: Vec<(u16, u8)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Coding("empty code table".into()));
        }
        entries.sort_by_key(|&(s, l)| (l, s));
        let mut kraft = 0u64;
        let mut seen = entries.iter().map(|e| e.0).collect::<Vec<_>>();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Coding("duplicate symbol in code table".into()));
        }
        for &(s, l) in &entries {
            if l == 0 || l > MAX_CODE_LEN {
                return Err(Error::Coding(format!("symbol {s} has invalid code length {l}")));
            }
            kraft += 1u64 << (MAX_CODE_LEN - l);
        }
        if kraft > 1u64 << MAX_CODE_LEN {
            return Err(Error::Coding("code lengths violate the Kraft inequality".into()));
        }
        let mut codes = Vec::with_capacity(entries.len());
        let mut first = vec![(0u64, 0u32, 0u32); MAX_CODE_LEN as usize + 1];
        let mut code = 0u64;
        let mut prev = entries[0].1;
        for (i, &(_, l)) in entries.iter().enumerate() {
            if i > 0 {
                code = (code + 1) << (l - prev);
            }
            prev = l;
            let f = &mut first[l as usize];
            if f.1 == 0 {
                *f = (code, 0, i as u32);
            }
            f.1 += 1;
            codes.push(code);
        }
        let (last, lmax) = (code, prev);
        let max_prefix = (0..=lmax).map(|l| last >> (lmax - l)).collect();
        Ok(Self { entries, codes, first, max_prefix })
    }

    /// `(symbol, length)` in canonical order.
    pub fn entries(&self) -> &[(u16, u8)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Code length of `symbol`, if present.
    pub fn length_of(&self, symbol: u32) -> Option<u8> {
        self.entries.iter().find(|e| e.0 as u32 == symbol).map(|e| e.1)
    }

    /// Mean bits per symbol under `hist`.
    pub fn mean_length(&self, hist: &[u64]) -> f64 {
        let total: u64 = hist.iter().sum();
        let bits: u64 = self
            .entries
            .iter()
            .map(|&(s, l)| hist.get(s as usize).copied().unwrap_or(0) * l as u64)
            .sum();
        bits as f64 / total.max(1) as f64
    }

    fn lookup(&self) -> Vec<Option<(u64, u8)>> {
        let max = self.entries.iter().map(|e| e.0).max().unwrap_or(0) as usize;
        let mut out = vec![None; max + 1];
        for (&(s, l), &c) in self.entries.iter().zip(&self.codes) {
            out[s as usize] = Some((c, l));
        }
        out
    }

    /// Packs `symbols` in order; returns bytes and the exact bit length.
    pub fn encode(&self, symbols: &[u32]) -> Result<(Vec<u8>, u64)> {
        let table = self.lookup();
        let mut w = BitWriter::new();
        for (i, &s) in symbols.iter().enumerate() {
            let (code, len) = table.get(s as usize).copied().flatten().ok_or_else(|| {
                Error::Coding(format!("symbol {s} at position {i} is not in the code table"))
            })?;
            w.write(code, len as u32);
        }
        Ok(w.finish())
    }

    /// Decodes exactly `n` symbols from the first `bit_len` bits.
    pub fn decode(&self, bytes: &[u8], bit_len: u64, n: usize) -> Result<Vec<u32>> {
        let mut r = BitReader::new(bytes, bit_len)?;
        let mut out = Vec::with_capacity(n.min(bit_len as usize + 1));
        for _ in 0..n {
            out.push(self.decode_one(&mut r)?);
        }
        Ok(out)
    }

    fn decode_one(&self, r: &mut BitReader<'_>) -> Result<u32> {
        let start = r.position();
        let mut code = 0u64;
        for l in 1..self.max_prefix.len() {
            code = (code << 1) | r.read_bit()? as u64;
            let (first, count, index) = self.first[l];
            if count > 0 && code >= first && code - first < count as u64 {
                return Ok(self.entries[(index as u64 + code - first) as usize].0 as u32);
            }
            if code > self.max_prefix[l] {
                break;
            }
        }
        Err(Error::CorruptStream {
            offset: start,
            reason: "bits match no code".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lengths(hist: &[u64]) -> Vec<u8> {
        let t = build_huffman(hist).unwrap();
        let mut v: Vec<_> = t.entries().to_vec();
        v.sort();
        v.into_iter().map(|e| e.1).collect()
    }

    #[test]
    fn textbook_lengths() {
        assert_eq!(lengths(&[5, 5, 5, 5]), vec![2, 2, 2, 2]);
        assert_eq!(lengths(&[2, 1, 1]), vec![1, 2, 2]);
        assert_eq!(lengths(&[0, 0, 9]), vec![1]);
        assert!(build_huffman(&[0, 0]).is_err());
        assert!(build_huffman(&[]).is_err());
    }

    #[test]
    fn canonical_codes() {
        let t = HuffmanTable::from_lengths(vec![(7, 2), (3, 1), (1, 3), (0, 3)]).unwrap();
        assert_eq!(t.entries(), &[(3, 1), (7, 2), (0, 3), (1, 3)]);
        assert_eq!(t.codes, vec![0b0, 0b10, 0b110, 0b111]);
        let (bytes, len) = t.encode(&[0, 3, 7, 1]).unwrap();
        assert_eq!(len, 9);
        assert_eq!(bytes, vec![0b1100_1011, 0b1000_0000]);
        assert_eq!(t.decode(&bytes, len, 4).unwrap(), vec![0, 3, 7, 1]);
    }

    #[test]
    fn single_symbol_is_one_bit() {
        let t = build_huffman(&[0, 4]).unwrap();
        let (bytes, len) = t.encode(&[1; 10]).unwrap();
        assert_eq!(len, 10);
        assert_eq!(t.decode(&bytes, len, 10).unwrap(), vec![1; 10]);
        // the unused prefix "1" is an error
        assert!(matches!(t.decode(&[0x80], 1, 1), Err(Error::CorruptStream { offset: 0, .. })));
    }

    #[test]
    fn table_validation() {
        assert!(HuffmanTable::from_lengths(vec![(0, 1), (1, 1), (2, 1)]).is_err());
        assert!(HuffmanTable::from_lengths(vec![(0, 0)]).is_err());
        assert!(HuffmanTable::from_lengths(vec![(0, 1), (0, 2)]).is_err());
        assert!(HuffmanTable::from_lengths(vec![(0, 33)]).is_err());
        let t = build_huffman(&[1, 1]).unwrap();
        assert!(matches!(t.encode(&[2]), Err(Error::Coding(_))));
    }

    #[test]
    fn empty_and_truncated() {
        let t = build_huffman(&[3, 1, 1]).unwrap();
        assert_eq!(t.decode(&[], 0, 0).unwrap(), Vec::<u32>::new());
        let (bytes, len) = t.encode(&[0, 1, 2, 2]).unwrap();
        assert!(matches!(t.decode(&bytes, len - 1, 4), Err(Error::CorruptStream { .. })));
    }

    #[test]
    fn skewed_histogram_respects_length_cap() {
        // Fibonacci counts force a maximally deep tree
        let mut hist = vec![1u64, 1];
        while hist.len() < 45 {
            let n = hist.len();
            hist.push(hist[n - 1] + hist[n - 2]);
        }
        let t = build_huffman(&hist).unwrap();
        assert!(t.entries().iter().all(|e| e.1 <= MAX_CODE_LEN));
        let syms: Vec<u32> = (0..45).collect();
        let (b, l) = t.encode(&syms).unwrap();
        assert_eq!(t.decode(&b, l, 45).unwrap(), syms);
    }
}
