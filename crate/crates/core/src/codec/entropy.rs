//! Adaptive order-0 arithmetic coding with a carry-propagating range coder.
//!
//! Model: every symbol starts with count 1; after coding a symbol its count
//! grows by [`INCREMENT`]; when the total exceeds [`MAX_TOTAL`] all counts are
//! halved (never below 1).
//!
//! Coder: 32-bit range, 33-bit `low` with byte-wise carry propagation
//! (LZMA-style cache). The encoder's first output byte is always zero and is
//! omitted; the decoder starts from four bytes instead of five.

use super::CodecError;

pub const INCREMENT: u32 = 32;
pub const MAX_TOTAL: u32 = 1 << 16;
const TOP: u32 = 1 << 24;

/// Cumulative frequencies in a Fenwick tree.
#[derive(Debug, Clone)]
pub struct AdaptiveModel {
    tree: Vec<u32>,
    counts: Vec<u32>,
    total: u32,
}

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        let mut m = Self {
            tree: vec![0; alphabet + 1],
            counts: vec![1; alphabet],
            total: alphabet as u32,
        };
        m.rebuild();
        m
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn count(&self, s: usize) -> u32 {
        self.counts[s]
    }

    fn rebuild(&mut self) {
        let n = self.counts.len();
        self.tree[0] = 0;
        self.tree[1..].copy_from_slice(&self.counts);
        for j in 1..=n {
            let parent = j + (j & j.wrapping_neg());
            if parent <= n {
                self.tree[parent] += self.tree[j];
            }
        }
    }

    /// Sum of counts of symbols `< s`.
    pub fn cumulative(&self, s: usize) -> u32 {
        let mut i = s;
        let mut acc = 0;
        while i > 0 {
            acc += self.tree[i];
            i &= i - 1;
        }
        acc
    }

    /// Symbol whose interval contains `target`, and its cumulative start.
    fn find(&self, target: u32) -> (usize, u32) {
        let n = self.counts.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        (pos, target - rem)
    }

    pub fn update(&mut self, s: usize) {
        self.counts[s] += INCREMENT;
        self.total += INCREMENT;
        if self.total > MAX_TOTAL {
            for c in &mut self.counts {
                *c = (*c >> 1).max(1);
            }
            self.total = self.counts.iter().sum();
            self.rebuild();
        } else {
            let mut i = s + 1;
            while i < self.tree.len() {
                self.tree[i] += INCREMENT;
                i += i & i.wrapping_neg();
            }
        }
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    skip_first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 1,
            skip_first: true,
            out: Vec::new(),
        }
    }

    fn emit(&mut self, b: u8) {
        if self.skip_first {
            debug_assert_eq!(b, 0);
            self.skip_first = false;
        } else {
            self.out.push(b);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
                if self.pending == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        let r = self.range / total;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
    r: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self, CodecError> {
        let mut d = Self {
            bytes,
            pos: 0,
            code: 0,
            range: u32::MAX,
            r: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8, CodecError> {
        let b = *self.bytes.get(self.pos).ok_or(CodecError::TruncatedPayload)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn target(&mut self, total: u32) -> u32 {
        self.r = self.range / total;
        (self.code / self.r).min(total - 1)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) -> Result<(), CodecError> {
        self.code = self.code.wrapping_sub(self.r * cum);
        self.range = self.r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }
}

fn check_alphabet(alphabet: usize) -> Result<(), CodecError> {
    if !(2..=1 << 16).contains(&alphabet) {
        return Err(CodecError::Alphabet(alphabet));
    }
    Ok(())
}

/// Codes `symbols` (each `< alphabet`) with a fresh adaptive model. An empty
/// sequence produces no bytes.
pub fn arith_encode(symbols: &[u32], alphabet: usize) -> Result<Vec<u8>, CodecError> {
    check_alphabet(alphabet)?;
    if symbols.is_empty() {
        return Ok(Vec::new());
    }
    let mut model = AdaptiveModel::new(alphabet);
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        let s = s as usize;
        if s >= alphabet {
            return Err(CodecError::SymbolOutOfRange {
                symbol: s as u32,
                alphabet,
            });
        }
        enc.encode(model.cumulative(s), model.count(s), model.total());
        model.update(s);
    }
    Ok(enc.finish())
}

/// Decodes exactly `count` symbols; every input byte must be consumed.
pub fn arith_decode(bytes: &[u8], count: usize, alphabet: usize) -> Result<Vec<u32>, CodecError> {
    check_alphabet(alphabet)?;
    if count == 0 {
        return if bytes.is_empty() {
            Ok(Vec::new())
        } else {
            Err(CodecError::TrailingBytes)
        };
    }
    let mut model = AdaptiveModel::new(alphabet);
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = dec.target(model.total());
        let (s, cum) = model.find(target);
        dec.consume(cum, model.count(s))?;
        model.update(s);
        out.push(s as u32);
    }
    if dec.bytes_consumed() != bytes.len() {
        return Err(CodecError::TrailingBytes);
    }
    Ok(out)
}

/// Mask bits coded with the same adaptive model over a binary alphabet.
pub fn encode_bits(bits: &[bool]) -> Vec<u8> {
    let symbols: Vec<u32> = bits.iter().map(|&b| b as u32).collect();
    arith_encode(&symbols, 2).expect("binary symbols are in range")
}

pub fn decode_bits(bytes: &[u8], count: usize) -> Result<Vec<bool>, CodecError> {
    Ok(arith_decode(bytes, count, 2)?.into_iter().map(|s| s == 1).collect())
}
