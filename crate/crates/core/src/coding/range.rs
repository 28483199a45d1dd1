//! Byte-oriented range coder with carry propagation.
//!
//! State is a 32-bit `range` and a 33-bit `low`. A symbol with cumulative
//! frequency `c` and frequency `f` out of `2^16` does `r = range >> 16`,
//! `low += r * c`, `range = r * f`, then shifts out bytes while
//! `range < 2^24`. Pending `0xFF` bytes are held back until a carry is
//! resolved. `finish` shifts five more times, so the decoder consumes exactly
//! the bytes written (the first byte is always zero).
//!
//! Escaped symbols are followed by the value as 16-bit two's complement,
//! coded as two bytes (high first) with uniform frequency 256.

use crate::coding::cdf::{CdfTable, CdfTables, PRECISION_BITS, TOTAL};
use crate::error::{invalid, Error, Result};

const TOP: u32 = 1 << 24;

#[derive(Debug, Default)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^16`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes one symbol, escaping values outside the table's support.
    pub fn encode_symbol(&mut self, table: &CdfTable, symbol: i32) -> Result<()> {
        let b = table.bucket(symbol);
        self.encode(table.cum()[b], table.freqs()[b]);
        if b == table.escape_index() {
            let v = i16::try_from(symbol)
                .map_err(|_| invalid(format!("symbol {symbol} exceeds the 16-bit escape range")))?;
            let raw = v as u16;
            self.encode(((raw >> 8) as u32) << 8, 256);
            self.encode(((raw & 0xFF) as u32) << 8, 256);
        }
        Ok(())
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            bytes,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        if d.next_byte()? != 0 {
            return Err(d.corrupt("stream must start with a zero byte"));
        }
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn corrupt(&self, reason: &str) -> Error {
        Error::Corrupt {
            position: self.pos,
            reason: reason.into(),
        }
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| self.corrupt("stream truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Decodes a target value in `[0, 2^16)` and returns it with the scaled
    /// range unit; must be followed by `consume`.
    fn target(&mut self) -> Result<(u32, u32)> {
        let r = self.range >> PRECISION_BITS;
        let v = self.code / r;
        if v >= TOTAL {
            return Err(self.corrupt("code value outside the coding interval"));
        }
        Ok((v, r))
    }

    fn consume(&mut self, r: u32, cum: u32, freq: u32) -> Result<()> {
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> Result<i32> {
        let (v, r) = self.target()?;
        let b = table.find(v);
        self.consume(r, table.cum()[b], table.freqs()[b])?;
        if b != table.escape_index() {
            return Ok(table.symbol(b));
        }
        let mut raw = 0u16;
        for _ in 0..2 {
            let (v, r) = self.target()?;
            let byte = v >> 8;
            self.consume(r, byte << 8, 256)?;
            raw = (raw << 8) | byte as u16;
        }
        let value = raw as i16 as i32;
        if value.abs() <= table.support() {
            return Err(self.corrupt("escaped value lies inside the table support"));
        }
        Ok(value)
    }
}

/// Codes `symbols[i]` with `tables[cdf_ids[i]]`.
pub fn range_encode(symbols: &[i32], cdf_ids: &[usize], tables: &CdfTables) -> Result<Vec<u8>> {
    if symbols.len() != cdf_ids.len() {
        return Err(invalid(format!(
            "{} symbols but {} table ids",
            symbols.len(),
            cdf_ids.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&s, &id) in symbols.iter().zip(cdf_ids) {
        let t = tables
            .tables
            .get(id)
            .ok_or_else(|| invalid(format!("table id {id} out of range")))?;
        enc.encode_symbol(t, s)?;
    }
    Ok(enc.finish())
}

pub fn range_decode(bytes: &[u8], cdf_ids: &[usize], tables: &CdfTables) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    cdf_ids
        .iter()
        .map(|&id| {
            let t = tables
                .tables
                .get(id)
                .ok_or_else(|| invalid(format!("table id {id} out of range")))?;
            dec.decode_symbol(t)
        })
        .collect()
}
