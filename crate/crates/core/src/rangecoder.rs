//! Byte-oriented range coder with 16-bit frequency tables.
//!
//! Normative payload format: the coder keeps a 32-bit `range` and a 33-bit
//! `low`; a symbol with cumulative interval `[start, start + size)` out of
//! `total` (at most 2^16) narrows the range to
//! `[range*start/total, range*(start+size)/total)` using exact 64-bit integer
//! products and floor division. Whenever `range < 2^24` the top byte of `low`
//! is emitted, big-endian, with carry propagation through a cached byte and a
//! run of pending `0xFF` bytes. The first emitted byte is always the initial
//! cache byte (`0x00`); the encoder flushes with five byte shifts, so the
//! decoder consumes exactly every byte of the payload.
//!
//! Test vectors live in `tests/rangecoder_vectors.rs`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::gauss;

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION_BITS;
/// Largest residual half-width of a Gaussian table.
pub const MAX_HALF_WIDTH: i64 = 4096;
pub const MIN_HALF_WIDTH: i64 = 4;
/// Number of escape magnitude classes: `bit_length(excess + 1) - 1` is 0..=32.
const ESCAPE_CLASSES: u32 = 33;
const TOP: u32 = 1 << 24;

/// Table half-width for a given sigma.
pub fn gaussian_half_width(sigma: f64) -> i64 {
    let peak = TOTAL as f64 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let reach = if peak > 1.0 {
        (2.0 * gauss::ln(peak)).sqrt()
    } else {
        0.0
    };
    ((sigma * (reach + 1.0)).ceil() as i64 + 1).clamp(MIN_HALF_WIDTH, MAX_HALF_WIDTH)
}

/// Turns probabilities into frequencies summing to `2^16`, each at least 1.
/// The first `2 * centre + 1` entries are value bins symmetric about
/// `centre`. Rounding slack is spread in proportion to each bin's excess
/// over 1; the truncation remainder moves one unit per symmetric pair,
/// outward from the centre, with any odd unit on the centre bin itself.
fn quantize_masses(mass: &[f64], centre: usize) -> Result<Vec<u32>> {
    let mut freqs: Vec<i64> = mass
        .iter()
        .map(|&p| ((p * TOTAL as f64).round() as i64).max(1))
        .collect();
    let slack = TOTAL as i64 - freqs.iter().sum::<i64>();
    let spare: i64 = freqs.iter().map(|f| f - 1).sum();
    if slack < -spare {
        return Err(Error::Param("too many bins for 16-bit precision".into()));
    }
    let mut rem = slack;
    if spare > 0 {
        for f in freqs.iter_mut() {
            let d = slack * (*f - 1) / spare;
            *f += d;
            rem -= d;
        }
    }
    let step = rem.signum();
    for d in 1..=centre {
        if rem.abs() < 2 {
            break;
        }
        let (lo, hi) = (centre - d, centre + d);
        if freqs[lo] + step >= 1 {
            freqs[lo] += step;
            freqs[hi] += step;
            rem -= 2 * step;
        }
    }
    freqs[centre] += rem;
    if freqs[centre] < 1 {
        return Err(Error::Param("cannot normalize frequencies".into()));
    }
    Ok(freqs.into_iter().map(|f| f as u32).collect())
}

/// Cumulative frequencies over a contiguous range of integer values, with
/// optional low/high escape bins for values outside the range. An escaped
/// value is followed by its excess `e` beyond the range edge (`e < 2^32`):
/// the class `c = bit_length(e + 1) - 1` as one of 33 equiprobable symbols,
/// then the low `c` bits of `e + 1` in uniform chunks of at most 16 bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    min_value: i64,
    bins: usize,
    escape: bool,
    cum: Vec<u32>,
}

impl CdfTable {
    /// Builds a table from per-symbol frequencies that sum to `2^16`; with
    /// `escape` the last two frequencies are the low and high escape bins.
    pub fn from_frequencies(min_value: i64, freqs: &[u32], escape: bool) -> Result<Self> {
        let bins = freqs.len().saturating_sub(if escape { 2 } else { 0 });
        if bins == 0 {
            return Err(Error::Param("table needs at least one value bin".into()));
        }
        if freqs.contains(&0) {
            return Err(Error::Param(
                "every bin frequency must be at least 1".into(),
            ));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in freqs {
            acc = acc
                .checked_add(f)
                .filter(|&a| a <= TOTAL)
                .ok_or_else(|| Error::Param("frequencies exceed 2^16".into()))?;
            cum.push(acc);
        }
        if acc != TOTAL {
            return Err(Error::Param(format!("frequencies sum to {acc}, not 2^16")));
        }
        Ok(Self {
            min_value,
            bins,
            escape,
            cum,
        })
    }

    /// Equiprobable table over values `0..n`, no escapes.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 || n > TOTAL as usize {
            return Err(Error::Param(format!("uniform table size {n}")));
        }
        let base = TOTAL / n as u32;
        let extra = (TOTAL % n as u32) as usize;
        let freqs: Vec<u32> = (0..n).map(|i| base + u32::from(i < extra)).collect();
        Self::from_frequencies(0, &freqs, false)
    }

    /// Quantized `N(0, sigma^2) * U(-1/2, 1/2)` over integer residuals
    /// `-R..=R`, plus escape bins carrying the two tails. `R` covers every
    /// bin whose mass reaches `2^-16`, plus a margin of one sigma.
    pub fn gaussian(sigma: f64, sigma_min: f64) -> Result<Self> {
        if !(sigma >= sigma_min) || !sigma.is_finite() {
            return Err(Error::Param(format!(
                "sigma {sigma} below floor {sigma_min}"
            )));
        }
        let half = gaussian_half_width(sigma);
        let mut mass = Vec::with_capacity(2 * half as usize + 3);
        for r in -half..=half {
            mass.push(gauss::unit_bin_mass(r as f64, sigma));
        }
        let tail = gauss::upper_tail((half as f64 + 0.5) / sigma);
        mass.push(tail);
        mass.push(tail);
        let freqs = quantize_masses(&mass, half as usize)?;
        Self::from_frequencies(-half, &freqs, true)
    }

    pub fn symbol_count(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn value_range(&self) -> (i64, i64) {
        (self.min_value, self.min_value + self.bins as i64 - 1)
    }

    pub fn has_escape(&self) -> bool {
        self.escape
    }

    pub fn frequency(&self, symbol: usize) -> u32 {
        self.cum[symbol + 1] - self.cum[symbol]
    }

    pub fn frequencies(&self) -> Vec<u32> {
        (0..self.symbol_count())
            .map(|s| self.frequency(s))
            .collect()
    }

    /// Maps a value to its symbol and, for escapes, the raw excess.
    fn symbol_for(&self, value: i64) -> Result<(usize, Option<u32>)> {
        let (lo, hi) = self.value_range();
        if (lo..=hi).contains(&value) {
            return Ok(((value - lo) as usize, None));
        }
        if !self.escape {
            return Err(Error::SymbolRange { value });
        }
        let (symbol, excess) = if value < lo {
            (self.bins, lo - value - 1)
        } else {
            (self.bins + 1, value - hi - 1)
        };
        let excess = u32::try_from(excess).map_err(|_| Error::SymbolRange { value })?;
        Ok((symbol, Some(excess)))
    }

    /// Ideal code length of `value` in bits, including raw escape bits.
    pub fn cost_bits(&self, value: i64) -> Result<f64> {
        let (symbol, raw) = self.symbol_for(value)?;
        let bits = PRECISION_BITS as f64 - (self.frequency(symbol) as f64).log2();
        Ok(bits + raw.map_or(0.0, escape_cost_bits))
    }
}

fn escape_cost_bits(excess: u32) -> f64 {
    let class = 63 - (excess as u64 + 1).leading_zeros();
    (ESCAPE_CLASSES as f64).log2() + class as f64
}

/// Caches Gaussian tables by the exact bit pattern of sigma.
#[derive(Debug, Default)]
pub struct TableCache {
    sigma_min: f64,
    tables: HashMap<u64, CdfTable>,
}

impl TableCache {
    pub fn new(sigma_min: f64) -> Self {
        Self {
            sigma_min,
            tables: HashMap::new(),
        }
    }

    pub fn gaussian(&mut self, sigma: f64) -> Result<&CdfTable> {
        let key = sigma.to_bits();
        if !self.tables.contains_key(&key) {
            let table = CdfTable::gaussian(sigma, self.sigma_min)?;
            self.tables.insert(key, table);
        }
        Ok(&self.tables[&key])
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
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
            cache_size: 1,
            out: Vec::new(),
        }
    }

    /// Codes the interval `[start, start + size)` out of `total <= 2^16`.
    pub fn encode_interval(&mut self, start: u32, size: u32, total: u32) {
        debug_assert!(size > 0 && start + size <= total && total <= TOTAL);
        let range = self.range as u64;
        let a = range * start as u64 / total as u64;
        let b = range * (start + size) as u64 / total as u64;
        self.low += a;
        self.range = (b - a) as u32;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn put(&mut self, value: i64, table: &CdfTable) -> Result<()> {
        let (symbol, raw) = table.symbol_for(value)?;
        self.encode_interval(table.cum[symbol], table.frequency(symbol), TOTAL);
        if let Some(excess) = raw {
            let v = excess as u64 + 1;
            let class = 63 - v.leading_zeros();
            self.encode_interval(class, 1, ESCAPE_CLASSES);
            self.put_bits(v & ((1u64 << class) - 1), class);
        }
        Ok(())
    }

    /// Writes the low `count` bits of `v`, high chunk first, as uniform
    /// symbols of at most 16 bits.
    fn put_bits(&mut self, v: u64, count: u32) {
        let mut left = count;
        while left > 0 {
            let take = left.min(PRECISION_BITS);
            left -= take;
            let chunk = ((v >> left) & ((1 << take) - 1)) as u32;
            self.encode_interval(chunk, 1, 1 << take);
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xff00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xff;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xff) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00ff_ffff) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 5 {
            return Err(Error::StreamExhausted);
        }
        let code = u32::from_be_bytes(data[1..5].try_into().unwrap());
        Ok(Self {
            data,
            pos: 5,
            range: u32::MAX,
            code,
        })
    }

    #[inline]
    fn bound(&self, c: u32, total: u32) -> u64 {
        self.range as u64 * c as u64 / total as u64
    }

    /// Returns the cumulative position `c` whose interval holds the code.
    fn target(&self, total: u32) -> Result<u32> {
        if self.code >= self.range {
            return Err(Error::Corrupt("code outside range".into()));
        }
        let code = self.code as u64;
        let mut c = (code * total as u64 / self.range as u64) as u32;
        while c + 1 < total && self.bound(c + 1, total) <= code {
            c += 1;
        }
        while c > 0 && self.bound(c, total) > code {
            c -= 1;
        }
        Ok(c)
    }

    fn consume(&mut self, start: u32, size: u32, total: u32) -> Result<()> {
        let a = self.bound(start, total);
        let b = self.bound(start + size, total);
        self.code -= a as u32;
        self.range = (b - a) as u32;
        while self.range < TOP {
            let byte = *self.data.get(self.pos).ok_or(Error::StreamExhausted)?;
            self.pos += 1;
            self.range <<= 8;
            self.code = (self.code << 8) | byte as u32;
        }
        Ok(())
    }

    /// Decodes the interval index out of `total` equiprobable-or-not slots,
    /// given the cumulative table `cum` (length `n + 1`, `cum[n] == total`).
    fn decode_symbol(&mut self, cum: &[u32]) -> Result<usize> {
        let total = *cum.last().unwrap();
        let c = self.target(total)?;
        let symbol = cum.partition_point(|&x| x <= c) - 1;
        self.consume(cum[symbol], cum[symbol + 1] - cum[symbol], total)?;
        Ok(symbol)
    }

    fn get_uniform(&mut self, total: u32) -> Result<u32> {
        let c = self.target(total)?;
        self.consume(c, 1, total)?;
        Ok(c)
    }

    fn get_bits(&mut self, count: u32) -> Result<u64> {
        let mut v = 0u64;
        let mut left = count;
        while left > 0 {
            let take = left.min(PRECISION_BITS);
            left -= take;
            v = (v << take) | self.get_uniform(1 << take)? as u64;
        }
        Ok(v)
    }

    pub fn get(&mut self, table: &CdfTable) -> Result<i64> {
        let symbol = self.decode_symbol(&table.cum)?;
        let (lo, hi) = table.value_range();
        if symbol < table.bins {
            return Ok(lo + symbol as i64);
        }
        let class = self.get_uniform(ESCAPE_CLASSES)?;
        let excess = ((1u64 << class) | self.get_bits(class)?) as i64 - 1;
        if excess > u32::MAX as i64 {
            return Err(Error::Corrupt("escape excess out of range".into()));
        }
        Ok(if symbol == table.bins {
            lo - 1 - excess
        } else {
            hi + 1 + excess
        })
    }

    /// Adaptive-model primitive: decodes an index given cumulative counts.
    pub(crate) fn get_with_counts(&mut self, cum: &[u32]) -> Result<usize> {
        self.decode_symbol(cum)
    }

    pub fn bytes_consumed(&self) -> usize {
        self.pos
    }

    pub fn is_exhausted(&self) -> bool {
        self.pos == self.data.len()
    }
}

/// Codes `residuals[i]` with `tables[i]`.
pub fn encode(residuals: &[i64], tables: &[&CdfTable]) -> Result<Vec<u8>> {
    if residuals.len() != tables.len() {
        return Err(Error::Length {
            expected: tables.len(),
            actual: residuals.len(),
        });
    }
    let mut enc = RangeEncoder::new();
    for (&r, table) in residuals.iter().zip(tables) {
        enc.put(r, table)?;
    }
    Ok(enc.finish())
}

/// Inverse of [`encode`]; the tables must be supplied in the same order.
pub fn decode(payload: &[u8], tables: &[&CdfTable]) -> Result<Vec<i64>> {
    let mut dec = RangeDecoder::new(payload)?;
    let mut out = Vec::with_capacity(tables.len());
    for table in tables {
        out.push(dec.get(table)?);
    }
    if !dec.is_exhausted() {
        return Err(Error::Corrupt("trailing bytes after payload".into()));
    }
    Ok(out)
}

/// Sum of ideal code lengths `-log2(freq / 2^16)` (plus raw escape bits).
pub fn ideal_bits(residuals: &[i64], tables: &[&CdfTable]) -> Result<f64> {
    residuals
        .iter()
        .zip(tables)
        .map(|(&r, t)| t.cost_bits(r))
        .sum()
}

impl RangeEncoder {
    pub(crate) fn put_with_counts(&mut self, index: usize, cum: &[u32]) {
        let total = *cum.last().unwrap();
        self.encode_interval(cum[index], cum[index + 1] - cum[index], total);
    }
}
