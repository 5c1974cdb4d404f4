//! Side information: lossless rate-map coding, the side bundle carried on
//! the side link, and channel bandwidth ratio accounting.
//!
//! Coded rate map: `u8 mode`, `u16 h_y`, `u16 w_y`, `u16 n` (rate-set
//! size), little-endian, then the body. Mode 0 packs each index in
//! `ceil(log2 n)` bits, MSB first. Mode 1 range-codes, in raster order, the
//! residual modulo `n` of a median edge predictor, with one adaptive
//! frequency model per local-activity bucket. The encoder emits whichever
//! mode is shorter.

use serde::{Deserialize, Serialize};

use crate::entropy::HyperStats;
use crate::error::{Error, Result};
use crate::rangecoder::{RangeDecoder, RangeEncoder, TOTAL};
use crate::symbolizer::RateMap;

const MODE_RAW: u8 = 0;
const MODE_FILTERED: u8 = 1;
pub const MAP_HEADER_LEN: usize = 7;
const CONTEXTS: usize = 4;
const ADAPT_INCREMENT: u32 = 16;

/// Bits to send one index out of `n` naively.
pub fn index_bits(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

/// `h_y * w_y * ceil(log2 n)`.
pub fn naive_map_bits(h_y: usize, w_y: usize, n: usize) -> usize {
    h_y * w_y * index_bits(n)
}

struct AdaptiveModel {
    counts: Vec<u32>,
    cum: Vec<u32>,
}

impl AdaptiveModel {
    fn new(n: usize) -> Self {
        let mut m = Self {
            counts: vec![1; n],
            cum: Vec::with_capacity(n + 1),
        };
        m.rebuild();
        m
    }

    fn rebuild(&mut self) {
        self.cum.clear();
        self.cum.push(0);
        let mut acc = 0;
        for &c in &self.counts {
            acc += c;
            self.cum.push(acc);
        }
    }

    fn update(&mut self, symbol: usize) {
        self.counts[symbol] += ADAPT_INCREMENT;
        if *self.cum.last().unwrap() + ADAPT_INCREMENT > TOTAL {
            self.counts.iter_mut().for_each(|c| *c = (*c).div_ceil(2));
        }
        self.rebuild();
    }
}

/// Median edge predictor on `(left, up, up_left)` and an activity bucket
/// selecting the residual model. Missing neighbours copy the nearest
/// available one (0 at the origin).
fn predict(map: &[usize], w: usize, i: usize, j: usize) -> (usize, usize) {
    let up = (i > 0).then(|| map[(i - 1) * w + j]);
    let left = if j > 0 {
        map[i * w + j - 1]
    } else {
        up.unwrap_or(0)
    };
    let up = up.unwrap_or(left);
    let up_left = if i > 0 && j > 0 {
        map[(i - 1) * w + j - 1]
    } else {
        up
    };
    let (lo, hi) = (left.min(up), left.max(up));
    let pred = if up_left >= hi {
        lo
    } else if up_left <= lo {
        hi
    } else {
        left + up - up_left
    };
    let activity = left.abs_diff(up_left) + up.abs_diff(up_left);
    let context = match activity {
        0 => 0,
        1 => 1,
        2..=3 => 2,
        _ => 3,
    };
    (pred, context)
}

fn residual(v: usize, pred: usize, n: usize) -> usize {
    (v + n - pred) % n
}

fn map_header(mode: u8, map: &RateMap) -> Result<Vec<u8>> {
    let fits =
        |v: usize| u16::try_from(v).map_err(|_| Error::Dimension(format!("{v} exceeds 16 bits")));
    let mut out = vec![mode];
    out.extend_from_slice(&fits(map.h_y)?.to_le_bytes());
    out.extend_from_slice(&fits(map.w_y)?.to_le_bytes());
    out.extend_from_slice(&fits(map.set_size())?.to_le_bytes());
    Ok(out)
}

fn encode_raw(map: &RateMap) -> Result<Vec<u8>> {
    let bits = index_bits(map.set_size());
    let mut out = map_header(MODE_RAW, map)?;
    let mut acc = 0u64;
    let mut filled = 0;
    for &v in map.indices() {
        acc = (acc << bits) | v as u64;
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out.push((acc >> filled) as u8);
        }
    }
    if filled > 0 {
        out.push((acc << (8 - filled)) as u8);
    }
    Ok(out)
}

fn encode_filtered(map: &RateMap) -> Result<Vec<u8>> {
    let (h, w, n) = (map.h_y, map.w_y, map.set_size());
    let values = map.indices();
    let mut models: Vec<AdaptiveModel> = (0..CONTEXTS).map(|_| AdaptiveModel::new(n)).collect();
    let mut enc = RangeEncoder::new();
    for i in 0..h {
        for j in 0..w {
            let (pred, ctx) = predict(values, w, i, j);
            let d = residual(values[i * w + j], pred, n);
            enc.put_with_counts(d, &models[ctx].cum);
            models[ctx].update(d);
        }
    }
    let mut out = map_header(MODE_FILTERED, map)?;
    out.extend_from_slice(&enc.finish());
    Ok(out)
}

/// Lossless rate-map coding; never longer than the naive bound plus 64 bits.
pub fn encode_rate_map(map: &RateMap) -> Result<Vec<u8>> {
    let raw = encode_raw(map)?;
    if map.indices().is_empty() || map.set_size() <= 1 {
        return Ok(raw);
    }
    let filtered = encode_filtered(map)?;
    Ok(if filtered.len() < raw.len() {
        filtered
    } else {
        raw
    })
}

pub fn decode_rate_map(bytes: &[u8], h_y: usize, w_y: usize, set_size: usize) -> Result<RateMap> {
    let header = bytes.get(..MAP_HEADER_LEN).ok_or(Error::StreamExhausted)?;
    let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]) as usize;
    if (u16_at(1), u16_at(3), u16_at(5)) != (h_y, w_y, set_size) {
        return Err(Error::Dimension(format!(
            "coded map is {}x{} over {} rates, expected {h_y}x{w_y} over {set_size}",
            u16_at(1),
            u16_at(3),
            u16_at(5)
        )));
    }
    if set_size == 0 {
        return Err(Error::EmptyRateSet);
    }
    let body = &bytes[MAP_HEADER_LEN..];
    let count = h_y * w_y;
    let indices = match header[0] {
        MODE_RAW => {
            let bits = index_bits(set_size);
            let need = (count * bits).div_ceil(8);
            if body.len() != need {
                return Err(Error::Length {
                    expected: need,
                    actual: body.len(),
                });
            }
            let mut out = Vec::with_capacity(count);
            let (mut acc, mut filled, mut pos) = (0u64, 0usize, 0usize);
            for _ in 0..count {
                while filled < bits {
                    acc = (acc << 8) | body[pos] as u64;
                    pos += 1;
                    filled += 8;
                }
                filled -= bits;
                out.push(((acc >> filled) & ((1u64 << bits) - 1)) as usize);
            }
            out
        }
        MODE_FILTERED => {
            let mut models: Vec<AdaptiveModel> = (0..CONTEXTS)
                .map(|_| AdaptiveModel::new(set_size))
                .collect();
            let mut dec = RangeDecoder::new(body)?;
            let mut out = vec![0usize; count];
            for i in 0..h_y {
                for j in 0..w_y {
                    let (pred, ctx) = predict(&out, w_y, i, j);
                    let d = dec.get_with_counts(&models[ctx].cum)?;
                    models[ctx].update(d);
                    out[i * w_y + j] = (pred + d) % set_size;
                }
            }
            if !dec.is_exhausted() {
                return Err(Error::Corrupt("trailing bytes after rate map".into()));
            }
            out
        }
        other => return Err(Error::Format(format!("unknown rate map mode {other}"))),
    };
    RateMap::new(h_y, w_y, indices, set_size)
}

pub const SIDE_MAGIC: &[u8; 4] = b"QSID";
pub const SIDE_VERSION: u8 = 1;

/// Everything the receiver needs besides the symbols: the rate map, the
/// hyper statistics and the frame power scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SideBundle {
    pub rate_map: RateMap,
    pub hyper: HyperStats,
    pub scale: f32,
}

/// Sizes of a serialized bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideBits {
    /// The coded rate map alone.
    pub map_bits: usize,
    /// The whole bundle, including header, stats and scale.
    pub bundle_bits: usize,
}

impl SideBundle {
    /// `QSID`, u8 version, u16 `h_y`, u16 `w_y`, u16 rate-set size, f32
    /// scale, stats block, coded rate map.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = SIDE_MAGIC.to_vec();
        out.push(SIDE_VERSION);
        for v in [
            self.rate_map.h_y,
            self.rate_map.w_y,
            self.rate_map.set_size(),
        ] {
            let v =
                u16::try_from(v).map_err(|_| Error::Dimension(format!("{v} exceeds 16 bits")))?;
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.scale.to_le_bytes());
        out.extend_from_slice(&self.hyper.to_bytes());
        out.extend_from_slice(&encode_rate_map(&self.rate_map)?);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], sigma_min: f64) -> Result<Self> {
        let fixed = bytes.get(..15).ok_or(Error::StreamExhausted)?;
        if &fixed[..4] != SIDE_MAGIC {
            return Err(Error::Format("missing QSID magic".into()));
        }
        if fixed[4] != SIDE_VERSION {
            return Err(Error::Format(format!(
                "unsupported side version {}",
                fixed[4]
            )));
        }
        let u16_at = |i: usize| u16::from_le_bytes([fixed[i], fixed[i + 1]]) as usize;
        let (h_y, w_y, n) = (u16_at(5), u16_at(7), u16_at(9));
        let scale = f32::from_le_bytes(fixed[11..15].try_into().unwrap());
        let (hyper, used) = HyperStats::from_bytes(&bytes[15..], sigma_min)?;
        let rate_map = decode_rate_map(&bytes[15 + used..], h_y, w_y, n)?;
        Ok(Self {
            rate_map,
            hyper,
            scale,
        })
    }

    pub fn bits(&self) -> Result<SideBits> {
        Ok(SideBits {
            map_bits: 8 * encode_rate_map(&self.rate_map)?.len(),
            bundle_bits: 8 * self.to_bytes()?.len(),
        })
    }
}

/// Channel bandwidth ratio in channel uses per source sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CbrReport {
    pub payload: f64,
    pub side: f64,
    pub total: f64,
}

/// `payload = l / (3HW)`, `side = side_bits / (3HW c_k)`, `total = payload + side`.
pub fn cbr_report(
    symbol_count: usize,
    side_bits: usize,
    height: usize,
    width: usize,
    c_k: f64,
) -> Result<CbrReport> {
    if !(c_k > 0.0) || !c_k.is_finite() {
        return Err(Error::Param(format!(
            "side link efficiency must be positive, got {c_k}"
        )));
    }
    let n = (3 * height * width) as f64;
    if n == 0.0 {
        return Err(Error::Dimension("empty image".into()));
    }
    let payload = symbol_count as f64 / n;
    let side = side_bits as f64 / (n * c_k);
    Ok(CbrReport {
        payload,
        side,
        total: payload + side,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn random_map(h: usize, w: usize, n: usize, seed: u64) -> RateMap {
        let mut rng = seeded_stream(seed, "side-test");
        RateMap::new(
            h,
            w,
            (0..h * w).map(|_| rng.below(n as u64) as usize).collect(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn index_bit_counts() {
        assert_eq!(index_bits(1), 0);
        assert_eq!(index_bits(2), 1);
        assert_eq!(index_bits(8), 3);
        assert_eq!(index_bits(9), 4);
        assert_eq!(index_bits(320), 9);
    }

    #[test]
    fn constant_map_is_tiny() {
        let map = RateMap::new(32, 32, vec![5; 1024], 13).unwrap();
        let bytes = encode_rate_map(&map).unwrap();
        assert!(bytes.len() - MAP_HEADER_LEN <= 24, "{} bytes", bytes.len());
        assert_eq!(decode_rate_map(&bytes, 32, 32, 13).unwrap(), map);
    }

    #[test]
    fn uniform_map_near_naive() {
        let map = random_map(16, 16, 8, 1);
        let bits = 8 * (encode_rate_map(&map).unwrap().len() - MAP_HEADER_LEN);
        assert!((bits as f64 - 768.0).abs() <= 0.05 * 768.0, "{bits}");
    }

    #[test]
    fn wrong_dims_and_truncation() {
        let map = random_map(6, 5, 4, 2);
        let bytes = encode_rate_map(&map).unwrap();
        assert!(decode_rate_map(&bytes, 5, 6, 4).is_err());
        assert!(decode_rate_map(&bytes, 6, 5, 5).is_err());
        assert!(decode_rate_map(&bytes[..bytes.len() - 1], 6, 5, 4).is_err());
        assert!(decode_rate_map(&bytes[..3], 6, 5, 4).is_err());
    }

    #[test]
    fn empty_map() {
        let map = RateMap::new(0, 0, vec![], 3).unwrap();
        let bytes = encode_rate_map(&map).unwrap();
        assert_eq!(decode_rate_map(&bytes, 0, 0, 3).unwrap(), map);
    }

    #[test]
    fn bundle_roundtrip() {
        let hyper = HyperStats::from_indices(0.11, vec![1, -2, 3, 4], vec![0, 10, 20, 63]).unwrap();
        let bundle = SideBundle {
            rate_map: random_map(4, 6, 5, 3),
            hyper,
            scale: 3.25,
        };
        let bytes = bundle.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"QSID");
        assert_eq!(SideBundle::from_bytes(&bytes, 0.11).unwrap(), bundle);
        assert!(SideBundle::from_bytes(&bytes[..bytes.len() - 1], 0.11).is_err());
        let bits = bundle.bits().unwrap();
        assert_eq!(bits.bundle_bits, 8 * bytes.len());
        assert!(bits.map_bits < bits.bundle_bits);
    }

    #[test]
    fn cbr_examples() {
        let r = cbr_report(0, 0, 8, 8, 2.0).unwrap();
        assert_eq!((r.payload, r.side, r.total), (0.0, 0.0, 0.0));
        let r = cbr_report(0, naive_map_bits(16, 16, 8), 256, 256, 2.0).unwrap();
        assert!((r.side - 768.0 / 393_216.0).abs() < 1e-15);
        assert!(cbr_report(1, 1, 8, 8, 0.0).is_err());
        let r = cbr_report(300, 64, 10, 10, 4.0).unwrap();
        assert_eq!(r.total, r.payload + r.side);
    }
}
