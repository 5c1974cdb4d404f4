//! Feature codec for the semantic link: rate matching, per-unit orthogonal
//! mapping of standardized latents, complex pairing and power normalization.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entropy::HyperStats;
use crate::error::{Error, Result};
use crate::quadtree::{position_offset, POSITION_AT, STEPS};
use crate::rng::seeded_stream;

/// Snaps each raw length factor to the nearest rate-set value, ties to the
/// smaller one, returning indices into `rate_set`.
pub fn rate_match(raw_k: &[usize], rate_set: &[usize]) -> Result<Vec<usize>> {
    if rate_set.is_empty() {
        return Err(Error::EmptyRateSet);
    }
    Ok(raw_k.iter().map(|&k| nearest_rate(k, rate_set)).collect())
}

fn nearest_rate(k: usize, rate_set: &[usize]) -> usize {
    match rate_set.binary_search(&k) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == rate_set.len() => i - 1,
        Err(i) => {
            if k - rate_set[i - 1] <= rate_set[i] - k {
                i - 1
            } else {
                i
            }
        }
    }
}

/// Per-unit indices into a rate set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RateMap {
    pub h_y: usize,
    pub w_y: usize,
    indices: Vec<usize>,
    set_size: usize,
}

impl RateMap {
    pub fn new(h_y: usize, w_y: usize, indices: Vec<usize>, set_size: usize) -> Result<Self> {
        if indices.len() != h_y * w_y {
            return Err(Error::Length {
                expected: h_y * w_y,
                actual: indices.len(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= set_size) {
            return Err(Error::Param(format!(
                "rate index {bad} outside a set of {set_size}"
            )));
        }
        Ok(Self {
            h_y,
            w_y,
            indices,
            set_size,
        })
    }

    /// Rate-matches a raw length-factor grid.
    pub fn from_raw(h_y: usize, w_y: usize, raw_k: &[usize], rate_set: &[usize]) -> Result<Self> {
        Self::new(h_y, w_y, rate_match(raw_k, rate_set)?, rate_set.len())
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn set_size(&self) -> usize {
        self.set_size
    }

    pub fn index_at(&self, row: usize, col: usize) -> usize {
        self.indices[row * self.w_y + col]
    }

    /// Rate values per unit, raster order.
    pub fn rates(&self, rate_set: &[usize]) -> Result<Vec<usize>> {
        if rate_set.len() != self.set_size {
            return Err(Error::Length {
                expected: self.set_size,
                actual: rate_set.len(),
            });
        }
        Ok(self.indices.iter().map(|&i| rate_set[i]).collect())
    }

    /// Channel uses `sum ceil(k / 2)`.
    pub fn symbol_count(&self, rate_set: &[usize]) -> Result<usize> {
        Ok(self.rates(rate_set)?.iter().map(|k| k.div_ceil(2)).sum())
    }
}

/// Transmission order of spatial units: for each step, the units where group
/// 0 is coded at that step, in raster order of their 2x2 cells.
pub fn unit_order(h_y: usize, w_y: usize) -> Vec<(usize, usize)> {
    let (ch, cw) = (h_y.div_ceil(2), w_y.div_ceil(2));
    let mut order = Vec::with_capacity(h_y * w_y);
    #[allow(clippy::needless_range_loop)]
    for step in 0..STEPS {
        let (dr, dc) = position_offset(POSITION_AT[0][step]);
        for ci in 0..ch {
            for cj in 0..cw {
                let (r, c) = (2 * ci + dr, 2 * cj + dc);
                if r < h_y && c < w_y {
                    order.push((r, c));
                }
            }
        }
    }
    order
}

/// Encoder rows and decoder columns of one rate's mapping, both row-major
/// `c_y x c_y`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitMap {
    c_y: usize,
    encoder: Vec<f64>,
    decoder_t: Vec<f64>,
}

impl UnitMap {
    fn from_encoder(c_y: usize, encoder: DMatrix<f64>, decoder: DMatrix<f64>) -> Self {
        let row_major = |m: &DMatrix<f64>| {
            let mut v = Vec::with_capacity(c_y * c_y);
            for i in 0..c_y {
                v.extend(m.row(i).iter());
            }
            v
        };
        Self {
            c_y,
            encoder: row_major(&encoder),
            decoder_t: row_major(&decoder.transpose()),
        }
    }

    fn encoder_row(&self, i: usize) -> &[f64] {
        &self.encoder[i * self.c_y..(i + 1) * self.c_y]
    }

    fn decoder_col(&self, i: usize) -> &[f64] {
        &self.decoder_t[i * self.c_y..(i + 1) * self.c_y]
    }

    /// `max |W W^T - I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.c_y {
            for j in 0..self.c_y {
                let dot: f64 = self
                    .encoder_row(i)
                    .iter()
                    .zip(self.encoder_row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                worst = worst.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        worst
    }
}

type BankKey = (u64, usize, usize);

fn bank_cache() -> &'static Mutex<HashMap<BankKey, Arc<UnitMap>>> {
    static CACHE: OnceLock<Mutex<HashMap<BankKey, Arc<UnitMap>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Haar-distributed orthogonal matrix: QR of a seeded Gaussian matrix with
/// the signs of `R`'s diagonal folded into `Q`.
fn random_orthogonal(seed: u64, c_y: usize, k: usize) -> DMatrix<f64> {
    let mut rng = seeded_stream(seed, &format!("mapping-bank/{c_y}/{k}"));
    let g = DMatrix::from_fn(c_y, c_y, |_, _| rng.normal());
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..c_y {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// One mapping per rate-set value.
#[derive(Debug, Clone)]
pub struct MappingBank {
    c_y: usize,
    rate_set: Vec<usize>,
    maps: Vec<Arc<UnitMap>>,
}

#[derive(Serialize, Deserialize)]
struct BankFile {
    c_y: usize,
    rates: Vec<BankEntry>,
}

#[derive(Serialize, Deserialize)]
struct BankEntry {
    k: usize,
    /// Row-major encoder matrix.
    encoder: Vec<f64>,
}

impl MappingBank {
    /// Seeded random orthogonal bank; matrices are cached process-wide.
    pub fn generate(seed: u64, c_y: usize, rate_set: &[usize]) -> Result<Self> {
        check_rate_set(c_y, rate_set)?;
        let maps = rate_set
            .par_iter()
            .map(|&k| {
                let key = (seed, c_y, k);
                if let Some(m) = bank_cache().lock().expect("bank cache").get(&key) {
                    return m.clone();
                }
                let w = random_orthogonal(seed, c_y, k);
                let map = Arc::new(UnitMap::from_encoder(c_y, w.clone(), w.transpose()));
                bank_cache()
                    .lock()
                    .expect("bank cache")
                    .entry(key)
                    .or_insert(map)
                    .clone()
            })
            .collect();
        Ok(Self {
            c_y,
            rate_set: rate_set.to_vec(),
            maps,
        })
    }

    /// Loads encoder matrices from JSON (`{"c_y": n, "rates": [{"k": k,
    /// "encoder": [row-major n*n]}]}`); decoders are their inverses.
    pub fn load(path: impl AsRef<Path>, rate_set: &[usize]) -> Result<Self> {
        let file: BankFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let c_y = file.c_y;
        check_rate_set(c_y, rate_set)?;
        let maps =
            rate_set
                .iter()
                .map(|&k| {
                    let entry =
                        file.rates.iter().find(|e| e.k == k).ok_or_else(|| {
                            Error::Format(format!("bank has no matrix for rate {k}"))
                        })?;
                    if entry.encoder.len() != c_y * c_y {
                        return Err(Error::Length {
                            expected: c_y * c_y,
                            actual: entry.encoder.len(),
                        });
                    }
                    let w = DMatrix::from_row_slice(c_y, c_y, &entry.encoder);
                    let inv = w.clone().try_inverse().ok_or_else(|| {
                        Error::Param(format!("bank matrix for rate {k} is singular"))
                    })?;
                    Ok(Arc::new(UnitMap::from_encoder(c_y, w, inv)))
                })
                .collect::<Result<_>>()?;
        Ok(Self {
            c_y,
            rate_set: rate_set.to_vec(),
            maps,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BankFile {
            c_y: self.c_y,
            rates: self
                .rate_set
                .iter()
                .zip(&self.maps)
                .map(|(&k, m)| BankEntry {
                    k,
                    encoder: m.encoder.clone(),
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.c_y
    }

    pub fn rate_set(&self) -> &[usize] {
        &self.rate_set
    }

    pub fn map_for(&self, k: usize) -> Result<&UnitMap> {
        let i = self
            .rate_set
            .binary_search(&k)
            .map_err(|_| Error::RateNotInSet(k))?;
        Ok(&self.maps[i])
    }
}

fn check_rate_set(c_y: usize, rate_set: &[usize]) -> Result<()> {
    if rate_set.is_empty() {
        return Err(Error::EmptyRateSet);
    }
    if rate_set.windows(2).any(|w| w[0] >= w[1]) || *rate_set.last().unwrap() > c_y {
        return Err(Error::Param(format!(
            "rate set must be strictly increasing within [0, {c_y}]"
        )));
    }
    Ok(())
}

/// Standardizes a unit against the channel stats and keeps the first `k`
/// outputs of `W_k t`.
pub fn map_unit(
    y_unit: &[f64],
    hyper: &HyperStats,
    k: usize,
    bank: &MappingBank,
) -> Result<Vec<f64>> {
    let map = bank.map_for(k)?;
    if y_unit.len() != bank.c_y || hyper.channels() != bank.c_y {
        return Err(Error::Length {
            expected: bank.c_y,
            actual: y_unit.len(),
        });
    }
    let t: Vec<f64> = y_unit
        .iter()
        .enumerate()
        .map(|(c, &v)| (v - hyper.mu(c)) / hyper.sigma(c))
        .collect();
    Ok((0..k)
        .map(|i| map.encoder_row(i).iter().zip(&t).map(|(w, x)| w * x).sum())
        .collect())
}

/// Zero-pads `r` to `c_y`, applies the decoder and de-standardizes.
pub fn unmap_unit(r: &[f64], hyper: &HyperStats, k: usize, bank: &MappingBank) -> Result<Vec<f64>> {
    let map = bank.map_for(k)?;
    if r.len() != k {
        return Err(Error::Length {
            expected: k,
            actual: r.len(),
        });
    }
    if hyper.channels() != bank.c_y {
        return Err(Error::Length {
            expected: bank.c_y,
            actual: hyper.channels(),
        });
    }
    let mut t = vec![0.0; bank.c_y];
    for (i, &ri) in r.iter().enumerate() {
        for (acc, &d) in t.iter_mut().zip(map.decoder_col(i)) {
            *acc += ri * d;
        }
    }
    Ok(t.iter()
        .enumerate()
        .map(|(c, &v)| hyper.mu(c) + hyper.sigma(c) * v)
        .collect())
}

/// Power-normalized complex symbols of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    /// RMS amplitude removed by normalization; sent on the side link.
    pub scale: f32,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.symbols)
    }

    /// `u32` symbol count, then interleaved f32 I/Q, little-endian.
    pub fn to_dump_bytes(&self) -> Vec<u8> {
        dump_symbols(&self.symbols)
    }
}

pub fn mean_power(symbols: &[Complex64]) -> f64 {
    if symbols.is_empty() {
        return 0.0;
    }
    symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / symbols.len() as f64
}

pub fn dump_symbols(symbols: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 8 * symbols.len());
    out.extend_from_slice(&(symbols.len() as u32).to_le_bytes());
    for s in symbols {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn read_symbol_dump(bytes: &[u8]) -> Result<Vec<Complex64>> {
    let count = u32::from_le_bytes(
        bytes
            .get(..4)
            .ok_or(Error::StreamExhausted)?
            .try_into()
            .unwrap(),
    ) as usize;
    let body = &bytes[4..];
    if body.len() != 8 * count {
        return Err(Error::Length {
            expected: 8 * count,
            actual: body.len(),
        });
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect())
}

fn check_units(units: &[Vec<f64>], rates: &[usize]) -> Result<()> {
    if units.len() != rates.len() {
        return Err(Error::Length {
            expected: rates.len(),
            actual: units.len(),
        });
    }
    for (u, &k) in units.iter().zip(rates) {
        if u.len() != k {
            return Err(Error::Length {
                expected: k,
                actual: u.len(),
            });
        }
    }
    Ok(())
}

/// Pairs each unit's values into complex symbols in [`unit_order`], then
/// scales the frame to unit mean power. `units` is indexed in raster order.
pub fn pack_frame(
    units: &[Vec<f64>],
    rate_map: &RateMap,
    rate_set: &[usize],
) -> Result<SymbolFrame> {
    let rates = rate_map.rates(rate_set)?;
    check_units(units, &rates)?;
    let mut symbols = Vec::with_capacity(rate_map.symbol_count(rate_set)?);
    for (r, c) in unit_order(rate_map.h_y, rate_map.w_y) {
        let unit = &units[r * rate_map.w_y + c];
        symbols.extend(
            unit.chunks(2)
                .map(|p| Complex64::new(p[0], p.get(1).copied().unwrap_or(0.0))),
        );
    }
    let power = mean_power(&symbols);
    let scale = if power > 0.0 {
        power.sqrt() as f32
    } else {
        1.0
    };
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::NonFinite("frame power"));
    }
    let inv = 1.0 / scale as f64;
    symbols.iter_mut().for_each(|s| *s *= inv);
    Ok(SymbolFrame { symbols, scale })
}

/// Inverse of [`pack_frame`] on (possibly noisy) symbols.
pub fn unpack_frame(
    symbols: &[Complex64],
    scale: f32,
    rate_map: &RateMap,
    rate_set: &[usize],
) -> Result<Vec<Vec<f64>>> {
    let rates = rate_map.rates(rate_set)?;
    let expected = rate_map.symbol_count(rate_set)?;
    if symbols.len() != expected {
        return Err(Error::Length {
            expected,
            actual: symbols.len(),
        });
    }
    let scale = scale as f64;
    let mut units = vec![Vec::new(); rates.len()];
    let mut cursor = 0;
    for (r, c) in unit_order(rate_map.h_y, rate_map.w_y) {
        let i = r * rate_map.w_y + c;
        let k = rates[i];
        let unit = &mut units[i];
        unit.reserve(k);
        for s in &symbols[cursor..cursor + k.div_ceil(2)] {
            unit.push(s.re * scale);
            if unit.len() < k {
                unit.push(s.im * scale);
            }
        }
        cursor += k.div_ceil(2);
    }
    Ok(units)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn hyper(c: usize) -> HyperStats {
        HyperStats::from_indices(
            0.11,
            (0..c as i16).map(|i| i * 3 - 7).collect(),
            (0..c as u8).map(|i| 20 + i % 30).collect(),
        )
        .unwrap()
    }

    #[test]
    fn rate_match_examples() {
        assert_eq!(
            rate_match(&[5, 7, 2, 0, 8, 100], &[0, 4, 8]).unwrap(),
            vec![1, 2, 0, 0, 2, 2]
        );
        assert_eq!(rate_match(&[0, 3, 12], &[12]).unwrap(), vec![0, 0, 0]);
        assert!(matches!(rate_match(&[1], &[]), Err(Error::EmptyRateSet)));
    }

    #[test]
    fn unit_order_is_a_permutation() {
        let order = unit_order(4, 6);
        let mut seen = order.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 24);
        assert_eq!(order[0], (0, 0));
    }

    #[test]
    fn generated_bank_is_orthogonal() {
        let bank = MappingBank::generate(7, 12, &[0, 6, 12]).unwrap();
        for &k in &[0, 6, 12] {
            assert!(bank.map_for(k).unwrap().orthogonality_error() < 1e-6);
        }
        assert!(matches!(bank.map_for(5), Err(Error::RateNotInSet(5))));
        let again = MappingBank::generate(7, 12, &[6]).unwrap();
        assert_eq!(again.map_for(6).unwrap(), bank.map_for(6).unwrap());
        assert_ne!(bank.map_for(0).unwrap(), bank.map_for(6).unwrap());
    }

    #[test]
    fn full_rate_roundtrip_and_isometry() {
        let c = 16;
        let bank = MappingBank::generate(1, c, &[0, 8, 16]).unwrap();
        let h = hyper(c);
        let mut rng = seeded_stream(2, "sym");
        let y: Vec<f64> = (0..c).map(|_| 5.0 * rng.normal()).collect();
        let r = map_unit(&y, &h, 16, &bank).unwrap();
        let back = unmap_unit(&r, &h, 16, &bank).unwrap();
        let norm: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = y
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-10 * norm);

        assert!(map_unit(&y, &h, 0, &bank).unwrap().is_empty());
        let prior = unmap_unit(&[], &h, 0, &bank).unwrap();
        assert!((0..c).all(|i| prior[i] == h.mu(i)));
        assert!(map_unit(&y, &h, 5, &bank).is_err());
        assert!(unmap_unit(&r[..3], &h, 16, &bank).is_err());
    }

    #[test]
    fn half_rate_error_is_dropped_energy() {
        let c = 16;
        let bank = MappingBank::generate(1, c, &[8, 16]).unwrap();
        let h = hyper(c);
        let mut rng = seeded_stream(4, "sym");
        let y: Vec<f64> = (0..c).map(|_| 3.0 * rng.normal()).collect();
        let full = map_unit(&y, &h, 16, &bank).unwrap();
        // each rate has its own matrix; the dropped energy is measured with W_8
        let map = bank.map_for(8).unwrap();
        let t: Vec<f64> = (0..c).map(|i| (y[i] - h.mu(i)) / h.sigma(i)).collect();
        let dropped: f64 = (8..c)
            .map(|i| {
                map.encoder_row(i)
                    .iter()
                    .zip(&t)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    .powi(2)
            })
            .sum();
        let back = unmap_unit(&map_unit(&y, &h, 8, &bank).unwrap(), &h, 8, &bank).unwrap();
        let err: f64 = (0..c)
            .map(|i| ((y[i] - back[i]) / h.sigma(i)).powi(2))
            .sum();
        assert!((err - dropped).abs() < 1e-9 * dropped.max(1.0));
        assert_eq!(full.len(), 16);
    }

    #[test]
    fn pack_unpack() {
        let rate_set = [0, 3, 5, 8];
        let mut rng = seeded_stream(9, "pack");
        let map = RateMap::new(2, 4, (0..8).map(|_| rng.below(4) as usize).collect(), 4).unwrap();
        let rates = map.rates(&rate_set).unwrap();
        let units: Vec<Vec<f64>> = rates
            .iter()
            .map(|&k| (0..k).map(|_| rng.normal()).collect())
            .collect();
        let frame = pack_frame(&units, &map, &rate_set).unwrap();
        assert_eq!(
            frame.len(),
            rates.iter().map(|k| k.div_ceil(2)).sum::<usize>()
        );
        assert!((frame.mean_power() - 1.0).abs() < 1e-6);
        let back = unpack_frame(&frame.symbols, frame.scale, &map, &rate_set).unwrap();
        for (a, b) in units.iter().flatten().zip(back.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        let shorter = &frame.symbols[..frame.len() - 1];
        assert!(unpack_frame(shorter, frame.scale, &map, &rate_set).is_err());
    }

    #[test]
    fn odd_rate_pads_imaginary() {
        let map = RateMap::new(2, 2, vec![1, 0, 0, 0], 2).unwrap();
        let units = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![], vec![], vec![]];
        let frame = pack_frame(&units, &map, &[0, 5]).unwrap();
        assert_eq!(frame.len(), 3);
        assert_eq!(frame.symbols[2].im, 0.0);
    }

    #[test]
    fn empty_frame() {
        let map = RateMap::new(2, 2, vec![0; 4], 1).unwrap();
        let frame = pack_frame(&vec![vec![]; 4], &map, &[0]).unwrap();
        assert!(frame.is_empty());
        assert_eq!(frame.scale, 1.0);
        assert!(unpack_frame(&[], 1.0, &map, &[0])
            .unwrap()
            .iter()
            .all(Vec::is_empty));
    }

    #[test]
    fn symbol_dump_roundtrip() {
        let s = vec![Complex64::new(0.5, -1.25), Complex64::new(3.0, 0.0)];
        let bytes = dump_symbols(&s);
        assert_eq!(bytes.len(), 4 + 16);
        assert_eq!(read_symbol_dump(&bytes).unwrap(), s);
        assert!(read_symbol_dump(&bytes[..7]).is_err());
    }
}
