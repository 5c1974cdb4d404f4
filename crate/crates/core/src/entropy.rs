//! Analytic entropy model: per-channel hyper statistics, causal context
//! refinement over the quadtree schedule, the Gaussian-uniform likelihood, and
//! rate accounting.

use crate::config::ContextParams;
use crate::error::{Error, Result};
use crate::gauss;
use crate::latent::{Coord, LatentGrid};
use crate::quadtree::{CodingSchedule, STEPS};

pub const SIGMA_MAX: f64 = 256.0;
pub const SIGMA_LEVELS: usize = 64;
/// Grid step of transmitted channel means.
pub const MU_STEP: f64 = 0.1;
/// Tail floor so every symbol stays codable at 16-bit frequency precision.
pub const P_MIN: f64 = 1.0 / 65536.0;

/// Value of sigma grid level `k` (0..64), log-spaced over `[sigma_min, 256]`.
pub fn sigma_level(sigma_min: f64, k: u8) -> f64 {
    let span = gauss::ln(SIGMA_MAX / sigma_min);
    sigma_min * gauss::exp(k as f64 / (SIGMA_LEVELS - 1) as f64 * span)
}

pub fn sigma_index(sigma_min: f64, sigma: f64) -> u8 {
    if !(sigma > sigma_min) {
        return 0;
    }
    let span = gauss::ln(SIGMA_MAX / sigma_min);
    let k = (gauss::ln(sigma / sigma_min) / span * (SIGMA_LEVELS - 1) as f64).round();
    k.clamp(0.0, (SIGMA_LEVELS - 1) as f64) as u8
}

/// Quantized per-channel mean and scale; the side information that seeds the
/// entropy model at the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperStats {
    sigma_min_bits: u64,
    mu_index: Vec<i16>,
    sigma_index: Vec<u8>,
    sigma_values: Vec<u64>,
}

impl HyperStats {
    pub fn from_indices(sigma_min: f64, mu_index: Vec<i16>, sigma_index: Vec<u8>) -> Result<Self> {
        if mu_index.len() != sigma_index.len() {
            return Err(Error::Length {
                expected: mu_index.len(),
                actual: sigma_index.len(),
            });
        }
        if let Some(&k) = sigma_index.iter().find(|&&k| k as usize >= SIGMA_LEVELS) {
            return Err(Error::Corrupt(format!("sigma index {k} out of range")));
        }
        let sigma_values = sigma_index
            .iter()
            .map(|&k| sigma_level(sigma_min, k).to_bits())
            .collect();
        Ok(Self {
            sigma_min_bits: sigma_min.to_bits(),
            mu_index,
            sigma_index,
            sigma_values,
        })
    }

    pub fn channels(&self) -> usize {
        self.mu_index.len()
    }

    pub fn sigma_min(&self) -> f64 {
        f64::from_bits(self.sigma_min_bits)
    }

    #[inline]
    pub fn mu(&self, ch: usize) -> f64 {
        self.mu_index[ch] as f64 / 10.0
    }

    #[inline]
    pub fn sigma(&self, ch: usize) -> f64 {
        f64::from_bits(self.sigma_values[ch])
    }

    pub fn mu_indices(&self) -> &[i16] {
        &self.mu_index
    }

    pub fn sigma_indices(&self) -> &[u8] {
        &self.sigma_index
    }

    /// `u16` channel count, then per channel `i16` mean index and `u8` sigma
    /// index, little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + 3 * self.channels());
        out.extend_from_slice(&(self.channels() as u16).to_le_bytes());
        for (&m, &s) in self.mu_index.iter().zip(&self.sigma_index) {
            out.extend_from_slice(&m.to_le_bytes());
            out.push(s);
        }
        out
    }

    /// Parses a stats block, returning it with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8], sigma_min: f64) -> Result<(Self, usize)> {
        let count = u16::from_le_bytes(
            bytes
                .get(..2)
                .ok_or(Error::StreamExhausted)?
                .try_into()
                .unwrap(),
        ) as usize;
        let need = 2 + 3 * count;
        let body = bytes.get(2..need).ok_or(Error::StreamExhausted)?;
        let mut mu = Vec::with_capacity(count);
        let mut sigma = Vec::with_capacity(count);
        for rec in body.chunks_exact(3) {
            mu.push(i16::from_le_bytes([rec[0], rec[1]]));
            sigma.push(rec[2]);
        }
        Ok((Self::from_indices(sigma_min, mu, sigma)?, need))
    }
}

/// Per-channel sample mean and standard deviation, snapped to the
/// transmitted grids; zero variance floors to `sigma_min`.
pub fn estimate_hyper(y: &LatentGrid, sigma_min: f64) -> Result<HyperStats> {
    if y.is_empty() {
        return Err(Error::Dimension("hyper statistics of an empty grid".into()));
    }
    let c_y = y.c_y;
    let n = (y.h_y * y.w_y) as f64;
    let mut sum = vec![0.0f64; c_y];
    for unit in y.values().chunks_exact(c_y) {
        for (s, &v) in sum.iter_mut().zip(unit) {
            *s += v;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let mut sq = vec![0.0f64; c_y];
    for unit in y.values().chunks_exact(c_y) {
        for ((s, &v), &m) in sq.iter_mut().zip(unit).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let mu_index = mean
        .iter()
        .map(|&m| {
            if !m.is_finite() {
                return 0;
            }
            (m / MU_STEP)
                .round()
                .clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();
    let sigma_index = sq
        .iter()
        .map(|&s| sigma_index(sigma_min, (s / n).sqrt()))
        .collect();
    HyperStats::from_indices(sigma_min, mu_index, sigma_index)
}

/// Per-element Gaussian parameters aligned with a latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianField {
    pub h_y: usize,
    pub w_y: usize,
    pub c_y: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianField {
    pub fn new(h_y: usize, w_y: usize, c_y: usize) -> Self {
        let n = h_y * w_y * c_y;
        Self {
            h_y,
            w_y,
            c_y,
            mu: vec![0.0; n],
            sigma: vec![0.0; n],
        }
    }

    #[inline]
    fn index(&self, c: Coord) -> usize {
        (c.row * self.w_y + c.col) * self.c_y + c.ch
    }

    pub fn get(&self, c: Coord) -> (f64, f64) {
        let i = self.index(c);
        (self.mu[i], self.sigma[i])
    }

    pub fn set(&mut self, c: Coord, mu: f64, sigma: f64) {
        let i = self.index(c);
        self.mu[i] = mu;
        self.sigma[i] = sigma;
    }

    pub fn matches(&self, y: &LatentGrid) -> bool {
        self.h_y == y.h_y && self.w_y == y.w_y && self.c_y == y.c_y
    }
}

/// A latent under reconstruction, with a flag per element telling whether it
/// has been decoded.
#[derive(Debug, Clone)]
pub struct PartialLatent {
    pub grid: LatentGrid,
    decoded: Vec<bool>,
}

impl PartialLatent {
    pub fn new(h_y: usize, w_y: usize, c_y: usize) -> Self {
        Self {
            grid: LatentGrid::zeros(h_y, w_y, c_y),
            decoded: vec![false; h_y * w_y * c_y],
        }
    }

    pub fn is_decoded(&self, c: Coord) -> bool {
        self.decoded[self.grid.index(c)]
    }

    pub fn mark_decoded(&mut self, c: Coord) {
        let i = self.grid.index(c);
        self.decoded[i] = true;
    }

    pub fn set_decoded(&mut self, c: Coord, v: f64) {
        self.grid.set(c, v);
        self.mark_decoded(c);
    }
}

/// Parameters predicted for one element. References contribute standardized
/// residuals `(y_hat - mu_ref) / sigma_ref` under their own channel's stats,
/// rescaled by the element's channel sigma, so a reference taken from another
/// channel is comparable; for same-channel references this is the plain
/// residual mean.
#[inline]
pub fn predict_element(
    partial: &PartialLatent,
    hyper: &HyperStats,
    schedule: &CodingSchedule,
    step: usize,
    coord: Coord,
    params: &ContextParams,
) -> Result<(f64, f64)> {
    let mut residual_sum = 0.0;
    let mut count = 0usize;
    let mut violation = None;
    schedule.for_each_ref(step, coord, |r| {
        if !partial.is_decoded(r) {
            violation.get_or_insert(r);
            return;
        }
        residual_sum += (partial.grid.get(r) - hyper.mu(r.ch)) / hyper.sigma(r.ch);
        count += 1;
    });
    if let Some(r) = violation {
        return Err(Error::Causality(r));
    }
    let mut mu = hyper.mu(coord.ch);
    if count > 0 && params.mean_weight[step] != 0.0 {
        mu += params.mean_weight[step] * hyper.sigma(coord.ch) * (residual_sum / count as f64);
    }
    let sigma = (hyper.sigma(coord.ch) * params.sigma_mult[step]).max(hyper.sigma_min());
    Ok((mu, sigma))
}

/// Predicted parameters for every coordinate coded at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepField {
    pub step: usize,
    pub coords: Vec<Coord>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Predicts `(mu, sigma)` for all coordinates of `step` from decoded context.
pub fn predict_field(
    partial: &PartialLatent,
    hyper: &HyperStats,
    schedule: &CodingSchedule,
    step: usize,
    params: &ContextParams,
) -> Result<StepField> {
    if !schedule.matches(&partial.grid) || hyper.channels() != schedule.c_y {
        return Err(Error::Dimension(
            "schedule, latent and hyper stats disagree".into(),
        ));
    }
    if step >= STEPS {
        return Err(Error::Param(format!("step {step} out of range")));
    }
    let coords: Vec<Coord> = schedule.coords_at_step(step).collect();
    let mut mu = Vec::with_capacity(coords.len());
    let mut sigma = Vec::with_capacity(coords.len());
    for &c in &coords {
        let (m, s) = predict_element(partial, hyper, schedule, step, c, params)?;
        mu.push(m);
        sigma.push(s);
    }
    Ok(StepField {
        step,
        coords,
        mu,
        sigma,
    })
}

/// `round_half_away_from_zero(y - mu) + mu`.
pub fn quantize_latent(y: f64, mu: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("latent value"));
    }
    if !mu.is_finite() {
        return Err(Error::NonFinite("mean"));
    }
    Ok((y - mu).round() + mu)
}

/// Probability of the unit bin around `value` under `N(mu, sigma^2)`, floored
/// at [`P_MIN`].
pub fn likelihood(value: f64, mu: f64, sigma: f64, sigma_min: f64) -> Result<f64> {
    if !(sigma >= sigma_min) {
        return Err(Error::Param(format!(
            "sigma {sigma} below floor {sigma_min}"
        )));
    }
    if !value.is_finite() || !mu.is_finite() {
        return Err(Error::NonFinite("likelihood argument"));
    }
    Ok(likelihood_unchecked(value, mu, sigma))
}

#[inline]
pub(crate) fn likelihood_unchecked(value: f64, mu: f64, sigma: f64) -> f64 {
    gauss::unit_bin_mass(value - mu, sigma).max(P_MIN)
}

/// Total `-log2 likelihood` of a latent under a field.
pub fn rate_bits(y_hat: &LatentGrid, field: &GaussianField) -> Result<f64> {
    if !field.matches(y_hat) {
        return Err(Error::Dimension("field does not match latent".into()));
    }
    Ok(y_hat
        .values()
        .iter()
        .zip(field.mu.iter().zip(&field.sigma))
        .map(|(&v, (&m, &s))| -likelihood_unchecked(v, m, s).log2())
        .sum())
}

/// Rate split by coding step.
pub fn rate_bits_by_step(
    y_hat: &LatentGrid,
    field: &GaussianField,
    schedule: &CodingSchedule,
) -> Result<[f64; STEPS]> {
    if !field.matches(y_hat) || !schedule.matches(y_hat) {
        return Err(Error::Dimension("field does not match latent".into()));
    }
    let mut out = [0.0; STEPS];
    for (step, bits) in out.iter_mut().enumerate() {
        *bits = schedule
            .coords_at_step(step)
            .map(|c| {
                let (m, s) = field.get(c);
                -likelihood_unchecked(y_hat.get(c), m, s).log2()
            })
            .sum();
    }
    Ok(out)
}

/// Outcome of running the causal schedule over a latent.
#[derive(Debug, Clone)]
pub struct ScheduleRun {
    pub y_hat: LatentGrid,
    pub field: GaussianField,
}

/// Runs the four coding steps. For every coordinate, in coding order, the
/// callback receives the predicted `(mu, sigma)` and returns the integer
/// residual `y_hat - mu`. Elements of a step become visible as context only
/// once the whole step is done.
pub fn run_schedule(
    schedule: &CodingSchedule,
    hyper: &HyperStats,
    params: &ContextParams,
    mut residual_for: impl FnMut(Coord, f64, f64) -> Result<i64>,
) -> Result<ScheduleRun> {
    if hyper.channels() != schedule.c_y {
        return Err(Error::Length {
            expected: schedule.c_y,
            actual: hyper.channels(),
        });
    }
    let mut partial = PartialLatent::new(schedule.h_y, schedule.w_y, schedule.c_y);
    let mut field = GaussianField::new(schedule.h_y, schedule.w_y, schedule.c_y);
    for step in 0..STEPS {
        for c in schedule.coords_at_step(step) {
            let (mu, sigma) = predict_element(&partial, hyper, schedule, step, c, params)?;
            let r = residual_for(c, mu, sigma)?;
            partial.grid.set(c, mu + r as f64);
            field.set(c, mu, sigma);
        }
        for c in schedule.coords_at_step(step) {
            partial.mark_decoded(c);
        }
    }
    Ok(ScheduleRun {
        y_hat: partial.grid,
        field,
    })
}

/// Quantizes `y` along the schedule, returning the reconstruction, the field
/// and the residuals in coding order.
pub fn quantize_schedule(
    y: &LatentGrid,
    hyper: &HyperStats,
    params: &ContextParams,
) -> Result<(ScheduleRun, Vec<i64>)> {
    let schedule = CodingSchedule::for_grid(y)?;
    let mut residuals = Vec::with_capacity(y.len());
    let run = run_schedule(&schedule, hyper, params, |c, mu, _| {
        let v = y.get(c);
        if !v.is_finite() {
            return Err(Error::NonFinite("latent value"));
        }
        let r = (v - mu).round() as i64;
        residuals.push(r);
        Ok(r)
    })?;
    Ok((run, residuals))
}

/// Raw symbol length factor per spatial unit: the rounded, eta-scaled sum of
/// `-log2 likelihood` of the continuous latent, clamped to `[0, c_y]`.
pub fn symbol_length_factors(
    y: &LatentGrid,
    field: &GaussianField,
    eta: f64,
) -> Result<Vec<usize>> {
    if !field.matches(y) {
        return Err(Error::Dimension("field does not match latent".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::Param(format!("eta must be positive, got {eta}")));
    }
    let c_y = y.c_y;
    Ok(y.values()
        .chunks_exact(c_y)
        .zip(
            field
                .mu
                .chunks_exact(c_y)
                .zip(field.sigma.chunks_exact(c_y)),
        )
        .map(|(vals, (mus, sigmas))| {
            let bits: f64 = vals
                .iter()
                .zip(mus.iter().zip(sigmas))
                .map(|(&v, (&m, &s))| -eta * likelihood_unchecked(v, m, s).log2())
                .sum();
            bits_to_length(bits, c_y)
        })
        .collect())
}

pub(crate) fn bits_to_length(bits: f64, c_y: usize) -> usize {
    bits.round().clamp(0.0, c_y as f64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadtree::build_schedule;
    use crate::rng::seeded_stream;

    const SMIN: f64 = 0.11;

    #[test]
    fn constant_channel_floors_sigma() {
        let y = LatentGrid::from_fn(4, 4, 4, |_| 2.84);
        let h = estimate_hyper(&y, SMIN).unwrap();
        assert!((h.mu(0) - 2.8).abs() < 1e-12);
        assert_eq!(h.sigma(0), SMIN);
        assert_eq!(h, estimate_hyper(&y, SMIN).unwrap());
    }

    #[test]
    fn sigma_grid_endpoints() {
        assert_eq!(sigma_level(SMIN, 0), SMIN);
        assert!((sigma_level(SMIN, 63) - 256.0).abs() < 1e-9);
        for k in 0..64u8 {
            assert_eq!(sigma_index(SMIN, sigma_level(SMIN, k)), k);
        }
    }

    #[test]
    fn unit_variance_channel_within_one_step() {
        let mut rng = seeded_stream(3, "hyper-test");
        let y = LatentGrid::from_fn(1000, 1000, 1, |_| rng.normal());
        // sample-statistics oracle
        let n = y.len() as f64;
        let mean = y.values().iter().sum::<f64>() / n;
        let sd = (y.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let h = estimate_hyper(&y, SMIN).unwrap();
        let ratio = (256.0f64 / SMIN).powf(1.0 / 63.0);
        assert!(h.sigma(0) / sd < ratio && sd / h.sigma(0) < ratio);
        assert!((h.sigma(0) - 1.0).abs() < ratio - 1.0);
    }

    #[test]
    fn stats_bytes_roundtrip() {
        let h =
            HyperStats::from_indices(SMIN, vec![-5, 0, 300, i16::MIN], vec![0, 1, 63, 17]).unwrap();
        let bytes = h.to_bytes();
        assert_eq!(bytes.len(), 2 + 12);
        let (back, used) = HyperStats::from_bytes(&bytes, SMIN).unwrap();
        assert_eq!((back, used), (h, 14));
        assert!(HyperStats::from_bytes(&bytes[..5], SMIN).is_err());
    }

    #[test]
    fn quantization_examples() {
        assert!((quantize_latent(1.7, 0.4).unwrap() - 1.4).abs() < 1e-12);
        assert_eq!(quantize_latent(0.3, 0.3).unwrap(), 0.3);
        assert_eq!(quantize_latent(-2.5, 0.0).unwrap(), -3.0);
        assert_eq!(quantize_latent(2.5, 0.0).unwrap(), 3.0);
        assert!(quantize_latent(f64::NAN, 0.0).is_err());
        assert!(quantize_latent(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn likelihood_examples() {
        assert!((likelihood(0.0, 0.0, 1.0, SMIN).unwrap() - 0.382_924_9).abs() < 1e-7);
        assert!((likelihood(0.0, 0.0, 0.5, SMIN).unwrap() - 0.682_689_5).abs() < 1e-7);
        assert_eq!(likelihood(100.0, 0.0, SMIN, SMIN).unwrap(), P_MIN);
        assert!(likelihood(0.0, 0.0, 0.1, SMIN).is_err());
    }

    #[test]
    fn rate_examples() {
        // p(0) = 2 Phi(0.5/sigma) - 1 = 0.5 when 0.5/sigma = Phi^-1(0.75)
        let sigma = 0.5 / 0.674_489_750_196_081_7;
        let y = LatentGrid::zeros(2, 2, 4);
        let mut field = GaussianField::new(2, 2, 4);
        field.sigma.iter_mut().for_each(|s| *s = sigma);
        let bits = rate_bits(&y, &field).unwrap();
        assert!((bits - 16.0).abs() < 1e-9, "{bits}");

        // centred is cheapest at fixed sigma
        field.sigma.iter_mut().for_each(|s| *s = SMIN);
        let centred = rate_bits(&y, &field).unwrap();
        let shifted = LatentGrid::from_fn(2, 2, 4, |_| 1.0);
        assert!(rate_bits(&shifted, &field).unwrap() > centred);

        let schedule = build_schedule(2, 2, 4).unwrap();
        let by_step = rate_bits_by_step(&shifted, &field, &schedule).unwrap();
        let total = rate_bits(&shifted, &field).unwrap();
        assert!((by_step.iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn length_factor_examples() {
        let sigma = 0.5 / 0.674_489_750_196_081_7;
        let y = LatentGrid::zeros(2, 2, 8);
        let mut field = GaussianField::new(2, 2, 8);
        field.sigma.iter_mut().for_each(|s| *s = sigma);
        assert_eq!(symbol_length_factors(&y, &field, 1.0).unwrap(), vec![8; 4]);
        assert_eq!(symbol_length_factors(&y, &field, 0.5).unwrap(), vec![4; 4]);
        assert_eq!(bits_to_length(100.0, 32), 32);
        assert!(symbol_length_factors(&y, &field, 0.0).is_err());
    }

    #[test]
    fn step_zero_uses_hyper_directly() {
        let mut rng = seeded_stream(1, "t");
        let y = LatentGrid::from_fn(4, 4, 8, |_| rng.normal() * 3.0);
        let h = estimate_hyper(&y, SMIN).unwrap();
        let s = build_schedule(4, 4, 8).unwrap();
        let partial = PartialLatent::new(4, 4, 8);
        let f = predict_field(&partial, &h, &s, 0, &ContextParams::default()).unwrap();
        for (i, c) in f.coords.iter().enumerate() {
            assert_eq!(f.mu[i], h.mu(c.ch));
            assert_eq!(f.sigma[i], h.sigma(c.ch).max(SMIN));
        }
        // step 1 needs decoded context
        assert!(matches!(
            predict_field(&partial, &h, &s, 1, &ContextParams::default()),
            Err(Error::Causality(_))
        ));
    }

    #[test]
    fn zero_residual_context_keeps_hyper_mean() {
        let y = LatentGrid::from_fn(4, 4, 8, |c| c.ch as f64);
        let h = estimate_hyper(&y, SMIN).unwrap();
        let s = build_schedule(4, 4, 8).unwrap();
        let mut partial = PartialLatent::new(4, 4, 8);
        for c in s.coords_at_step(0) {
            partial.set_decoded(c, h.mu(c.ch));
        }
        let f = predict_field(&partial, &h, &s, 1, &ContextParams::default()).unwrap();
        for (i, c) in f.coords.iter().enumerate() {
            assert_eq!(f.mu[i], h.mu(c.ch));
        }
    }

    #[test]
    fn cross_channel_reference_is_rescaled() {
        // two channels per group; step-1 references at a cell's other
        // positions borrow channels of other groups
        let h = HyperStats::from_indices(SMIN, vec![0; 8], vec![0, 0, 60, 60, 0, 0, 0, 0]).unwrap();
        let s = build_schedule(2, 2, 8).unwrap();
        let mut partial = PartialLatent::new(2, 2, 8);
        for c in s.coords_at_step(0) {
            partial.set_decoded(c, 2.0 * h.sigma(c.ch));
        }
        let params = ContextParams::default();
        let f = predict_field(&partial, &h, &s, 1, &params).unwrap();
        for (i, c) in f.coords.iter().enumerate() {
            let expect = params.mean_weight[1] * h.sigma(c.ch) * 2.0;
            assert!((f.mu[i] - expect).abs() < 1e-9 * expect.max(1.0), "{c:?}");
        }
    }
}
