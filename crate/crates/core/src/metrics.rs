//! Image quality and rate-distortion comparison metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImagePlane;

/// Reported value for identical inputs.
pub const DB_CAP: f64 = 100.0;

/// MS-SSIM constants from Wang, Simoncelli and Bovik, "Multiscale structural
/// similarity for image quality assessment" (Asilomar 2003).
pub mod msssim_constants {
    pub const K1: f64 = 0.01;
    pub const K2: f64 = 0.03;
    pub const WINDOW: usize = 11;
    pub const WINDOW_SIGMA: f64 = 1.5;
    /// Per-scale exponents, finest first.
    pub const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    /// Smallest side kept at the coarsest scale.
    pub const MIN_COARSE_SIDE: usize = 10;
}

fn check_dims(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if a.sample_count() == 0 {
        return Err(Error::Dimension("empty image".into()));
    }
    Ok(())
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.sample_count() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        DB_CAP
    } else {
        (10.0 * (255.0 * 255.0 / mse).log10()).min(DB_CAP)
    }
}

pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Plane {
    fn from_image(img: &ImagePlane, ch: usize) -> Self {
        Self {
            h: img.height,
            w: img.width,
            v: (0..img.height * img.width)
                .map(|i| img.samples()[i * ImagePlane::CHANNELS + ch] as f64)
                .collect(),
        }
    }

    fn downsample(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut v = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let at = |rr: usize, cc: usize| self.v[rr * self.w + cc];
                v.push(
                    (at(2 * r, 2 * c)
                        + at(2 * r, 2 * c + 1)
                        + at(2 * r + 1, 2 * c)
                        + at(2 * r + 1, 2 * c + 1))
                        / 4.0,
                );
            }
        }
        Self { h, w, v }
    }

    fn mul(&self, other: &Self) -> Self {
        Self {
            h: self.h,
            w: self.w,
            v: self.v.iter().zip(&other.v).map(|(a, b)| a * b).collect(),
        }
    }

    /// Separable valid-mode filtering.
    fn filter(&self, taps: &[f64]) -> Self {
        let n = taps.len();
        let (h, w) = (self.h + 1 - n, self.w + 1 - n);
        let mut rows = vec![0.0; self.h * w];
        for r in 0..self.h {
            for c in 0..w {
                rows[r * w + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * self.v[r * self.w + c + k])
                    .sum();
            }
        }
        let mut v = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                v[r * w + c] = taps
                    .iter()
                    .enumerate()
                    .map(|(k, t)| t * rows[(r + k) * w + c])
                    .sum();
            }
        }
        Self { h, w, v }
    }
}

fn gaussian_taps(n: usize) -> Vec<f64> {
    let centre = (n as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            (-((i as f64 - centre).powi(2)) / (2.0 * msssim_constants::WINDOW_SIGMA.powi(2))).exp()
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|t| t / sum).collect()
}

/// Mean luminance and contrast-structure terms of SSIM on one scale.
fn ssim_terms(x: &Plane, y: &Plane) -> (f64, f64) {
    use msssim_constants::{K1, K2, WINDOW};
    let n = WINDOW.min(x.h).min(x.w);
    let taps = gaussian_taps(n);
    let (c1, c2) = ((K1 * 255.0).powi(2), (K2 * 255.0).powi(2));
    let mx = x.filter(&taps);
    let my = y.filter(&taps);
    let sxx = x.mul(x).filter(&taps);
    let syy = y.mul(y).filter(&taps);
    let sxy = x.mul(y).filter(&taps);
    let (mut lum, mut cs) = (0.0, 0.0);
    for i in 0..mx.v.len() {
        let (a, b) = (mx.v[i], my.v[i]);
        let vx = sxx.v[i] - a * a;
        let vy = syy.v[i] - b * b;
        let cov = sxy.v[i] - a * b;
        let c = (2.0 * cov + c2) / (vx + vy + c2);
        lum += (2.0 * a * b + c1) / (a * a + b * b + c1) * c;
        cs += c;
    }
    let count = mx.v.len() as f64;
    (lum / count, cs / count)
}

/// Number of scales used for an image whose shorter side is `min_side`.
pub fn msssim_scales(min_side: usize) -> usize {
    let mut m = 1;
    while m < msssim_constants::WEIGHTS.len() && min_side >= msssim_constants::MIN_COARSE_SIDE << m
    {
        m += 1;
    }
    m
}

/// Multi-scale SSIM averaged over the colour channels. Images too small
/// for five scales use fewer, with the weights renormalized; negative
/// contrast terms count as zero.
pub fn ms_ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_dims(a, b)?;
    let scales = msssim_scales(a.height.min(a.width));
    let weights = &msssim_constants::WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for ch in 0..ImagePlane::CHANNELS {
        let (mut x, mut y) = (Plane::from_image(a, ch), Plane::from_image(b, ch));
        let mut value = 1.0;
        for (s, &w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&x, &y);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(w / total);
            if s + 1 < scales {
                x = x.downsample();
                y = y.downsample();
            }
        }
        acc += value;
    }
    Ok((acc / ImagePlane::CHANNELS as f64).clamp(0.0, 1.0))
}

/// `-10 log10(1 - mean)`, capped at [`DB_CAP`].
pub fn msssim_db(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Param("no MS-SSIM values".into()));
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let loss = 1.0 - mean;
    Ok(if loss <= 0.0 {
        DB_CAP
    } else {
        (-10.0 * loss.log10()).min(DB_CAP)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub rate: f64,
    pub quality: f64,
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = Self::end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = Self::end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self { x, y, d }
    }

    fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
        let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
        if d.signum() != d0.signum() {
            0.0
        } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
            3.0 * d0
        } else {
            d
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let k = self.x[1..n - 1].partition_point(|&v| v <= t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * self.y[k]
            + (s3 - 2.0 * s2 + s) * h * self.d[k]
            + (-2.0 * s3 + 3.0 * s2) * self.y[k + 1]
            + (s3 - s2) * h * self.d[k + 1]
    }

    /// Exact integral over `[lo, hi]` (Simpson's rule per cubic piece).
    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.x.len() - 1 {
            let (a, b) = (self.x[k].max(lo), self.x[k + 1].min(hi));
            if b > a {
                let m = 0.5 * (a + b);
                total += (b - a) / 6.0 * (self.eval(a) + 4.0 * self.eval(m) + self.eval(b));
            }
        }
        total
    }
}

fn log_rate_curve(points: &[RdPoint]) -> Result<Pchip> {
    if points.len() < 4 {
        return Err(Error::Param(format!(
            "BD metric needs at least 4 points, got {}",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    if pts
        .iter()
        .any(|p| !(p.rate > 0.0) || !p.rate.is_finite() || !p.quality.is_finite())
    {
        return Err(Error::Param(
            "BD metric needs positive finite rates and finite qualities".into(),
        ));
    }
    pts.sort_by(|a, b| a.quality.total_cmp(&b.quality));
    if pts.windows(2).any(|w| w[0].quality == w[1].quality) {
        return Err(Error::Param("duplicate quality values".into()));
    }
    Ok(Pchip::new(
        pts.iter().map(|p| p.quality).collect(),
        pts.iter().map(|p| p.rate.log10()).collect(),
    ))
}

/// Average percent rate change of `b` relative to `a` at equal quality over
/// the common quality range; negative means `b` needs less rate.
pub fn bd_metric(a: &[RdPoint], b: &[RdPoint]) -> Result<f64> {
    let (fa, fb) = (log_rate_curve(a)?, log_rate_curve(b)?);
    let lo = fa.x[0].max(fb.x[0]);
    let hi = fa.x[fa.x.len() - 1].min(fb.x[fb.x.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Param("curves share no quality range".into()));
    }
    let avg = (fb.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn noisy(img: &ImagePlane, amp: f64, seed: u64) -> ImagePlane {
        let mut rng = seeded_stream(seed, "metrics");
        ImagePlane::from_fn(img.height, img.width, |r, c, ch| {
            (img.get(r, c, ch) as f64 + amp * rng.normal())
                .round()
                .clamp(0.0, 255.0) as u8
        })
    }

    fn ramp(h: usize, w: usize) -> ImagePlane {
        ImagePlane::from_fn(h, w, |r, c, ch| ((r * 3 + c * 2 + ch * 40) % 256) as u8)
    }

    #[test]
    fn psnr_examples() {
        let a = ImagePlane::filled(4, 4, 10);
        assert_eq!(psnr(&a, &a).unwrap(), DB_CAP);
        let b = ImagePlane::filled(4, 4, 11);
        assert!((psnr(&a, &b).unwrap() - 48.130_803_608_679_1).abs() < 1e-9);
        let black = ImagePlane::filled(2, 2, 0);
        let white = ImagePlane::filled(2, 2, 255);
        assert!(psnr(&black, &white).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &ImagePlane::filled(4, 5, 0)).is_err());
    }

    #[test]
    fn msssim_identity_and_range() {
        let a = ramp(64, 48);
        assert!((ms_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = noisy(&a, 20.0, 1);
        let v = ms_ssim(&a, &b).unwrap();
        assert!(v > 0.0 && v < 1.0);
        let c = noisy(&a, 5.0, 1);
        assert!(ms_ssim(&a, &c).unwrap() > v);
    }

    #[test]
    fn scale_count() {
        assert_eq!(msssim_scales(160), 5);
        assert_eq!(msssim_scales(159), 4);
        assert_eq!(msssim_scales(20), 2);
        assert_eq!(msssim_scales(5), 1);
    }

    #[test]
    fn db_conversion() {
        assert!((msssim_db(&[0.9]).unwrap() - 10.0).abs() < 1e-9);
        assert!((msssim_db(&[0.98, 1.0]).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(msssim_db(&[1.0]).unwrap(), DB_CAP);
        assert!(msssim_db(&[]).is_err());
    }

    fn curve(scale: f64) -> Vec<RdPoint> {
        [0.1, 0.2, 0.4, 0.8, 1.6]
            .iter()
            .map(|&r: &f64| RdPoint {
                rate: r * scale,
                quality: 30.0 + 4.0 * r.ln() - 0.3 * r.ln().powi(2),
            })
            .collect()
    }

    #[test]
    fn bd_uniform_shift() {
        let a = curve(1.0);
        assert!(bd_metric(&a, &a).unwrap().abs() < 1e-12);
        assert!((bd_metric(&a, &curve(0.9)).unwrap() + 10.0).abs() < 1e-9);
    }

    #[test]
    fn bd_errors() {
        let a = curve(1.0);
        assert!(bd_metric(&a[..3], &a).is_err());
        let far: Vec<RdPoint> = a
            .iter()
            .map(|p| RdPoint {
                rate: p.rate,
                quality: p.quality + 100.0,
            })
            .collect();
        assert!(bd_metric(&a, &far).is_err());
    }

    #[test]
    fn pchip_reproduces_linear_data() {
        let p = Pchip::new(vec![0.0, 1.0, 3.0, 4.0], vec![1.0, 3.0, 7.0, 9.0]);
        assert!((p.eval(2.0) - 5.0).abs() < 1e-12);
        assert!((p.integrate(0.0, 4.0) - 20.0).abs() < 1e-12);
        assert!((p.integrate(0.5, 1.5) - 3.0).abs() < 1e-12);
    }
}
