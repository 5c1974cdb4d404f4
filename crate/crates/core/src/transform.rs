//! Blockwise orthonormal DCT-II analysis and synthesis.

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::latent::LatentGrid;

/// Level shift applied before analysis.
const MID_GREY: f64 = 128.0;

/// A `b x b` orthonormal DCT-II with a uniform quantization step. Channel
/// `color * b^2 + u * b + v` holds frequency `(u, v)` of colour `color`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    block_size: usize,
    quant_step: f64,
    basis: Vec<f64>,
}

impl TransformSpec {
    pub fn new(block_size: usize, quant_step: f64) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Param("block size must be positive".into()));
        }
        if !(quant_step > 0.0) || !quant_step.is_finite() {
            return Err(Error::Param(format!(
                "quant step must be positive, got {quant_step}"
            )));
        }
        let b = block_size;
        let mut basis = vec![0.0; b * b];
        for k in 0..b {
            let alpha = if k == 0 {
                (1.0 / b as f64).sqrt()
            } else {
                (2.0 / b as f64).sqrt()
            };
            for n in 0..b {
                let angle = std::f64::consts::PI * ((2 * n + 1) * k) as f64 / (2 * b) as f64;
                basis[k * b + n] = alpha * angle.cos();
            }
        }
        Ok(Self {
            block_size,
            quant_step,
            basis,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn quant_step(&self) -> f64 {
        self.quant_step
    }

    pub fn channels(&self) -> usize {
        ImagePlane::CHANNELS * self.block_size * self.block_size
    }

    /// Row `k` of the basis matrix.
    pub fn basis_row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.block_size..(k + 1) * self.block_size]
    }

    /// `max |B B^T - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let b = self.block_size;
        let mut worst = 0.0f64;
        for i in 0..b {
            for j in 0..b {
                let dot: f64 = self
                    .basis_row(i)
                    .iter()
                    .zip(self.basis_row(j))
                    .map(|(x, y)| x * y)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// `out = B x B^T` for a row-major `b x b` block.
    fn forward(&self, x: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        let b = self.block_size;
        let basis = &self.basis;
        for u in 0..b {
            for n in 0..b {
                tmp[u * b + n] = (0..b).map(|m| basis[u * b + m] * x[m * b + n]).sum();
            }
        }
        for u in 0..b {
            for v in 0..b {
                out[u * b + v] = (0..b).map(|n| tmp[u * b + n] * basis[v * b + n]).sum();
            }
        }
    }

    /// `out = B^T c B`.
    fn inverse(&self, c: &[f64], tmp: &mut [f64], out: &mut [f64]) {
        let b = self.block_size;
        let basis = &self.basis;
        for m in 0..b {
            for v in 0..b {
                tmp[m * b + v] = (0..b).map(|u| basis[u * b + m] * c[u * b + v]).sum();
            }
        }
        for m in 0..b {
            for n in 0..b {
                out[m * b + n] = (0..b).map(|v| tmp[m * b + v] * basis[v * b + n]).sum();
            }
        }
    }
}

/// Block transform of an image whose sides are multiples of the block size.
pub fn analyze(image: &ImagePlane, spec: &TransformSpec) -> Result<LatentGrid> {
    let b = spec.block_size;
    if image.height == 0
        || image.width == 0
        || !image.height.is_multiple_of(b)
        || !image.width.is_multiple_of(b)
    {
        return Err(Error::Dimension(format!(
            "image {}x{} is not padded to multiples of {b}",
            image.height, image.width
        )));
    }
    let (h_y, w_y) = (image.height / b, image.width / b);
    let mut y = LatentGrid::zeros(h_y, w_y, spec.channels());
    let bb = b * b;
    let mut block = vec![0.0; bb];
    let mut tmp = vec![0.0; bb];
    let mut coeffs = vec![0.0; bb];
    for row in 0..h_y {
        for col in 0..w_y {
            for color in 0..ImagePlane::CHANNELS {
                for m in 0..b {
                    for n in 0..b {
                        block[m * b + n] =
                            image.get(row * b + m, col * b + n, color) as f64 - MID_GREY;
                    }
                }
                spec.forward(&block, &mut tmp, &mut coeffs);
                let unit = &mut y.unit_mut(row, col)[color * bb..(color + 1) * bb];
                for (dst, &c) in unit.iter_mut().zip(&coeffs) {
                    *dst = c / spec.quant_step;
                }
            }
        }
    }
    Ok(y)
}

/// Inverse transform, level shift, rounding half away from zero and clamping
/// to 8 bits, then cropping to `height x width`.
pub fn synthesize(
    y: &LatentGrid,
    spec: &TransformSpec,
    height: usize,
    width: usize,
) -> Result<ImagePlane> {
    let b = spec.block_size;
    if y.c_y != spec.channels() {
        return Err(Error::Dimension(format!(
            "latent has {} channels, transform expects {}",
            y.c_y,
            spec.channels()
        )));
    }
    let (full_h, full_w) = (y.h_y * b, y.w_y * b);
    if height > full_h || width > full_w {
        return Err(Error::Dimension(format!(
            "crop {height}x{width} exceeds latent extent {full_h}x{full_w}"
        )));
    }
    let bb = b * b;
    let mut samples = vec![0u8; full_h * full_w * ImagePlane::CHANNELS];
    let mut coeffs = vec![0.0; bb];
    let mut tmp = vec![0.0; bb];
    let mut block = vec![0.0; bb];
    for row in 0..y.h_y {
        for col in 0..y.w_y {
            for color in 0..ImagePlane::CHANNELS {
                let unit = &y.unit(row, col)[color * bb..(color + 1) * bb];
                for (dst, &v) in coeffs.iter_mut().zip(unit) {
                    *dst = v * spec.quant_step;
                }
                spec.inverse(&coeffs, &mut tmp, &mut block);
                for m in 0..b {
                    for n in 0..b {
                        let v = (block[m * b + n] + MID_GREY).round().clamp(0.0, 255.0);
                        let (r, c) = (row * b + m, col * b + n);
                        samples[(r * full_w + c) * ImagePlane::CHANNELS + color] = v as u8;
                    }
                }
            }
        }
    }
    ImagePlane::new(full_h, full_w, samples)?.crop(height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn random_image(h: usize, w: usize, seed: u64) -> ImagePlane {
        let mut rng = seeded_stream(seed, "transform-test");
        ImagePlane::from_fn(h, w, |_, _, _| rng.below(256) as u8)
    }

    #[test]
    fn basis_is_orthonormal() {
        for b in [1, 2, 4, 8, 16] {
            let spec = TransformSpec::new(b, 1.0).unwrap();
            assert!(spec.orthonormality_error() <= 1e-12, "b = {b}");
        }
    }

    #[test]
    fn mid_grey_gives_zero_latents() {
        let spec = TransformSpec::new(4, 8.0).unwrap();
        let y = analyze(&ImagePlane::filled(8, 8, 128), &spec).unwrap();
        assert!(y.values().iter().all(|v| v.abs() < 1e-12));
        let back = synthesize(&LatentGrid::zeros(2, 2, 48), &spec, 8, 8).unwrap();
        assert!(back.samples().iter().all(|&v| v == 128));
    }

    #[test]
    fn parseval() {
        let spec = TransformSpec::new(8, 4.0).unwrap();
        let img = random_image(16, 24, 3);
        let y = analyze(&img, &spec).unwrap();
        let pixel: f64 = img
            .samples()
            .iter()
            .map(|&v| (v as f64 - 128.0).powi(2))
            .sum();
        let coeff: f64 = y.values().iter().map(|&v| (v * 4.0).powi(2)).sum();
        assert!((coeff / pixel - 1.0).abs() < 1e-6);
    }

    #[test]
    fn roundtrip_is_exact_after_rounding() {
        let spec = TransformSpec::new(4, 3.0).unwrap();
        let img = random_image(12, 8, 9);
        let back = synthesize(&analyze(&img, &spec).unwrap(), &spec, 12, 8).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn large_coefficients_clamp() {
        let spec = TransformSpec::new(2, 1.0).unwrap();
        let mut y = LatentGrid::zeros(1, 1, 12);
        y.set(crate::latent::Coord::new(0, 0, 0), 1e6);
        y.set(crate::latent::Coord::new(0, 0, 4), -1e6);
        let img = synthesize(&y, &spec, 2, 2).unwrap();
        assert!((0..4).all(|i| img.samples()[i * 3] == 255 && img.samples()[i * 3 + 1] == 0));
    }

    #[test]
    fn rejects_unpadded_and_mismatched() {
        let spec = TransformSpec::new(4, 1.0).unwrap();
        assert!(analyze(&ImagePlane::filled(6, 8, 0), &spec).is_err());
        assert!(synthesize(&LatentGrid::zeros(1, 1, 12), &spec, 4, 4).is_err());
        assert!(synthesize(&LatentGrid::zeros(1, 1, 48), &spec, 5, 4).is_err());
        assert!(TransformSpec::new(4, 0.0).is_err());
    }
}
