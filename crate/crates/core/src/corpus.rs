//! Procedural test corpus: gradients, noise textures, checkerboards and
//! separable AR(2) fields with natural-image-like spectra.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::rng::{seeded_stream, SeededStream};

const CORPUS_SEED: u64 = 0x5eed_c0de;

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn gradient(h: usize, w: usize) -> ImagePlane {
    ImagePlane::from_fn(h, w, |r, c, ch| {
        let (u, v) = (r as f64 / h as f64, c as f64 / w as f64);
        to_u8(match ch {
            0 => 255.0 * u,
            1 => 255.0 * v,
            _ => 255.0 * (1.0 - 0.5 * (u + v)),
        })
    })
}

fn radial(h: usize, w: usize) -> ImagePlane {
    let (cy, cx) = (h as f64 * 0.4, w as f64 * 0.6);
    ImagePlane::from_fn(h, w, |r, c, ch| {
        let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
        let phase = d / 18.0 + ch as f64 * 2.1;
        to_u8(128.0 + 90.0 * phase.cos() * (-d / 300.0).exp())
    })
}

fn checkerboard(h: usize, w: usize, square: usize, rng: &mut SeededStream) -> ImagePlane {
    let palette: Vec<[f64; 3]> = (0..2)
        .map(|_| std::array::from_fn(|_| 30.0 + 195.0 * rng.uniform()))
        .collect();
    ImagePlane::from_fn(h, w, |r, c, ch| {
        to_u8(palette[(r / square + c / square) % 2][ch])
    })
}

fn white_noise(h: usize, w: usize, rng: &mut SeededStream) -> ImagePlane {
    ImagePlane::from_fn(h, w, |_, _, _| rng.below(256) as u8)
}

/// Applies `x[t] = a1 x[t-1] + a2 x[t-2] + e[t]` along rows, then columns.
fn ar2_plane(h: usize, w: usize, a1: f64, a2: f64, rng: &mut SeededStream) -> Vec<f64> {
    let mut x: Vec<f64> = (0..h * w).map(|_| rng.normal()).collect();
    for r in 0..h {
        for c in 2..w {
            x[r * w + c] += a1 * x[r * w + c - 1] + a2 * x[r * w + c - 2];
        }
    }
    for r in 2..h {
        for c in 0..w {
            x[r * w + c] += a1 * x[(r - 1) * w + c] + a2 * x[(r - 2) * w + c];
        }
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    x.iter().map(|v| (v - mean) / sd).collect()
}

fn ar2_field(h: usize, w: usize, a1: f64, a2: f64, rng: &mut SeededStream) -> ImagePlane {
    let luma = ar2_plane(h, w, a1, a2, rng);
    let chroma = ar2_plane(h, w, a1, a2, rng);
    ImagePlane::from_fn(h, w, |r, c, ch| {
        let (l, k) = (luma[r * w + c], chroma[r * w + c]);
        to_u8(128.0 + 45.0 * l + [12.0, -6.0, -14.0][ch] * k)
    })
}

/// Sum of randomly oriented sinusoids plus mild noise.
fn texture(h: usize, w: usize, rng: &mut SeededStream) -> ImagePlane {
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            let angle = rng.uniform() * std::f64::consts::PI;
            let freq = 0.05 + 0.4 * rng.uniform();
            (
                freq * angle.cos(),
                freq * angle.sin(),
                rng.uniform() * 6.3,
                10.0 + 25.0 * rng.uniform(),
            )
        })
        .collect();
    let mut noise = seeded_stream(CORPUS_SEED, "texture-noise");
    ImagePlane::from_fn(h, w, |r, c, ch| {
        let s: f64 = waves
            .iter()
            .map(|&(fy, fx, ph, amp)| {
                amp * (fy * r as f64 + fx * c as f64 + ph + ch as f64 * 0.7).sin()
            })
            .sum();
        to_u8(128.0 + s + 6.0 * noise.normal())
    })
}

/// The eight corpus images, named and sorted by name.
pub fn generate_corpus() -> Vec<(String, ImagePlane)> {
    let rng = |name: &str| seeded_stream(CORPUS_SEED, name);
    vec![
        (
            "ar2_fine".into(),
            ar2_field(240, 176, 1.2, -0.4, &mut rng("ar2_fine")),
        ),
        (
            "ar2_smooth".into(),
            ar2_field(256, 256, 1.6, -0.68, &mut rng("ar2_smooth")),
        ),
        (
            "checker_24".into(),
            checkerboard(256, 256, 24, &mut rng("checker_24")),
        ),
        (
            "checker_7".into(),
            checkerboard(200, 200, 7, &mut rng("checker_7")),
        ),
        ("gradient".into(), gradient(256, 256)),
        (
            "noise_white".into(),
            white_noise(160, 160, &mut rng("noise_white")),
        ),
        ("radial".into(), radial(192, 224)),
        ("texture".into(), texture(256, 192, &mut rng("texture"))),
    ]
}

pub fn write_corpus(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    generate_corpus()
        .into_iter()
        .map(|(name, img)| {
            let path = dir.join(format!("{name}.ppm"));
            img.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Loads every `.ppm` in a directory, named by file stem, sorted by name.
pub fn load_corpus(dir: impl AsRef<Path>) -> Result<Vec<(String, ImagePlane)>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Format(format!(
            "no .ppm files in {}",
            dir.as_ref().display()
        )));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            Ok((name, ImagePlane::read(&p)?))
        })
        .collect()
}
