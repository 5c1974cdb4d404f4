//! Learned-image-codec stand-in: block transform, schedule-ordered entropy
//! coding of the quantized latent, and the `QLIC` bitstream.
//!
//! Layout (integers little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `QLIC` |
//! | 1 | format version |
//! | 2 + 2 | original height, width |
//! | 1 | block size |
//! | 2 | latent channels |
//! | 4 | quantization step (f32) |
//! | 4 | config digest |
//! | 2 + 3C | hyper statistics |
//! | rest | range-coded residuals |
//!
//! The config digest covers every parameter the decoder needs but does not
//! read from the stream (sigma floor, context parameters), so a decoder with a
//! different configuration refuses the stream instead of desynchronizing.

use sha2::{Digest, Sha256};

use crate::config::{derive_latent_dims, ContextParams, SystemConfig};
use crate::entropy::{
    self, estimate_hyper, predict_field, quantize_latent, quantize_schedule, run_schedule,
    GaussianField, HyperStats, PartialLatent,
};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::latent::LatentGrid;
use crate::quadtree::{fuse, partition, CodingSchedule, PartitionMode, PartitionedLatent, STEPS};
use crate::rangecoder::{RangeDecoder, RangeEncoder, TableCache};
use crate::transform::{analyze, synthesize, TransformSpec};

pub const MAGIC: &[u8; 4] = b"QLIC";
pub const FORMAT_VERSION: u8 = 1;
/// Bytes before the hyper statistics block.
pub const FIXED_HEADER_LEN: usize = 4 + 1 + 2 + 2 + 1 + 2 + 4 + 4;

/// Digest of the decoding-relevant configuration.
pub fn config_digest(config: &SystemConfig) -> u32 {
    let mut h = Sha256::new();
    h.update(b"QLIC-config");
    h.update([FORMAT_VERSION]);
    h.update((config.block_size as u64).to_le_bytes());
    h.update((config.channels_cy as u64).to_le_bytes());
    h.update(stream_quant_step(config).to_le_bytes());
    h.update(config.sigma_min.to_le_bytes());
    for v in config
        .context
        .mean_weight
        .iter()
        .chain(&config.context.sigma_mult)
    {
        h.update(v.to_le_bytes());
    }
    let out = h.finalize();
    u32::from_le_bytes([out[0], out[1], out[2], out[3]])
}

/// The quantization step as stored in the stream; both sides use this value.
fn stream_quant_step(config: &SystemConfig) -> f32 {
    config.quant_step as f32
}

#[derive(Debug, Clone, PartialEq)]
pub struct LicHeader {
    pub height: usize,
    pub width: usize,
    pub block_size: usize,
    pub channels: usize,
    pub quant_step: f32,
    pub digest: u32,
    pub hyper: HyperStats,
}

impl LicHeader {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN + 2 + 3 * self.channels);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(self.height as u16).to_le_bytes());
        out.extend_from_slice(&(self.width as u16).to_le_bytes());
        out.push(self.block_size as u8);
        out.extend_from_slice(&(self.channels as u16).to_le_bytes());
        out.extend_from_slice(&self.quant_step.to_le_bytes());
        out.extend_from_slice(&self.digest.to_le_bytes());
        out.extend_from_slice(&self.hyper.to_bytes());
        out
    }

    /// Parses a header, returning it and its length in bytes.
    pub fn parse(bytes: &[u8], sigma_min: f64) -> Result<(Self, usize)> {
        let fixed = bytes
            .get(..FIXED_HEADER_LEN)
            .ok_or(Error::StreamExhausted)?;
        if &fixed[..4] != MAGIC {
            return Err(Error::Format("missing QLIC magic".into()));
        }
        if fixed[4] != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", fixed[4])));
        }
        let u16_at = |i: usize| u16::from_le_bytes([fixed[i], fixed[i + 1]]) as usize;
        let (hyper, used) = HyperStats::from_bytes(&bytes[FIXED_HEADER_LEN..], sigma_min)?;
        let header = Self {
            height: u16_at(5),
            width: u16_at(7),
            block_size: fixed[9] as usize,
            channels: u16_at(10),
            quant_step: f32::from_le_bytes(fixed[12..16].try_into().unwrap()),
            digest: u32::from_le_bytes(fixed[16..20].try_into().unwrap()),
            hyper,
        };
        if header.hyper.channels() != header.channels {
            return Err(Error::Corrupt("stats block channel count disagrees".into()));
        }
        Ok((header, FIXED_HEADER_LEN + used))
    }
}

/// Output of [`encode_latents`].
#[derive(Debug, Clone)]
pub struct LatentCoding {
    pub payload: Vec<u8>,
    pub y_hat: LatentGrid,
    pub field: GaussianField,
    /// Estimated rate of `y_hat` under `field`.
    pub rate_bits: f64,
}

/// Quantizes and range-codes a latent in schedule order.
pub fn encode_latents(
    y: &LatentGrid,
    hyper: &HyperStats,
    params: &ContextParams,
) -> Result<LatentCoding> {
    let (run, residuals) = quantize_schedule(y, hyper, params)?;
    let schedule = CodingSchedule::for_grid(y)?;
    let mut cache = TableCache::new(hyper.sigma_min());
    let mut enc = RangeEncoder::new();
    let coords = (0..STEPS).flat_map(|s| schedule.coords_at_step(s));
    for (c, &r) in coords.zip(&residuals) {
        let (_, sigma) = run.field.get(c);
        enc.put(r, cache.gaussian(sigma)?)?;
    }
    let rate_bits = entropy::rate_bits(&run.y_hat, &run.field)?;
    Ok(LatentCoding {
        payload: enc.finish(),
        y_hat: run.y_hat,
        field: run.field,
        rate_bits,
    })
}

/// Same coding as [`encode_latents`], driven by explicit concat-mode
/// partition tensors instead of the schedule iterator. Returns the payload
/// and the quantized step tensors.
pub fn encode_partitioned(
    y: &LatentGrid,
    hyper: &HyperStats,
    params: &ContextParams,
) -> Result<(Vec<u8>, PartitionedLatent)> {
    let schedule = CodingSchedule::for_grid(y)?;
    let parts = partition(y, PartitionMode::Concat)?;
    let mut partial = PartialLatent::new(y.h_y, y.w_y, y.c_y);
    let mut cache = TableCache::new(hyper.sigma_min());
    let mut enc = RangeEncoder::new();
    let mut quantized = parts.clone();
    for step in 0..STEPS {
        let field = predict_field(&partial, hyper, &schedule, step, params)?;
        let tensor = &parts.steps[step];
        let out = quantized.steps[step].values_mut();
        for (i, &v) in tensor.values().iter().enumerate() {
            let q = quantize_latent(v, field.mu[i])?;
            enc.put(
                (q - field.mu[i]).round() as i64,
                cache.gaussian(field.sigma[i])?,
            )?;
            out[i] = q;
        }
        for (&c, &q) in field.coords.iter().zip(quantized.steps[step].values()) {
            partial.set_decoded(c, q);
        }
    }
    Ok((enc.finish(), quantized))
}

/// Inverse of [`encode_latents`]; fails unless the payload is consumed exactly.
pub fn decode_latents(
    payload: &[u8],
    schedule: &CodingSchedule,
    hyper: &HyperStats,
    params: &ContextParams,
) -> Result<LatentGrid> {
    let mut cache = TableCache::new(hyper.sigma_min());
    let mut dec = RangeDecoder::new(payload)?;
    let run = run_schedule(schedule, hyper, params, |_, _, sigma| {
        dec.get(cache.gaussian(sigma)?)
    })?;
    if !dec.is_exhausted() {
        return Err(Error::Corrupt("trailing bytes after payload".into()));
    }
    Ok(run.y_hat)
}

/// An encoded image with its accounting.
#[derive(Debug, Clone)]
pub struct LicEncoded {
    pub stream: Vec<u8>,
    pub header_len: usize,
    pub coding: LatentCoding,
}

impl LicEncoded {
    pub fn payload_bits(&self) -> usize {
        8 * (self.stream.len() - self.header_len)
    }

    pub fn total_bits(&self) -> usize {
        8 * self.stream.len()
    }
}

fn transform_for(config: &SystemConfig) -> Result<TransformSpec> {
    if config.channels_cy != 3 * config.block_size * config.block_size {
        return Err(Error::Config(vec![format!(
            "image coding needs channels_cy = 3 * block_size^2 = {}",
            3 * config.block_size * config.block_size
        )]));
    }
    TransformSpec::new(config.block_size, stream_quant_step(config) as f64)
}

/// Pads, transforms and estimates hyper statistics: the shared front end of
/// both pipelines.
pub fn analyze_image(
    image: &ImagePlane,
    config: &SystemConfig,
) -> Result<(LatentGrid, HyperStats)> {
    if image.height > u16::MAX as usize || image.width > u16::MAX as usize {
        return Err(Error::Dimension("image sides must fit in 16 bits".into()));
    }
    let spec = transform_for(config)?;
    let dims = derive_latent_dims(image.height, image.width, config);
    let padded = image.pad_edge(dims.padded_h, dims.padded_w)?;
    let y = analyze(&padded, &spec)?;
    let hyper = estimate_hyper(&y, config.sigma_min)?;
    Ok((y, hyper))
}

/// Synthesizes a reconstructed latent back to an image of the given size.
pub fn synthesize_image(
    y_hat: &LatentGrid,
    config: &SystemConfig,
    height: usize,
    width: usize,
) -> Result<ImagePlane> {
    synthesize(y_hat, &transform_for(config)?, height, width)
}

pub fn lic_encode(image: &ImagePlane, config: &SystemConfig) -> Result<LicEncoded> {
    let config = config.clone().validated()?;
    let (y, hyper) = analyze_image(image, &config)?;
    let coding = encode_latents(&y, &hyper, &config.context)?;
    let header = LicHeader {
        height: image.height,
        width: image.width,
        block_size: config.block_size,
        channels: config.channels_cy,
        quant_step: stream_quant_step(&config),
        digest: config_digest(&config),
        hyper,
    };
    let mut stream = header.to_bytes();
    let header_len = stream.len();
    stream.extend_from_slice(&coding.payload);
    Ok(LicEncoded {
        stream,
        header_len,
        coding,
    })
}

#[derive(Debug, Clone)]
pub struct LicDecoded {
    pub image: ImagePlane,
    pub y_hat: LatentGrid,
}

pub fn lic_decode(stream: &[u8], config: &SystemConfig) -> Result<LicDecoded> {
    let (header, header_len) = LicHeader::parse(stream, config.sigma_min)?;
    let expected = config_digest(config);
    if header.digest != expected {
        return Err(Error::DigestMismatch {
            stream: header.digest,
            decoder: expected,
        });
    }
    let config = config.clone().validated()?;
    let dims = derive_latent_dims(header.height, header.width, &config);
    let schedule = CodingSchedule {
        h_y: dims.h_y,
        w_y: dims.w_y,
        c_y: header.channels,
    };
    let y_hat = decode_latents(
        &stream[header_len..],
        &schedule,
        &header.hyper,
        &config.context,
    )?;
    let image = synthesize_image(&y_hat, &config, header.height, header.width)?;
    Ok(LicDecoded { image, y_hat })
}

/// Checks that the partition-driven coder reproduces the schedule coder.
pub fn schedule_paths_agree(
    y: &LatentGrid,
    hyper: &HyperStats,
    params: &ContextParams,
) -> Result<bool> {
    let direct = encode_latents(y, hyper, params)?;
    let (payload, parts) = encode_partitioned(y, hyper, params)?;
    Ok(payload == direct.payload && fuse(&parts)? == direct.y_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn small_config() -> SystemConfig {
        SystemConfig::for_block_size(4)
    }

    fn textured(h: usize, w: usize) -> ImagePlane {
        let mut rng = seeded_stream(5, "lic-test");
        ImagePlane::from_fn(h, w, |r, c, ch| {
            let base =
                128.0 + 60.0 * ((r as f64 / 7.0).sin() + (c as f64 / 11.0 + ch as f64).cos()) / 2.0;
            (base + 10.0 * rng.normal()).round().clamp(0.0, 255.0) as u8
        })
    }

    #[test]
    fn roundtrip_latents_match() {
        let cfg = small_config();
        let img = textured(37, 50);
        let enc = lic_encode(&img, &cfg).unwrap();
        let dec = lic_decode(&enc.stream, &cfg).unwrap();
        assert_eq!(dec.y_hat, enc.coding.y_hat);
        assert_eq!((dec.image.height, dec.image.width), (37, 50));
    }

    #[test]
    fn deterministic_stream() {
        let cfg = small_config();
        let img = textured(32, 32);
        assert_eq!(
            lic_encode(&img, &cfg).unwrap().stream,
            lic_encode(&img, &cfg).unwrap().stream
        );
    }

    #[test]
    fn digest_mismatch_rejected() {
        let cfg = small_config();
        let enc = lic_encode(&textured(16, 16), &cfg).unwrap();
        let mut other = cfg.clone();
        other.sigma_min = 0.2;
        assert!(matches!(
            lic_decode(&enc.stream, &other),
            Err(Error::DigestMismatch { .. })
        ));
    }

    #[test]
    fn truncation_rejected() {
        let cfg = small_config();
        let enc = lic_encode(&textured(32, 32), &cfg).unwrap();
        for cut in [
            3,
            FIXED_HEADER_LEN + 1,
            enc.header_len + 2,
            enc.stream.len() - 1,
        ] {
            assert!(lic_decode(&enc.stream[..cut], &cfg).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn constant_image_is_nearly_header_only() {
        let cfg = SystemConfig::default();
        let img = ImagePlane::filled(64, 64, 77);
        let enc = lic_encode(&img, &cfg).unwrap();
        assert!(enc.payload_bits() <= 64);
        assert_eq!(lic_decode(&enc.stream, &cfg).unwrap().image, img);
    }

    #[test]
    fn partition_path_matches() {
        let cfg = small_config();
        let (y, hyper) = analyze_image(&textured(32, 48), &cfg).unwrap();
        assert!(schedule_paths_agree(&y, &hyper, &cfg.context).unwrap());
    }
}
