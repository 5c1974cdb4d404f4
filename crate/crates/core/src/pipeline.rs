//! End-to-end runs over image sets, parameter sweeps and JSON reports.
//!
//! Images are processed in parallel and reports are sorted by image id, so a
//! configuration and seed always produce the same report bytes. With a dump
//! directory every intermediate artifact is written next to the report:
//!
//! | file | content |
//! |------|---------|
//! | `{id}.latent` | analysis latent, see [`LatentGrid::to_dump_bytes`] |
//! | `{id}.qlic` | LIC bitstream |
//! | `{id}.side` | serialized [`SideBundle`] |
//! | `{id}.sym` | transmitted symbols, see [`SymbolFrame::to_dump_bytes`] |
//! | `{id}.trace` | channel trace, see [`ChannelRealization::trace_bytes`] |

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    csi_estimate, measure, realize, transmit, zf_equalize, ChannelModel, ChannelStats,
};
use crate::config::SystemConfig;
use crate::entropy::{quantize_schedule, symbol_length_factors};
use crate::error::{Error, Result};
use crate::image::ImagePlane;
use crate::latent::LatentGrid;
use crate::lic::{analyze_image, lic_decode, lic_encode, synthesize_image};
use crate::metrics::{bd_metric, ms_ssim, msssim_db, psnr, RdPoint};
use crate::sideinfo::{cbr_report, CbrReport, SideBits, SideBundle};
use crate::symbolizer::{map_unit, pack_frame, unmap_unit, unpack_frame, MappingBank, RateMap};

#[cfg(doc)]
use crate::{channel::ChannelRealization, symbolizer::SymbolFrame};

pub const REPORT_VERSION: u32 = 1;

/// Tolerance of the coded payload against the model rate: relative part and
/// fixed bits.
pub const RATE_TOLERANCE: (f64, f64) = (0.01, 64.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Lic,
    Deepsc,
    /// Shannon-limit separate coding of the LIC stream. Not a real system.
    BaselineIdealized,
}

/// Transmission settings of a DeepSC run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSettings {
    pub channel: ChannelModel,
    /// `None` is a noiseless link.
    pub snr_db: Option<f64>,
    /// `None` is perfect CSI.
    pub nmse_db: Option<f64>,
}

impl LinkSettings {
    pub fn new(channel: ChannelModel, snr_db: f64, nmse_db: Option<f64>) -> Self {
        Self {
            channel,
            snr_db: snr_db.is_finite().then_some(snr_db),
            nmse_db,
        }
    }

    pub fn noiseless(channel: ChannelModel) -> Self {
        Self {
            channel,
            snr_db: None,
            nmse_db: None,
        }
    }

    fn snr(&self) -> f64 {
        self.snr_db.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms_ssim: Option<f64>,
    /// Whole stream (header and payload) over pixels.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_bits: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub header_bits: Option<usize>,
    /// Model estimate of the payload.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<SideBits>,
    /// Side cost of the whole bundle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cbr: Option<CbrReport>,
    /// Side cost of the rate map only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cbr_map_only: Option<CbrReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelStats>,
    pub failures: Vec<String>,
}

impl ImageRecord {
    fn new(id: &str, image: &ImagePlane, seed: u64) -> Self {
        Self {
            id: id.to_string(),
            height: image.height,
            width: image.width,
            seed,
            psnr: None,
            ms_ssim: None,
            bpp: None,
            payload_bits: None,
            header_bits: None,
            rate_bits: None,
            symbols: None,
            side: None,
            cbr: None,
            cbr_map_only: None,
            channel: None,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub failed: usize,
    pub mean_psnr: Option<f64>,
    pub mean_ms_ssim: Option<f64>,
    pub msssim_db: Option<f64>,
    pub mean_bpp: Option<f64>,
    pub mean_cbr: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Aggregate {
    fn of(records: &[ImageRecord]) -> Self {
        let ssim: Vec<f64> = records.iter().filter_map(|r| r.ms_ssim).collect();
        Self {
            images: records.len(),
            failed: records.iter().filter(|r| !r.passed()).count(),
            mean_psnr: mean(records.iter().filter_map(|r| r.psnr)),
            mean_ms_ssim: mean(ssim.iter().copied()),
            msssim_db: msssim_db(&ssim).ok(),
            mean_bpp: mean(records.iter().filter_map(|r| r.bpp)),
            mean_cbr: mean(records.iter().filter_map(|r| r.cbr.map(|c| c.total))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub mode: RunMode,
    pub config: SystemConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<LinkSettings>,
    pub images: Vec<ImageRecord>,
    pub aggregate: Aggregate,
}

impl RunReport {
    fn new(
        mode: RunMode,
        config: &SystemConfig,
        link: Option<LinkSettings>,
        mut images: Vec<ImageRecord>,
    ) -> Self {
        images.sort_by(|a, b| a.id.cmp(&b.id));
        let aggregate = Aggregate::of(&images);
        Self {
            version: REPORT_VERSION,
            mode,
            config: config.clone(),
            link,
            images,
            aggregate,
        }
    }

    pub fn passed(&self) -> bool {
        self.images.iter().all(ImageRecord::passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Mean rate (bpp, or total CBR for DeepSC and baseline) against mean PSNR.
    pub fn rd_point(&self) -> Option<RdPoint> {
        let rate = match self.mode {
            RunMode::Lic => self.aggregate.mean_bpp?,
            _ => self.aggregate.mean_cbr?,
        };
        Some(RdPoint {
            rate,
            quality: self.aggregate.mean_psnr?,
        })
    }
}

fn write_dump(dir: Option<&Path>, name: &str, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

fn run_images(
    images: &[(String, ImagePlane)],
    config: &SystemConfig,
    one: impl Fn(&mut ImageRecord, &ImagePlane) -> Result<()> + Sync,
) -> Vec<ImageRecord> {
    images
        .par_iter()
        .map(|(id, image)| {
            let mut record = ImageRecord::new(id, image, config.master_seed);
            if let Err(e) = one(&mut record, image) {
                record.failures.push(format!("error: {e}"));
            }
            record
        })
        .collect()
}

fn quality(record: &mut ImageRecord, original: &ImagePlane, decoded: &ImagePlane) -> Result<()> {
    record.psnr = Some(psnr(original, decoded)?);
    record.ms_ssim = Some(ms_ssim(original, decoded)?);
    Ok(())
}

fn lic_one(
    record: &mut ImageRecord,
    image: &ImagePlane,
    config: &SystemConfig,
    dump: Option<&Path>,
) -> Result<()> {
    let encoded = lic_encode(image, config)?;
    let decoded = lic_decode(&encoded.stream, config)?;
    let pixels = (image.height * image.width) as f64;
    let payload = encoded.payload_bits();
    let rate = encoded.coding.rate_bits;
    record.bpp = Some(encoded.total_bits() as f64 / pixels);
    record.payload_bits = Some(payload);
    record.header_bits = Some(8 * encoded.header_len);
    record.rate_bits = Some(rate);
    quality(record, image, &decoded.image)?;
    let slack = RATE_TOLERANCE.0 * rate + RATE_TOLERANCE.1;
    if (payload as f64 - rate).abs() > slack {
        record.failures.push(format!(
            "payload {payload} bits is off the model rate {rate:.1} by more than {slack:.1}"
        ));
    }
    if decoded.y_hat != encoded.coding.y_hat {
        record
            .failures
            .push("decoded latent differs from the encoder's".into());
    }
    if dump.is_some() {
        let (y, _) = analyze_image(image, config)?;
        write_dump(dump, &format!("{}.latent", record.id), &y.to_dump_bytes())?;
        write_dump(dump, &format!("{}.qlic", record.id), &encoded.stream)?;
    }
    Ok(())
}

/// Encodes and decodes every image, checking the payload against the model
/// rate and the decoded latent against the encoder's.
pub fn run_lic(
    images: &[(String, ImagePlane)],
    config: &SystemConfig,
    dump: Option<&Path>,
) -> Result<RunReport> {
    let config = config.clone().validated()?;
    let records = run_images(images, &config, |rec, img| lic_one(rec, img, &config, dump));
    Ok(RunReport::new(RunMode::Lic, &config, None, records))
}

fn deepsc_one(
    record: &mut ImageRecord,
    image: &ImagePlane,
    config: &SystemConfig,
    bank: &MappingBank,
    link: &LinkSettings,
    dump: Option<&Path>,
) -> Result<()> {
    let rate_set = &config.rate_set;
    let (y, hyper) = analyze_image(image, config)?;
    let (run, _) = quantize_schedule(&y, &hyper, &config.context)?;
    let raw_k = symbol_length_factors(&y, &run.field, config.eta)?;
    let rate_map = RateMap::from_raw(y.h_y, y.w_y, &raw_k, rate_set)?;
    let rates = rate_map.rates(rate_set)?;
    let mut units = Vec::with_capacity(rates.len());
    for (i, &k) in rates.iter().enumerate() {
        units.push(map_unit(y.unit(i / y.w_y, i % y.w_y), &hyper, k, bank)?);
    }
    let frame = pack_frame(&units, &rate_map, rate_set)?;
    let side = SideBundle {
        rate_map,
        hyper,
        scale: frame.scale,
    };
    let side_bytes = side.to_bytes()?;
    let side_bits = side.bits()?;

    let realization = realize(
        &link.channel,
        frame.len(),
        config.master_seed,
        &format!("channel/{}", record.id),
    )?;
    let received = transmit(&frame.symbols, &realization, link.snr())?;
    let h_hat = csi_estimate(&realization, link.nmse_db);
    let equalized = zf_equalize(&received, &h_hat)?;
    record.channel = Some(measure(&frame.symbols, &received, &realization, &h_hat));

    let side_rx = SideBundle::from_bytes(&side_bytes, config.sigma_min)?;
    let units_rx = unpack_frame(&equalized, side_rx.scale, &side_rx.rate_map, rate_set)?;
    let rates_rx = side_rx.rate_map.rates(rate_set)?;
    let mut y_hat = LatentGrid::zeros(y.h_y, y.w_y, y.c_y);
    for (i, (unit, &k)) in units_rx.iter().zip(&rates_rx).enumerate() {
        let values = unmap_unit(unit, &side_rx.hyper, k, bank)?;
        y_hat
            .unit_mut(i / y.w_y, i % y.w_y)
            .copy_from_slice(&values);
    }
    let decoded = synthesize_image(&y_hat, config, image.height, image.width)?;
    quality(record, image, &decoded)?;

    let (h, w, c_k) = (image.height, image.width, config.side_link_eff);
    let cbr = cbr_report(frame.len(), side_bits.bundle_bits, h, w, c_k)?;
    record.symbols = Some(frame.len());
    record.side = Some(side_bits);
    record.cbr = Some(cbr);
    record.cbr_map_only = Some(cbr_report(frame.len(), side_bits.map_bits, h, w, c_k)?);
    if side_rx != side {
        record
            .failures
            .push("side bundle did not survive serialization".into());
    }
    if cbr.total != cbr.payload + cbr.side {
        record.failures.push("CBR breakdown does not add up".into());
    }

    write_dump(dump, &format!("{}.latent", record.id), &y.to_dump_bytes())?;
    write_dump(dump, &format!("{}.side", record.id), &side_bytes)?;
    write_dump(dump, &format!("{}.sym", record.id), &frame.to_dump_bytes())?;
    write_dump(
        dump,
        &format!("{}.trace", record.id),
        &realization.trace_bytes(link.snr()),
    )?;
    Ok(())
}

/// Sends every image through the analog symbol path. Channel realizations
/// depend only on the seed and the image id, so runs that differ in SNR or
/// CSI quality are paired.
pub fn run_deepsc(
    images: &[(String, ImagePlane)],
    config: &SystemConfig,
    link: &LinkSettings,
    dump: Option<&Path>,
) -> Result<RunReport> {
    let config = config.clone().validated()?;
    link.channel.validate()?;
    if link.snr_db.is_some_and(|s| !s.is_finite()) {
        return Err(Error::Param(
            "SNR must be finite; use None for a noiseless link".into(),
        ));
    }
    let bank = MappingBank::generate(config.master_seed, config.channels_cy, &config.rate_set)?;
    let records = run_images(images, &config, |rec, img| {
        deepsc_one(rec, img, &config, &bank, link, dump)
    });
    Ok(RunReport::new(
        RunMode::Deepsc,
        &config,
        Some(link.clone()),
        records,
    ))
}

/// Channel uses of an ideal capacity-achieving code carrying `bits` over a
/// complex AWGN link.
pub fn capacity_cbr(bits: usize, height: usize, width: usize, snr_db: f64) -> Result<f64> {
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Param(format!(
            "SNR must be above -inf, got {snr_db}"
        )));
    }
    let capacity = (1.0 + 10f64.powf(snr_db / 10.0)).log2();
    Ok(bits as f64 / (3.0 * (height * width) as f64 * capacity))
}

/// LIC at the configured step, sent over an ideal Shannon-limit link.
/// Quality is the LIC quality; CBR is a lower bound no practical separate
/// scheme reaches.
pub fn run_baseline_capacity(
    images: &[(String, ImagePlane)],
    config: &SystemConfig,
    snr_db: f64,
) -> Result<RunReport> {
    capacity_cbr(0, 1, 1, snr_db)?;
    let mut report = run_lic(images, config, None)?;
    for rec in &mut report.images {
        if let Some(payload) = rec.payload_bits {
            let bits = payload + rec.header_bits.unwrap_or(0);
            let payload_cbr = capacity_cbr(bits, rec.height, rec.width, snr_db)?;
            rec.cbr = Some(CbrReport {
                payload: payload_cbr,
                side: 0.0,
                total: payload_cbr,
            });
        }
    }
    report.mode = RunMode::BaselineIdealized;
    report.link = Some(LinkSettings::new(ChannelModel::Awgn, snr_db, None));
    report.aggregate = Aggregate::of(&report.images);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Eta,
    Snr,
    Delta,
    Channel,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Eta => "eta",
            Self::Snr => "snr",
            Self::Delta => "delta",
            Self::Channel => "channel",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eta" => Ok(Self::Eta),
            "snr" => Ok(Self::Snr),
            "delta" => Ok(Self::Delta),
            "channel" => Ok(Self::Channel),
            _ => Err(Error::Param(format!("unknown sweep axis {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub version: u32,
    pub axis: SweepAxis,
    pub values: Vec<String>,
    pub points: Vec<RdPoint>,
    pub runs: Vec<RunReport>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.runs.iter().all(RunReport::passed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn parse_num(axis: SweepAxis, v: &str) -> Result<f64> {
    v.trim()
        .parse()
        .map_err(|_| Error::Param(format!("bad {axis} value {v:?}")))
}

/// One run per value. `delta` sweeps LIC; the other axes sweep DeepSC over
/// `link`, sharing the seed so runs are paired.
pub fn sweep(
    axis: SweepAxis,
    values: &[String],
    images: &[(String, ImagePlane)],
    config: &SystemConfig,
    link: &LinkSettings,
) -> Result<SweepReport> {
    if values.len() < 2 {
        return Err(Error::Param(format!(
            "a sweep needs at least 2 values, got {}",
            values.len()
        )));
    }
    let mut runs = Vec::with_capacity(values.len());
    for v in values {
        let mut config = config.clone();
        let mut link = link.clone();
        let report = match axis {
            SweepAxis::Delta => {
                config.quant_step = parse_num(axis, v)?;
                run_lic(images, &config, None)?
            }
            SweepAxis::Eta => {
                config.eta = parse_num(axis, v)?;
                run_deepsc(images, &config, &link, None)?
            }
            SweepAxis::Snr => {
                link.snr_db = match v.trim() {
                    "inf" => None,
                    s => Some(parse_num(axis, s)?),
                };
                run_deepsc(images, &config, &link, None)?
            }
            SweepAxis::Channel => {
                link.channel = v.parse()?;
                run_deepsc(images, &config, &link, None)?
            }
        };
        runs.push(report);
    }
    let points = runs.iter().filter_map(RunReport::rd_point).collect();
    Ok(SweepReport {
        version: REPORT_VERSION,
        axis,
        values: values.to_vec(),
        points,
        runs,
    })
}

/// BD of `b` against `a` from two sweeps' RD points.
pub fn report_bd(a: &SweepReport, b: &SweepReport) -> Result<f64> {
    bd_metric(&a.points, &b.points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;

    fn small_config() -> SystemConfig {
        SystemConfig::for_block_size(4)
    }

    fn small_images() -> Vec<(String, ImagePlane)> {
        generate_corpus()
            .into_iter()
            .filter(|(id, _)| id == "ar2_smooth" || id == "gradient")
            .map(|(id, img)| (id, img.crop(64, 48).unwrap()))
            .collect()
    }

    #[test]
    fn capacity_examples() {
        let c = capacity_cbr(3_459_432, 1000, 1000, 10.0).unwrap();
        assert!((c - 3_459_432.0 / (3e6 * 11f64.log2())).abs() < 1e-12);
        assert!((11f64.log2() - 3.459_431_618_637_3).abs() < 1e-12);
        assert_eq!(
            capacity_cbr(200, 10, 10, 10.0).unwrap(),
            2.0 * capacity_cbr(100, 10, 10, 10.0).unwrap()
        );
        assert!(
            capacity_cbr(1000, 10, 10, 600.0).unwrap()
                < 0.51 * capacity_cbr(1000, 10, 10, 300.0).unwrap()
        );
        assert_eq!(capacity_cbr(1000, 10, 10, f64::INFINITY).unwrap(), 0.0);
        assert!(capacity_cbr(1, 1, 1, f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn lic_report_accounting() {
        let report = run_lic(&small_images(), &small_config(), None).unwrap();
        assert!(report.passed(), "{:?}", report.images);
        assert_eq!(report.images[0].id, "ar2_smooth");
        for r in &report.images {
            let bits = r.payload_bits.unwrap() + r.header_bits.unwrap();
            assert_eq!(r.bpp.unwrap(), bits as f64 / (r.height * r.width) as f64);
        }
    }

    #[test]
    fn deepsc_full_rate_is_near_lossless() {
        let mut config = small_config();
        config.rate_set = vec![config.channels_cy];
        let link = LinkSettings::noiseless(ChannelModel::Awgn);
        let report = run_deepsc(&small_images(), &config, &link, None).unwrap();
        assert!(report.passed());
        for r in &report.images {
            assert!(r.psnr.unwrap() >= 55.0, "{}: {:?}", r.id, r.psnr);
            let cbr = r.cbr.unwrap();
            assert_eq!(cbr.total, cbr.payload + cbr.side);
        }
    }

    #[test]
    fn snr_orders_quality() {
        let link = |snr| LinkSettings::new(ChannelModel::Awgn, snr, None);
        let images = small_images();
        let hi = run_deepsc(&images, &small_config(), &link(10.0), None).unwrap();
        let lo = run_deepsc(&images, &small_config(), &link(0.0), None).unwrap();
        assert!(hi.aggregate.mean_psnr.unwrap() > lo.aggregate.mean_psnr.unwrap());
    }

    #[test]
    fn sweep_is_reproducible() {
        let values: Vec<String> = ["0.1", "0.4"].iter().map(|s| s.to_string()).collect();
        let link = LinkSettings::new(ChannelModel::Rayleigh, 5.0, Some(-20.0));
        let a = sweep(
            SweepAxis::Eta,
            &values,
            &small_images(),
            &small_config(),
            &link,
        )
        .unwrap();
        let b = sweep(
            SweepAxis::Eta,
            &values,
            &small_images(),
            &small_config(),
            &link,
        )
        .unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.points[1].rate > a.points[0].rate);
        assert!(sweep(
            SweepAxis::Eta,
            &values[..1],
            &small_images(),
            &small_config(),
            &link
        )
        .is_err());
    }

    #[test]
    fn per_image_errors_are_collected() {
        let mut images = small_images();
        images.push(("empty".into(), ImagePlane::filled(0, 0, 0)));
        let report = run_lic(&images, &small_config(), None).unwrap();
        assert_eq!(report.aggregate.images, 3);
        assert_eq!(report.aggregate.failed, 1);
        assert!(!report.passed());
    }
}
