//! System configuration, latent dimension derivation and config validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BLOCK_SIZE: usize = 16;
pub const DEFAULT_SIGMA_MIN: f64 = 0.11;
pub const DEFAULT_SIDE_LINK_EFF: f64 = 2.0;
pub const DEFAULT_QUANT_STEP: f64 = 8.0;
pub const DEFAULT_ETA: f64 = 0.1;

/// Parameters of the fixed-form context refinement applied at each coding step.
///
/// Step `s` predicts `mu = mu_c + mean_weight[s] * sigma_c * mean(standardized
/// reference residuals)` and `sigma = sigma_c * sigma_mult[s]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextParams {
    pub mean_weight: [f64; 4],
    pub sigma_mult: [f64; 4],
}

impl Default for ContextParams {
    fn default() -> Self {
        Self {
            mean_weight: [0.0, 0.5, 0.5, 0.6],
            sigma_mult: [1.0, 0.9, 0.9, 0.8],
        }
    }
}

impl ContextParams {
    /// No context: every step uses the hyper statistics unchanged.
    pub fn hyper_only() -> Self {
        Self {
            mean_weight: [0.0; 4],
            sigma_mult: [1.0; 4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// Pixels per latent unit edge.
    pub block_size: usize,
    /// Latent channel count; `3 * block_size^2` for image coding.
    pub channels_cy: usize,
    /// Rate scaling applied to per-unit entropy when sizing symbol blocks.
    pub eta: f64,
    /// Allowed symbol length factors, strictly increasing, within `[0, channels_cy]`.
    pub rate_set: Vec<usize>,
    pub sigma_min: f64,
    /// Side link spectral efficiency in bits per channel use.
    pub side_link_eff: f64,
    pub quant_step: f64,
    pub master_seed: u64,
    #[serde(default)]
    pub context: ContextParams,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let block_size = DEFAULT_BLOCK_SIZE;
        let channels_cy = 3 * block_size * block_size;
        Self {
            block_size,
            channels_cy,
            eta: DEFAULT_ETA,
            rate_set: default_rate_set(channels_cy),
            sigma_min: DEFAULT_SIGMA_MIN,
            side_link_eff: DEFAULT_SIDE_LINK_EFF,
            quant_step: DEFAULT_QUANT_STEP,
            master_seed: 0,
            context: ContextParams::default(),
        }
    }
}

/// Roughly geometric rate ladder ending at `channels_cy`.
pub fn default_rate_set(channels_cy: usize) -> Vec<usize> {
    const FRACTIONS: [(usize, usize); 12] = [
        (1, 96),
        (1, 48),
        (1, 24),
        (1, 16),
        (1, 12),
        (1, 8),
        (1, 6),
        (1, 4),
        (1, 3),
        (1, 2),
        (2, 3),
        (1, 1),
    ];
    let mut set = vec![0];
    for (num, den) in FRACTIONS {
        let k = channels_cy * num / den;
        if k > *set.last().unwrap() {
            set.push(k);
        }
    }
    set
}

impl SystemConfig {
    /// Default configuration for a given block size, with `C_y = 3 b^2`.
    pub fn for_block_size(block_size: usize) -> Self {
        let channels_cy = 3 * block_size * block_size;
        Self {
            block_size,
            channels_cy,
            rate_set: default_rate_set(channels_cy),
            ..Self::default()
        }
    }

    pub fn validated(self) -> Result<Self> {
        validate_config(&self).map_err(Error::Config)?;
        Ok(self)
    }

    /// Channels per quadtree group.
    pub fn group_channels(&self) -> usize {
        self.channels_cy / 4
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Checks every invariant and reports all violations at once.
pub fn validate_config(config: &SystemConfig) -> std::result::Result<(), Vec<String>> {
    let mut issues = Vec::new();
    if config.block_size == 0 || config.block_size > 255 {
        issues.push(format!(
            "block_size must be in [1, 255], got {}",
            config.block_size
        ));
    }
    if config.channels_cy == 0 || !config.channels_cy.is_multiple_of(4) {
        issues.push(format!(
            "C_y not divisible by 4 (C_y = {})",
            config.channels_cy
        ));
    }
    if config.channels_cy > u16::MAX as usize {
        issues.push(format!("C_y exceeds 65535 (C_y = {})", config.channels_cy));
    }
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        issues.push(format!("eta must be positive, got {}", config.eta));
    }
    if config.rate_set.is_empty() {
        issues.push("rate_set is empty".to_string());
    }
    if config.rate_set.windows(2).any(|w| w[0] >= w[1]) {
        issues.push("rate_set not increasing".to_string());
    }
    if let Some(&k) = config.rate_set.iter().find(|&&k| k > config.channels_cy) {
        issues.push(format!(
            "rate_set value {k} exceeds C_y = {}",
            config.channels_cy
        ));
    }
    if !(config.sigma_min > 0.0 && config.sigma_min < crate::entropy::SIGMA_MAX) {
        issues.push(format!(
            "sigma_min must be in (0, {}), got {}",
            crate::entropy::SIGMA_MAX,
            config.sigma_min
        ));
    }
    if !(config.side_link_eff > 0.0 && config.side_link_eff.is_finite()) {
        issues.push(format!(
            "side_link_eff must be positive, got {}",
            config.side_link_eff
        ));
    }
    if !(config.quant_step > 0.0 && config.quant_step.is_finite()) {
        issues.push(format!(
            "quant_step must be positive, got {}",
            config.quant_step
        ));
    }
    let ctx = &config.context;
    if ctx.mean_weight[0] != 0.0 {
        issues.push("context mean_weight[0] must be 0 (step 0 has no context)".to_string());
    }
    if ctx.mean_weight.iter().any(|w| !w.is_finite()) {
        issues.push("context mean weights must be finite".to_string());
    }
    if ctx.sigma_mult.iter().any(|&m| !(m > 0.0 && m <= 1.0)) {
        issues.push("context sigma multipliers must lie in (0, 1]".to_string());
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(issues)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentDims {
    pub padded_h: usize,
    pub padded_w: usize,
    pub h_y: usize,
    pub w_y: usize,
}

/// Pads to the next multiple of `4 * block_size` so every 2x2 latent cell is whole.
pub fn derive_latent_dims(height: usize, width: usize, config: &SystemConfig) -> LatentDims {
    let align = 4 * config.block_size;
    let padded_h = height.max(1).div_ceil(align) * align;
    let padded_w = width.max(1).div_ceil(align) * align;
    LatentDims {
        padded_h,
        padded_w,
        h_y: padded_h / config.block_size,
        w_y: padded_w / config.block_size,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn latent_dims_examples() {
        let cfg = SystemConfig::default();
        let d = derive_latent_dims(512, 768, &cfg);
        assert_eq!((d.padded_h, d.padded_w, d.h_y, d.w_y), (512, 768, 32, 48));
        let d = derive_latent_dims(1, 1, &cfg);
        assert_eq!((d.padded_h, d.padded_w, d.h_y, d.w_y), (64, 64, 4, 4));
        let d = derive_latent_dims(2048, 1890, &cfg);
        assert_eq!(
            (d.padded_h, d.padded_w, d.h_y, d.w_y),
            (2048, 1920, 128, 120)
        );
    }

    #[test]
    fn latent_dims_properties() {
        for b in [1, 2, 4, 8, 16] {
            let cfg = SystemConfig::for_block_size(b);
            for h in (1..300).step_by(7) {
                let d = derive_latent_dims(h, h + 3, &cfg);
                assert!(d.padded_h >= h && d.padded_w >= h + 3);
                assert_eq!(d.padded_h % (4 * b), 0);
                assert_eq!(d.padded_w % (4 * b), 0);
                assert_eq!(d.h_y * b, d.padded_h);
                assert_eq!(d.h_y % 2, 0);
                assert_eq!(d.w_y % 2, 0);
            }
        }
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = SystemConfig::default();
        assert_eq!(cfg.channels_cy, 768);
        assert!(validate_config(&cfg).is_ok());
        assert_eq!(*cfg.rate_set.last().unwrap(), 768);
    }

    #[test]
    fn reports_every_issue() {
        let cfg = SystemConfig {
            channels_cy: 10,
            ..SystemConfig::default()
        };
        let issues = validate_config(&cfg).unwrap_err();
        assert!(issues.iter().any(|m| m.contains("C_y not divisible by 4")));

        let cfg = SystemConfig {
            rate_set: vec![4, 2],
            ..SystemConfig::default()
        };
        let issues = validate_config(&cfg).unwrap_err();
        assert!(issues.iter().any(|m| m == "rate_set not increasing"));

        let cfg = SystemConfig {
            channels_cy: 10,
            rate_set: vec![4, 2],
            eta: -1.0,
            sigma_min: 0.0,
            quant_step: 0.0,
            ..SystemConfig::default()
        };
        assert_eq!(validate_config(&cfg).unwrap_err().len(), 5);
    }

    #[test]
    fn json_roundtrip_rejects_unknown_keys() {
        let cfg = SystemConfig::default();
        let back = SystemConfig::from_json_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut value: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        value["bogus"] = serde_json::json!(1);
        assert!(SystemConfig::from_json_str(&value.to_string()).is_err());
    }
}
