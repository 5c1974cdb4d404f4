//! Wireless channel models, CSI error injection and zero-forcing
//! equalization.
//!
//! Every process advances per symbol. Fading, noise, state and CSI error
//! each draw from their own labelled stream, so runs that differ only in SNR
//! or CSI quality see the same fading and the same unit noise.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded_stream, SeededStream};

/// Deep-fade clamp on `|h_hat|` in zero forcing.
pub const ZF_GAIN_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelModel {
    Awgn,
    Rayleigh,
    GaussMarkov {
        rho: f64,
    },
    /// Two-state noise process: good to bad with probability `p`, bad to
    /// good with `q`; the bad state multiplies noise variance by `kappa` and
    /// erases symbols with probability `erasure`.
    GilbertElliott {
        p: f64,
        q: f64,
        erasure: f64,
        kappa: f64,
        #[serde(default)]
        rayleigh: bool,
    },
    /// LOS/NLOS segments: LOS enters NLOS with probability `p_block` per
    /// symbol and NLOS runs last `mean_nlos` symbols on average. LOS is
    /// Rician with factor `k_db`; NLOS is Rayleigh attenuated by `a_blk_db`
    /// with log-normal shadowing of `sigma_sh` dB drawn once per NLOS run.
    Blockage {
        p_block: f64,
        mean_nlos: f64,
        k_db: f64,
        a_blk_db: f64,
        sigma_sh: f64,
    },
}

impl ChannelModel {
    pub fn gauss_markov() -> Self {
        Self::GaussMarkov { rho: 0.97 }
    }

    pub fn gilbert_elliott() -> Self {
        Self::GilbertElliott {
            p: 0.05,
            q: 0.2,
            erasure: 0.01,
            kappa: 25.0,
            rayleigh: false,
        }
    }

    pub fn blockage() -> Self {
        Self::Blockage {
            p_block: 0.02,
            mean_nlos: 50.0,
            k_db: 10.0,
            a_blk_db: 20.0,
            sigma_sh: 2.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Awgn => "awgn",
            Self::Rayleigh => "rayleigh",
            Self::GaussMarkov { .. } => "gauss_markov",
            Self::GilbertElliott { .. } => "gilbert_elliott",
            Self::Blockage { .. } => "blockage",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Param(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        match *self {
            Self::Awgn | Self::Rayleigh => Ok(()),
            Self::GaussMarkov { rho } => {
                if (0.0..1.0).contains(&rho) {
                    Ok(())
                } else {
                    Err(Error::Param(format!("rho must lie in [0, 1), got {rho}")))
                }
            }
            Self::GilbertElliott {
                p,
                q,
                erasure,
                kappa,
                ..
            } => {
                prob("p", p)?;
                prob("q", q)?;
                prob("erasure", erasure)?;
                if p + q == 0.0 {
                    return Err(Error::Param("p and q cannot both be zero".into()));
                }
                if !(kappa >= 1.0) || !kappa.is_finite() {
                    return Err(Error::Param(format!("kappa must be >= 1, got {kappa}")));
                }
                Ok(())
            }
            Self::Blockage {
                p_block,
                mean_nlos,
                k_db,
                a_blk_db,
                sigma_sh,
            } => {
                prob("p_block", p_block)?;
                if !(mean_nlos >= 1.0) || !mean_nlos.is_finite() {
                    return Err(Error::Param(format!(
                        "mean NLOS run must be >= 1, got {mean_nlos}"
                    )));
                }
                if !k_db.is_finite() || !a_blk_db.is_finite() {
                    return Err(Error::Param("K and blockage loss must be finite".into()));
                }
                if !(sigma_sh >= 0.0) || !sigma_sh.is_finite() {
                    return Err(Error::Param(format!(
                        "shadowing sigma must be >= 0, got {sigma_sh}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Analytic `E|h|^2`.
    pub fn mean_gain(&self) -> f64 {
        match *self {
            Self::Blockage {
                p_block,
                mean_nlos,
                a_blk_db,
                sigma_sh,
                ..
            } => {
                let leave = 1.0 / mean_nlos;
                let nlos = if p_block + leave > 0.0 {
                    p_block / (p_block + leave)
                } else {
                    0.0
                };
                let s = sigma_sh * std::f64::consts::LN_10 / 10.0;
                let nlos_gain = 10f64.powf(-a_blk_db / 10.0) * (s * s / 2.0).exp();
                (1.0 - nlos) + nlos * nlos_gain
            }
            _ => 1.0,
        }
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `name` or `name:key=value,...`, starting from the default
/// parameters of each model.
impl FromStr for ChannelModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let mut model = match name {
            "awgn" => Self::Awgn,
            "rayleigh" => Self::Rayleigh,
            "gauss_markov" => Self::gauss_markov(),
            "gilbert_elliott" => Self::gilbert_elliott(),
            "blockage" => Self::blockage(),
            other => return Err(Error::Param(format!("unknown channel model {other:?}"))),
        };
        for arg in args.split(',').filter(|a| !a.is_empty()) {
            let (key, value) = arg
                .split_once('=')
                .ok_or_else(|| Error::Param(format!("expected key=value, got {arg:?}")))?;
            let bad = || Error::Param(format!("bad value for {key}: {value:?}"));
            let num = || value.parse::<f64>().map_err(|_| bad());
            match (&mut model, key) {
                (Self::GaussMarkov { rho }, "rho") => *rho = num()?,
                (Self::GilbertElliott { p, .. }, "p") => *p = num()?,
                (Self::GilbertElliott { q, .. }, "q") => *q = num()?,
                (Self::GilbertElliott { erasure, .. }, "erasure") => *erasure = num()?,
                (Self::GilbertElliott { kappa, .. }, "kappa") => *kappa = num()?,
                (Self::GilbertElliott { rayleigh, .. }, "rayleigh") => {
                    *rayleigh = value.parse().map_err(|_| bad())?
                }
                (Self::Blockage { p_block, .. }, "p_block") => *p_block = num()?,
                (Self::Blockage { mean_nlos, .. }, "mean_nlos") => *mean_nlos = num()?,
                (Self::Blockage { k_db, .. }, "k_db") => *k_db = num()?,
                (Self::Blockage { a_blk_db, .. }, "a_blk_db") => *a_blk_db = num()?,
                (Self::Blockage { sigma_sh, .. }, "sigma_sh") => *sigma_sh = num()?,
                _ => return Err(Error::Param(format!("{name} has no parameter {key}"))),
            }
        }
        model.validate()?;
        Ok(model)
    }
}

/// One draw of a channel over a symbol sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub h: Vec<Complex64>,
    /// Unit-variance noise, scaled at transmission.
    pub unit_noise: Vec<Complex64>,
    /// Noise variance multiplier per symbol.
    pub noise_gain: Vec<f64>,
    pub erased: Vec<bool>,
    /// 0 for good/LOS, 1 for bad/NLOS.
    pub state: Vec<u8>,
    pub mean_gain: f64,
    seed: u64,
    label: String,
}

impl ChannelRealization {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Noise variance at a given SNR for unit signal power.
    pub fn noise_variance(&self, snr_db: f64) -> f64 {
        if snr_db == f64::INFINITY {
            0.0
        } else {
            self.mean_gain / 10f64.powf(snr_db / 10.0)
        }
    }

    /// Noise actually added at `snr_db`.
    pub fn noise(&self, snr_db: f64) -> Vec<Complex64> {
        let var = self.noise_variance(snr_db);
        self.unit_noise
            .iter()
            .zip(&self.noise_gain)
            .map(|(n, g)| n * (var * g).sqrt())
            .collect()
    }

    /// 17-byte records: f32 `Re h, Im h, Re n, Im n`, then the erasure flag.
    pub fn trace_bytes(&self, snr_db: f64) -> Vec<u8> {
        let noise = self.noise(snr_db);
        let mut out = Vec::with_capacity(17 * self.len());
        for ((h, n), &e) in self.h.iter().zip(&noise).zip(&self.erased) {
            for v in [h.re, h.im, n.re, n.im] {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
            out.push(e as u8);
        }
        out
    }
}

fn stationary_bad(rng: &mut SeededStream, p: f64, q: f64) -> bool {
    rng.bernoulli(p / (p + q))
}

fn db_to_lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn realize(
    model: &ChannelModel,
    length: usize,
    master_seed: u64,
    label: &str,
) -> Result<ChannelRealization> {
    model.validate()?;
    let mut fading = seeded_stream(master_seed, &format!("{label}/fading"));
    let mut noise_rng = seeded_stream(master_seed, &format!("{label}/noise"));
    let mut state_rng = seeded_stream(master_seed, &format!("{label}/state"));
    let unit_noise: Vec<Complex64> = (0..length).map(|_| noise_rng.complex_normal()).collect();
    let mut h = Vec::with_capacity(length);
    let mut noise_gain = vec![1.0; length];
    let mut erased = vec![false; length];
    let mut state = vec![0u8; length];
    match *model {
        ChannelModel::Awgn => h.resize(length, Complex64::new(1.0, 0.0)),
        ChannelModel::Rayleigh => h.extend((0..length).map(|_| fading.complex_normal())),
        ChannelModel::GaussMarkov { rho } => {
            let alpha = (1.0 - rho * rho).sqrt();
            let mut prev = fading.complex_normal();
            for k in 0..length {
                if k > 0 {
                    prev = prev * rho + fading.complex_normal() * alpha;
                }
                h.push(prev);
            }
        }
        ChannelModel::GilbertElliott {
            p,
            q,
            erasure,
            kappa,
            rayleigh,
        } => {
            let mut bad = stationary_bad(&mut state_rng, p, q);
            for k in 0..length {
                if k > 0 {
                    bad = if bad {
                        !state_rng.bernoulli(q)
                    } else {
                        state_rng.bernoulli(p)
                    };
                }
                let erase = state_rng.bernoulli(erasure);
                if bad {
                    state[k] = 1;
                    noise_gain[k] = kappa;
                    erased[k] = erase;
                }
                h.push(if rayleigh {
                    fading.complex_normal()
                } else {
                    Complex64::new(1.0, 0.0)
                });
            }
        }
        ChannelModel::Blockage {
            p_block,
            mean_nlos,
            k_db,
            a_blk_db,
            sigma_sh,
        } => {
            let k = db_to_lin(k_db);
            let los_mean = (k / (k + 1.0)).sqrt();
            let los_scatter = (1.0 / (k + 1.0)).sqrt();
            let leave = 1.0 / mean_nlos;
            let loss = 10f64.powf(-a_blk_db / 20.0);
            let mut nlos = stationary_bad(&mut state_rng, p_block, leave);
            let mut shadow = 10f64.powf(sigma_sh * state_rng.normal() / 20.0);
            #[allow(clippy::needless_range_loop)]
            for i in 0..length {
                if i > 0 {
                    let was = nlos;
                    nlos = if nlos {
                        !state_rng.bernoulli(leave)
                    } else {
                        state_rng.bernoulli(p_block)
                    };
                    let x = state_rng.normal();
                    if nlos && !was {
                        shadow = 10f64.powf(sigma_sh * x / 20.0);
                    }
                }
                let w = fading.complex_normal();
                if nlos {
                    state[i] = 1;
                    h.push(w * loss * shadow);
                } else {
                    h.push(Complex64::new(los_mean, 0.0) + w * los_scatter);
                }
            }
        }
    }
    Ok(ChannelRealization {
        h,
        unit_noise,
        noise_gain,
        erased,
        state,
        mean_gain: model.mean_gain(),
        seed: master_seed,
        label: label.to_string(),
    })
}

/// `y = h s + n` with `n ~ CN(0, E|h|^2 / snr)` (times the state multiplier);
/// erased symbols come out as zero. `snr_db = inf` gives a noiseless link.
pub fn transmit(
    symbols: &[Complex64],
    realization: &ChannelRealization,
    snr_db: f64,
) -> Result<Vec<Complex64>> {
    if symbols.len() != realization.len() {
        return Err(Error::Length {
            expected: realization.len(),
            actual: symbols.len(),
        });
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::Param(format!(
            "SNR must be finite or +inf, got {snr_db}"
        )));
    }
    let noise = realization.noise(snr_db);
    Ok(symbols
        .iter()
        .zip(&realization.h)
        .zip(&noise)
        .zip(&realization.erased)
        .map(|(((s, h), n), &e)| {
            if e {
                Complex64::new(0.0, 0.0)
            } else {
                h * s + n
            }
        })
        .collect())
}

/// Channel estimate `h + e`, `e ~ CN(0, E|h|^2 10^(nmse/10))`; `None` means
/// perfect CSI.
pub fn csi_estimate(realization: &ChannelRealization, nmse_db: Option<f64>) -> Vec<Complex64> {
    let Some(nmse_db) = nmse_db else {
        return realization.h.clone();
    };
    let sigma_e = (realization.mean_gain * db_to_lin(nmse_db)).sqrt();
    let mut rng = seeded_stream(realization.seed, &format!("{}/csi", realization.label));
    realization
        .h
        .iter()
        .map(|h| h + rng.complex_normal() * sigma_e)
        .collect()
}

/// `s_hat = conj(h_hat) y / max(|h_hat|^2, g_min^2)`.
pub fn zf_equalize(received: &[Complex64], h_hat: &[Complex64]) -> Result<Vec<Complex64>> {
    if received.len() != h_hat.len() {
        return Err(Error::Length {
            expected: h_hat.len(),
            actual: received.len(),
        });
    }
    let floor = ZF_GAIN_FLOOR * ZF_GAIN_FLOOR;
    Ok(received
        .iter()
        .zip(h_hat)
        .map(|(y, h)| h.conj() * y / h.norm_sqr().max(floor))
        .collect())
}

/// Empirical link statistics of one transmission.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    /// Signal-to-noise ratio over non-erased symbols at base noise level; `None`
    /// when noiseless or empty.
    pub snr_db: Option<f64>,
    /// CSI error energy over channel energy; `None` for perfect CSI.
    pub nmse_db: Option<f64>,
    pub erasures: usize,
}

fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

pub fn measure(
    symbols: &[Complex64],
    received: &[Complex64],
    realization: &ChannelRealization,
    h_hat: &[Complex64],
) -> ChannelStats {
    let (mut sig, mut noise) = (0.0, 0.0);
    for i in 0..symbols.len() {
        if realization.erased[i] || realization.noise_gain[i] != 1.0 {
            continue;
        }
        let clean = realization.h[i] * symbols[i];
        sig += clean.norm_sqr();
        noise += (received[i] - clean).norm_sqr();
    }
    let (mut err, mut energy) = (0.0, 0.0);
    for (h, e) in realization.h.iter().zip(h_hat) {
        err += (e - h).norm_sqr();
        energy += h.norm_sqr();
    }
    ChannelStats {
        snr_db: (noise > 0.0 && sig > 0.0).then(|| to_db(sig / noise)),
        nmse_db: (err > 0.0 && energy > 0.0).then(|| to_db(err / energy)),
        erasures: realization.erased.iter().filter(|&&e| e).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn awgn_noise_variance() {
        let r = realize(&ChannelModel::Awgn, 4, 1, "t").unwrap();
        assert!((r.noise_variance(10.0) - 0.1).abs() < 1e-15);
        assert_eq!(r.noise_variance(f64::INFINITY), 0.0);
    }

    #[test]
    fn noiseless_is_exact() {
        let r = realize(&ChannelModel::Rayleigh, 64, 3, "t").unwrap();
        let s: Vec<Complex64> = (0..64).map(|i| Complex64::new(i as f64, -1.0)).collect();
        let y = transmit(&s, &r, f64::INFINITY).unwrap();
        for i in 0..64 {
            assert_eq!(y[i], r.h[i] * s[i]);
        }
        let eq = zf_equalize(&y, &r.h).unwrap();
        for i in 0..64 {
            if r.h[i].norm() > ZF_GAIN_FLOOR {
                assert!((eq[i] - s[i]).norm() <= 1e-6 * s[i].norm());
            }
        }
    }

    #[test]
    fn zf_clamps_dead_coefficients() {
        let y = [Complex64::new(1.0, 1.0)];
        let out = zf_equalize(&y, &[Complex64::new(0.0, 0.0)]).unwrap();
        assert!(out[0].re.is_finite() && out[0].im.is_finite());
        assert!(zf_equalize(&y, &[]).is_err());
    }

    #[test]
    fn perfect_csi_is_bit_exact() {
        let r = realize(&ChannelModel::gauss_markov(), 100, 8, "t").unwrap();
        assert_eq!(csi_estimate(&r, None), r.h);
    }

    #[test]
    fn realizations_are_reproducible() {
        for m in [
            ChannelModel::Rayleigh,
            ChannelModel::gilbert_elliott(),
            ChannelModel::blockage(),
        ] {
            let a = realize(&m, 500, 42, "img").unwrap();
            assert_eq!(a, realize(&m, 500, 42, "img").unwrap());
            assert_eq!(
                a.trace_bytes(5.0),
                realize(&m, 500, 42, "img").unwrap().trace_bytes(5.0)
            );
            assert_ne!(
                a.unit_noise,
                realize(&m, 500, 43, "img").unwrap().unit_noise
            );
        }
    }

    #[test]
    fn erasures_only_in_bad_state() {
        let m = ChannelModel::GilbertElliott {
            p: 0.1,
            q: 0.1,
            erasure: 0.5,
            kappa: 4.0,
            rayleigh: false,
        };
        let r = realize(&m, 10_000, 1, "t").unwrap();
        assert!(r.erased.iter().zip(&r.state).all(|(&e, &s)| !e || s == 1));
        assert!(r.erased.iter().any(|&e| e));
        let y = transmit(&vec![Complex64::new(1.0, 0.0); r.len()], &r, 10.0).unwrap();
        assert!(y
            .iter()
            .zip(&r.erased)
            .all(|(v, &e)| !e || *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn parse_models() {
        assert_eq!("awgn".parse::<ChannelModel>().unwrap(), ChannelModel::Awgn);
        assert_eq!(
            "gauss_markov:rho=0.5".parse::<ChannelModel>().unwrap(),
            ChannelModel::GaussMarkov { rho: 0.5 }
        );
        assert!("gauss_markov:rho=1.0".parse::<ChannelModel>().is_err());
        assert!("rayleigh:rho=0.5".parse::<ChannelModel>().is_err());
        assert!("fog".parse::<ChannelModel>().is_err());
        assert!(ChannelModel::GilbertElliott {
            p: 0.1,
            q: 0.1,
            erasure: 0.0,
            kappa: 0.5,
            rayleigh: false
        }
        .validate()
        .is_err());
    }

    #[test]
    fn length_mismatch() {
        let r = realize(&ChannelModel::Awgn, 3, 1, "t").unwrap();
        assert!(transmit(&[Complex64::new(1.0, 0.0)], &r, 0.0).is_err());
    }
}
