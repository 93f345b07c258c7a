//! Gated single-photon counting and classical photodiode readout.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gated SPCM parameters. Defaults describe the InGaAs module of the setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpcmConfig {
    pub efficiency: f64,
    pub gate_rate_hz: f64,
    pub gate_width_ns: f64,
    /// Dark-count probability per gate.
    pub dark_prob: f64,
    /// Residual background (Raman, crosstalk) probability per gate.
    pub background_prob: f64,
}

impl Default for SpcmConfig {
    fn default() -> Self {
        Self {
            efficiency: 0.15,
            gate_rate_hz: 1e5,
            gate_width_ns: 2.5,
            dark_prob: 3.2e-5,
            background_prob: 0.0,
        }
    }
}

impl SpcmConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(format!("{prefix}.{name}"), format!("must be in [0, 1], got {v}")))
            }
        };
        unit("efficiency", self.efficiency)?;
        unit("dark_prob", self.dark_prob)?;
        unit("background_prob", self.background_prob)?;
        if !(self.gate_rate_hz > 0.0 && self.gate_rate_hz.is_finite()) {
            return Err(Error::config(format!("{prefix}.gate_rate_hz"), "must be > 0"));
        }
        if !(self.gate_width_ns > 0.0) {
            return Err(Error::config(format!("{prefix}.gate_width_ns"), "must be > 0"));
        }
        if self.gate_width_ns * 1e-9 * self.gate_rate_hz > 1.0 {
            return Err(Error::config(
                format!("{prefix}.gate_width_ns"),
                "gates overlap at this repetition rate",
            ));
        }
        Ok(())
    }

    /// Mean dark counts in a bin of `bin_s` seconds.
    ///
    /// Rounded to 1e-9 counts so that decimal rates come out exact
    /// (1e5 Hz × 3.2e-5 is otherwise one ulp below 3.2).
    pub fn expected_dark_counts(&self, bin_s: f64) -> f64 {
        (self.gate_rate_hz * bin_s * self.dark_prob * 1e9).round() / 1e9
    }
}

/// Detected counts in uniform time bins.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSeries {
    pub bin_s: f64,
    pub raw: Vec<u64>,
    pub net: Vec<f64>,
}

impl CountSeries {
    pub fn from_raw(raw: Vec<u64>, cfg: &SpcmConfig, bin_s: f64) -> Result<Self> {
        let net = raw
            .iter()
            .map(|&r| net_counts(r, cfg, bin_s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bin_s, raw, net })
    }

    pub fn len(&self) -> usize {
        self.net.len()
    }

    pub fn is_empty(&self) -> bool {
        self.net.is_empty()
    }

    /// Bin centre times, seconds.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |i| (i as f64 + 0.5) * self.bin_s)
    }
}

/// Click probability in one gate for a Poissonian input of `mu_out` photons.
pub fn gate_detection_prob(mu_out: f64, cfg: &SpcmConfig) -> Result<f64> {
    if !(mu_out >= 0.0) {
        return Err(Error::invalid(format!("mean photon number must be >= 0, got {mu_out}")));
    }
    Ok(detection_prob_unchecked(mu_out, cfg))
}

#[inline]
pub(crate) fn detection_prob_unchecked(mu_out: f64, cfg: &SpcmConfig) -> f64 {
    let p = -(-mu_out * cfg.efficiency).exp_m1() + cfg.dark_prob + cfg.background_prob;
    p.clamp(0.0, 1.0)
}

/// Binomial number of clicks in `n_gates` independent gates.
pub fn sample_counts<R: Rng + ?Sized>(p: f64, n_gates: u64, rng: &mut R) -> Result<u64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("click probability must be in [0, 1], got {p}")));
    }
    let dist = Binomial::new(n_gates, p).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.sample(rng))
}

/// Raw counts minus the mean dark counts of the bin. May be negative.
pub fn net_counts(raw: u64, cfg: &SpcmConfig, bin_s: f64) -> Result<f64> {
    if !(bin_s > 0.0) {
        return Err(Error::invalid(format!("bin duration must be > 0, got {bin_s}")));
    }
    Ok(raw as f64 - cfg.expected_dark_counts(bin_s))
}

/// Photodiode reading with additive Gaussian noise, floored at zero.
pub fn pin_intensity<R: Rng + ?Sized>(power: f64, noise_sigma: f64, rng: &mut R) -> Result<f64> {
    if !(power >= 0.0) {
        return Err(Error::invalid(format!("optical power must be >= 0, got {power}")));
    }
    if noise_sigma == 0.0 {
        return Ok(power);
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((power + noise.sample(rng)).max(0.0))
}
