//! Scenario configuration: TOML in, validated [`ScenarioConfig`] out.
//!
//! Every key has a default, so an empty file is a valid configuration. Unknown
//! keys are rejected. The run manifest written next to the outputs is this
//! same structure serialised back to TOML, so it can be fed straight back in.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelPlan;
use crate::detection::SpcmConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioId {
    /// Polarisation control and phase lock both active.
    PolOn,
    /// Polarisation controllers frozen after warm-up; phase lock active.
    PolOff,
    /// Phase lock disabled; polarisation control active.
    PhaseOff,
    /// Control flags taken from the configuration file.
    Custom,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 4] = [
        ScenarioId::PolOn,
        ScenarioId::PolOff,
        ScenarioId::PhaseOff,
        ScenarioId::Custom,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::PolOn => "pol_on",
            ScenarioId::PolOff => "pol_off",
            ScenarioId::PhaseOff => "phase_off",
            ScenarioId::Custom => "custom",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                Error::config(
                    "scenario",
                    format!("unknown scenario `{s}` (expected pol_on, pol_off, phase_off or custom)"),
                )
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    /// Mean photon number per gate of the attenuated laser at the interferometer input.
    pub mean_photons: f64,
    /// Linear polarisation angle of the quantum channel, degrees.
    pub q_angle_deg: f64,
    /// Phase-reference power at the input, arbitrary units.
    pub ph_power: f64,
    pub ph_angle_deg: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            mean_photons: 0.5,
            q_angle_deg: 30.0,
            ph_power: 1.0,
            ph_angle_deg: 60.0,
        }
    }
}

/// One interferometer arm. A partial `[arm1]` or `[arm2]` table is merged
/// over that arm's own defaults, and `losses_db` entries are merged by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub length_km: f64,
    /// Polarisation drift, rad/√s.
    pub sigma_pol: f64,
    /// Relative birefringence-angle change per nm of detuning.
    pub kappa_per_nm: f64,
    /// Phase random-walk diffusion, rad²/s.
    pub phase_diffusion: f64,
    pub fast_amplitude_rad: f64,
    pub fast_freq_hz: f64,
    pub fast_offset_rad: f64,
    /// Per-element insertion losses, dB.
    pub losses_db: BTreeMap<String, f64>,
}

impl ArmConfig {
    fn with(fast_freq_hz: f64, fast_offset_rad: f64, losses: &[(&str, f64)]) -> Self {
        Self {
            length_km: 8.0,
            sigma_pol: 0.02,
            kappa_per_nm: 0.01,
            phase_diffusion: 3.0,
            fast_amplitude_rad: 25.0,
            fast_freq_hz,
            fast_offset_rad,
            losses_db: losses.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    /// Arm with the free-space delay line.
    pub fn default_arm1() -> Self {
        Self::with(
            41.0,
            0.0,
            &[
                ("fibre", 1.6),
                ("pol_controller", 0.5),
                ("demux_dwdm", 1.6),
                ("remux_dwdm", 1.6),
                ("delay_line", 4.2),
            ],
        )
    }

    /// Arm with the fibre stretcher and the unlocked segment.
    pub fn default_arm2() -> Self {
        Self::with(
            31.0,
            1.3,
            &[
                ("fibre", 1.6),
                ("pol_controller", 0.5),
                ("demux_dwdm", 1.6),
                ("remux_dwdm", 1.6),
                ("stretcher", 0.8),
            ],
        )
    }

    pub fn total_loss_db(&self) -> f64 {
        self.losses_db.values().sum()
    }

    fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.length_km > 0.0 && self.length_km.is_finite()) {
            return Err(Error::config(format!("{prefix}.length_km"), "must be > 0"));
        }
        non_negative(&format!("{prefix}.sigma_pol"), self.sigma_pol)?;
        non_negative(&format!("{prefix}.phase_diffusion"), self.phase_diffusion)?;
        non_negative(&format!("{prefix}.fast_freq_hz"), self.fast_freq_hz)?;
        finite(&format!("{prefix}.kappa_per_nm"), self.kappa_per_nm)?;
        finite(&format!("{prefix}.fast_amplitude_rad"), self.fast_amplitude_rad)?;
        finite(&format!("{prefix}.fast_offset_rad"), self.fast_offset_rad)?;
        for (name, db) in &self.losses_db {
            non_negative(&format!("{prefix}.losses_db.{name}"), *db)?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmPatch {
    length_km: Option<f64>,
    sigma_pol: Option<f64>,
    kappa_per_nm: Option<f64>,
    phase_diffusion: Option<f64>,
    fast_amplitude_rad: Option<f64>,
    fast_freq_hz: Option<f64>,
    fast_offset_rad: Option<f64>,
    losses_db: Option<BTreeMap<String, f64>>,
}

impl ArmPatch {
    fn apply(self, mut base: ArmConfig) -> ArmConfig {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut base.length_km, self.length_km);
        set(&mut base.sigma_pol, self.sigma_pol);
        set(&mut base.kappa_per_nm, self.kappa_per_nm);
        set(&mut base.phase_diffusion, self.phase_diffusion);
        set(&mut base.fast_amplitude_rad, self.fast_amplitude_rad);
        set(&mut base.fast_freq_hz, self.fast_freq_hz);
        set(&mut base.fast_offset_rad, self.fast_offset_rad);
        if let Some(losses) = self.losses_db {
            base.losses_db.extend(losses);
        }
        base
    }
}

fn arm1_patch<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ArmConfig, D::Error> {
    Ok(ArmPatch::deserialize(d)?.apply(ArmConfig::default_arm1()))
}

fn arm2_patch<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<ArmConfig, D::Error> {
    Ok(ArmPatch::deserialize(d)?.apply(ArmConfig::default_arm2()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnlockedConfig {
    /// Deterministic residual-phase ramp, rad/s.
    pub ramp_rate: f64,
    /// Residual-phase diffusion, rad²/s.
    pub diffusion: f64,
}

impl Default for UnlockedConfig {
    fn default() -> Self {
        Self {
            ramp_rate: 2.0 * std::f64::consts::PI / 300.0,
            diffusion: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferometerConfig {
    /// Static visibility ceiling from the residual path mismatch.
    pub v_path: f64,
    /// Losses after the output coupler (output DWDM, band-pass filter), dB.
    pub output_loss_db: f64,
}

impl Default for InterferometerConfig {
    fn default() -> Self {
        Self {
            v_path: 0.995,
            output_loss_db: 2.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StretcherConfig {
    /// rad per command unit.
    pub gain: f64,
    /// Total range, rad.
    pub stroke: f64,
    /// rad/s.
    pub slew: f64,
}

impl Default for StretcherConfig {
    fn default() -> Self {
        Self {
            gain: 2.5,
            stroke: 5000.0,
            slew: 1e5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhotodiodeConfig {
    /// Additive noise, in units of the phase-reference input power.
    pub noise_sigma: f64,
}

impl Default for PhotodiodeConfig {
    fn default() -> Self {
        Self { noise_sigma: 5e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolControlConfig {
    /// Only read for the `custom` scenario.
    pub enabled: bool,
    pub interval_s: f64,
    pub dither_rad: f64,
    pub step_gain: f64,
    /// Linear reference states injected at λP1 and λP2, degrees.
    pub references_deg: [f64; 2],
    /// Linear analysers at the arm outputs, degrees.
    pub analyzers_deg: [f64; 2],
    /// Additive noise on each feedback power reading.
    pub sensor_noise: f64,
}

impl Default for PolControlConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval_s: 0.01,
            dither_rad: 0.05,
            step_gain: 1.0,
            references_deg: [0.0, 45.0],
            analyzers_deg: [0.0, 45.0],
            sensor_noise: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseLockConfig {
    /// Only read for the `custom` scenario.
    pub enabled: bool,
    pub kp: f64,
    /// 1/s.
    pub ki: f64,
    /// Stretcher travel of the calibration sweep, rad.
    pub calibration_travel_rad: f64,
    pub calibration_time_s: f64,
}

impl Default for PhaseLockConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            kp: 0.8,
            ki: 4000.0,
            calibration_travel_rad: 4.0 * std::f64::consts::PI,
            calibration_time_s: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Sliding envelope window, s.
    pub window_s: f64,
    /// Moving-average width applied before the envelope, s (one bin disables it).
    pub smooth_s: f64,
    pub hist_bin: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_s: 600.0,
            smooth_s: 10.0,
            hist_bin: 0.005,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioId,
    pub seed: u64,
    pub duration_s: f64,
    pub dt_fast_s: f64,
    pub bin_s: f64,
    /// Settling time before recording; polarisation control runs throughout.
    pub warmup_s: f64,
    /// Spacing of the recorded photodiode trace, s.
    pub pd_sample_s: f64,
    /// Draw one Bernoulli click per fast step instead of one binomial per bin.
    /// Only valid when `dt_fast_s` equals the gate period.
    pub per_gate_sampling: bool,
    pub out_dir: PathBuf,
    pub channels: ChannelPlan,
    pub source: SourceConfig,
    #[serde(deserialize_with = "arm1_patch")]
    pub arm1: ArmConfig,
    #[serde(deserialize_with = "arm2_patch")]
    pub arm2: ArmConfig,
    pub unlocked: UnlockedConfig,
    pub interferometer: InterferometerConfig,
    pub stretcher: StretcherConfig,
    pub detector: SpcmConfig,
    pub photodiode: PhotodiodeConfig,
    pub pol_control: PolControlConfig,
    pub phase_lock: PhaseLockConfig,
    pub analysis: AnalysisConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioId::PolOn,
            seed: 1,
            duration_s: 5100.0,
            dt_fast_s: 1e-4,
            bin_s: 1.0,
            warmup_s: 60.0,
            pd_sample_s: 0.1,
            per_gate_sampling: false,
            out_dir: PathBuf::from("out"),
            channels: ChannelPlan::default(),
            source: SourceConfig::default(),
            arm1: ArmConfig::default_arm1(),
            arm2: ArmConfig::default_arm2(),
            unlocked: UnlockedConfig::default(),
            interferometer: InterferometerConfig::default(),
            stretcher: StretcherConfig::default(),
            detector: SpcmConfig::default(),
            photodiode: PhotodiodeConfig::default(),
            pol_control: PolControlConfig::default(),
            phase_lock: PhaseLockConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be >= 0, got {v}")))
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be > 0, got {v}")))
    }
}

/// True when `a` is an integer multiple of `b` within 1e-9 relative.
fn divides(a: f64, b: f64) -> bool {
    let n = (a / b).round();
    n >= 1.0 && (a - n * b).abs() <= 1e-9 * a.abs().max(1.0)
}

impl ScenarioConfig {
    /// Configuration with a given scenario preset and defaults everywhere else.
    pub fn for_scenario(scenario: ScenarioId) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    /// Effective (pol control, phase lock) flags after applying the preset.
    pub fn control_flags(&self) -> (bool, bool) {
        match self.scenario {
            ScenarioId::PolOn | ScenarioId::PolOff => (true, true),
            ScenarioId::PhaseOff => (true, false),
            ScenarioId::Custom => (self.pol_control.enabled, self.phase_lock.enabled),
        }
    }

    /// Whether the polarisation controllers keep running after warm-up.
    pub fn pol_control_after_warmup(&self) -> bool {
        self.scenario != ScenarioId::PolOff && self.control_flags().0
    }

    /// Number of fast steps per bin, per polarisation update and per PD sample.
    pub fn steps_per_bin(&self) -> usize {
        (self.bin_s / self.dt_fast_s).round() as usize
    }

    pub fn steps_per_pol_update(&self) -> usize {
        ((self.pol_control.interval_s / self.dt_fast_s).round() as usize).max(1)
    }

    pub fn steps_per_pd_sample(&self) -> usize {
        ((self.pd_sample_s / self.dt_fast_s).round() as usize).max(1)
    }

    pub fn n_bins(&self) -> usize {
        (self.duration_s / self.bin_s).round() as usize
    }

    /// Rewrites the control flags so they reflect the preset; the manifest
    /// then records what actually ran.
    pub fn resolve_flags(&mut self) {
        let (pol, lock) = self.control_flags();
        self.pol_control.enabled = pol;
        self.phase_lock.enabled = lock;
    }

    pub fn validate(&self) -> Result<()> {
        positive("duration_s", self.duration_s)?;
        positive("dt_fast_s", self.dt_fast_s)?;
        positive("bin_s", self.bin_s)?;
        non_negative("warmup_s", self.warmup_s)?;
        positive("pd_sample_s", self.pd_sample_s)?;
        if self.dt_fast_s > self.bin_s {
            return Err(Error::config("dt_fast_s", "must not exceed bin_s"));
        }
        if !divides(self.bin_s, self.dt_fast_s) {
            return Err(Error::config("bin_s", "must be a whole number of dt_fast_s steps"));
        }
        if !divides(self.duration_s, self.bin_s) {
            return Err(Error::config("duration_s", "must be a whole number of bins"));
        }
        if self.warmup_s > 0.0 && !divides(self.warmup_s, self.dt_fast_s) {
            return Err(Error::config("warmup_s", "must be a whole number of dt_fast_s steps"));
        }
        if self.pd_sample_s < self.dt_fast_s || !divides(self.bin_s, self.pd_sample_s) {
            return Err(Error::config(
                "pd_sample_s",
                "must be at least dt_fast_s and divide bin_s",
            ));
        }
        if self.per_gate_sampling {
            let gate_period = 1.0 / self.detector.gate_rate_hz;
            if (self.dt_fast_s - gate_period).abs() > 1e-9 * gate_period {
                return Err(Error::config(
                    "per_gate_sampling",
                    format!("requires dt_fast_s equal to the gate period ({gate_period} s)"),
                ));
            }
        }
        if !divides(self.bin_s * self.detector.gate_rate_hz, 1.0) {
            return Err(Error::config("bin_s", "must hold a whole number of detector gates"));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::config("out_dir", "must not be empty"));
        }

        self.channels.validate()?;

        non_negative("source.mean_photons", self.source.mean_photons)?;
        non_negative("source.ph_power", self.source.ph_power)?;
        finite("source.q_angle_deg", self.source.q_angle_deg)?;
        finite("source.ph_angle_deg", self.source.ph_angle_deg)?;

        self.arm1.validate("arm1")?;
        self.arm2.validate("arm2")?;

        non_negative("unlocked.diffusion", self.unlocked.diffusion)?;
        finite("unlocked.ramp_rate", self.unlocked.ramp_rate)?;

        let v = self.interferometer.v_path;
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::config("interferometer.v_path", format!("must be in (0, 1], got {v}")));
        }
        non_negative("interferometer.output_loss_db", self.interferometer.output_loss_db)?;

        if !(self.stretcher.gain.is_finite() && self.stretcher.gain != 0.0) {
            return Err(Error::config("stretcher.gain", "must be finite and non-zero"));
        }
        positive("stretcher.stroke", self.stretcher.stroke)?;
        positive("stretcher.slew", self.stretcher.slew)?;

        self.detector.validate("detector")?;
        non_negative("photodiode.noise_sigma", self.photodiode.noise_sigma)?;

        let pc = &self.pol_control;
        positive("pol_control.interval_s", pc.interval_s)?;
        if pc.interval_s < self.dt_fast_s || !divides(pc.interval_s, self.dt_fast_s) {
            return Err(Error::config(
                "pol_control.interval_s",
                "must be a whole number of dt_fast_s steps",
            ));
        }
        non_negative("pol_control.dither_rad", pc.dither_rad)?;
        non_negative("pol_control.step_gain", pc.step_gain)?;
        non_negative("pol_control.sensor_noise", pc.sensor_noise)?;
        let gap = (pc.references_deg[0] - pc.references_deg[1]).rem_euclid(180.0);
        if gap.abs() < 1e-6 || (gap - 90.0).abs() < 1e-6 || (gap - 180.0).abs() < 1e-6 {
            return Err(Error::config(
                "pol_control.references_deg",
                "reference states must be distinct and non-orthogonal",
            ));
        }

        let pl = &self.phase_lock;
        finite("phase_lock.kp", pl.kp)?;
        finite("phase_lock.ki", pl.ki)?;
        positive("phase_lock.calibration_time_s", pl.calibration_time_s)?;
        if pl.calibration_travel_rad < 2.0 * std::f64::consts::PI {
            return Err(Error::config(
                "phase_lock.calibration_travel_rad",
                "must cover at least one fringe (2π)",
            ));
        }
        if self.control_flags().1 && pl.calibration_time_s > self.warmup_s {
            return Err(Error::config(
                "phase_lock.calibration_time_s",
                "calibration sweep must fit inside warmup_s",
            ));
        }

        let a = &self.analysis;
        positive("analysis.window_s", a.window_s)?;
        if a.window_s < 3.0 * self.bin_s {
            return Err(Error::config("analysis.window_s", "envelope window must span at least 3 bins"));
        }
        positive("analysis.smooth_s", a.smooth_s)?;
        let h = a.hist_bin;
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::config("analysis.hist_bin", "must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|source| Error::ConfigParse {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Manifest text: every effective parameter, re-loadable with [`load_config`].
    pub fn to_manifest(&self) -> String {
        let body = toml::to_string(self).expect("config is always representable as TOML");
        format!(
            "# polmz run manifest\n# scenario = {}, seed = {}\n{body}",
            self.scenario, self.seed
        )
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    ScenarioConfig::from_toml_str(&text, path)
}
