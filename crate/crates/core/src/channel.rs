//! Channel plan and time evolution of the two fibre arms.
//!
//! Each arm carries a drifting birefringence (an SU(2) element defined at the
//! reference wavelength), a phase made of a diffusive part and a deterministic
//! fast oscillation, and optionally the short segment where the quantum channel
//! is split away from the phase reference and left unlocked.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::{random_unitary_step, JonesMatrix};

/// Speed of light in nm·GHz.
const C_NM_GHZ: f64 = 299_792_458.0;

/// Distance outside the plan span that `arm_unitary_at` still accepts.
pub const WAVELENGTH_MARGIN_NM: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    /// Polarisation feedback reference, first wavelength.
    PolFeedback1,
    /// Polarisation feedback reference, second wavelength.
    PolFeedback2,
    /// Attenuated single-photon channel.
    Quantum,
    /// Classical phase-lock reference.
    PhaseReference,
}

/// The four DWDM channels and their roles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPlan {
    pub lambda_p1_nm: f64,
    pub lambda_p2_nm: f64,
    pub lambda_q_nm: f64,
    pub lambda_ph_nm: f64,
    pub grid_ghz: f64,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self {
            lambda_p1_nm: 1545.32,
            lambda_p2_nm: 1546.92,
            lambda_q_nm: 1546.12,
            lambda_ph_nm: 1547.72,
            grid_ghz: 100.0,
        }
    }
}

impl ChannelPlan {
    /// Adjacent-channel spacing tolerance, nm. The ITU grid is uniform in
    /// frequency, so spacing in wavelength differs by a few pm across it.
    const SPACING_TOL_NM: f64 = 0.02;

    pub fn wavelength(&self, role: ChannelRole) -> f64 {
        match role {
            ChannelRole::PolFeedback1 => self.lambda_p1_nm,
            ChannelRole::PolFeedback2 => self.lambda_p2_nm,
            ChannelRole::Quantum => self.lambda_q_nm,
            ChannelRole::PhaseReference => self.lambda_ph_nm,
        }
    }

    pub fn channels(&self) -> [(ChannelRole, f64); 4] {
        [
            (ChannelRole::PolFeedback1, self.lambda_p1_nm),
            (ChannelRole::PolFeedback2, self.lambda_p2_nm),
            (ChannelRole::Quantum, self.lambda_q_nm),
            (ChannelRole::PhaseReference, self.lambda_ph_nm),
        ]
    }

    /// Grid spacing converted to wavelength at the centre of the plan.
    pub fn grid_spacing_nm(&self) -> f64 {
        let centre = self.channels().iter().map(|(_, l)| l).sum::<f64>() / 4.0;
        centre * centre * self.grid_ghz / C_NM_GHZ
    }

    pub fn span(&self) -> (f64, f64) {
        let ls = self.channels().map(|(_, l)| l);
        let lo = ls.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ls.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ls = self.channels().map(|(_, l)| l);
        if ls.iter().any(|l| !l.is_finite() || *l <= 0.0) {
            return Err(Error::config("channels", "wavelengths must be positive and finite"));
        }
        if !(self.grid_ghz > 0.0) {
            return Err(Error::config("channels.grid_ghz", "must be > 0"));
        }
        ls.sort_by(f64::total_cmp);
        let spacing = self.grid_spacing_nm();
        for pair in ls.windows(2) {
            let gap = pair[1] - pair[0];
            if gap <= 0.0 {
                return Err(Error::config("channels", "wavelengths must be distinct"));
            }
            if (gap - spacing).abs() > Self::SPACING_TOL_NM {
                return Err(Error::config(
                    "channels",
                    format!(
                        "adjacent spacing {gap:.3} nm does not match the {:.0} GHz grid ({spacing:.3} nm)",
                        self.grid_ghz
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Diffusive phase plus a deterministic fast oscillation, per arm.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseDriftState {
    /// Accumulated random-walk phase, rad.
    pub walk: f64,
    /// Diffusion coefficient, rad²/s.
    pub diffusion: f64,
    /// Fast-term amplitude, rad.
    pub amplitude: f64,
    /// Fast-term frequency, Hz.
    pub frequency: f64,
    /// Fast-term phase offset, rad.
    pub offset: f64,
}

impl PhaseDriftState {
    pub fn new(diffusion: f64, amplitude: f64, frequency: f64, offset: f64) -> Result<Self> {
        if !(diffusion >= 0.0) {
            return Err(Error::invalid(format!("phase diffusion must be >= 0, got {diffusion}")));
        }
        if !(frequency >= 0.0) {
            return Err(Error::invalid(format!("fast frequency must be >= 0, got {frequency}")));
        }
        Ok(Self {
            walk: 0.0,
            diffusion,
            amplitude,
            frequency,
            offset,
        })
    }

    pub fn fast_term(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * PI * self.frequency * t + self.offset).sin()
    }
}

/// Advances the walk by one step of length `dt` and returns the total phase at `t`.
pub fn advance_phase<R: Rng + ?Sized>(
    state: &mut PhaseDriftState,
    t: f64,
    dt: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("phase step dt must be > 0, got {dt}")));
    }
    if state.diffusion > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        state.walk += (2.0 * state.diffusion * dt).sqrt() * z;
    }
    Ok(state.walk + state.fast_term(t))
}

/// Residual quantum-channel phase of the short unlocked segment.
#[derive(Clone, Debug, PartialEq)]
pub struct UnlockedSegmentState {
    pub residual: f64,
    /// Deterministic ramp, rad/s.
    pub ramp_rate: f64,
    /// Random-walk diffusion, rad²/s.
    pub diffusion: f64,
}

pub fn advance_unlocked<R: Rng + ?Sized>(
    state: &mut UnlockedSegmentState,
    dt: f64,
    rng: &mut R,
) -> f64 {
    if dt > 0.0 {
        state.residual += state.ramp_rate * dt;
        if state.diffusion > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            state.residual += (2.0 * state.diffusion * dt).sqrt() * z;
        }
    }
    state.residual
}

/// One fibre arm of the interferometer.
#[derive(Clone, Debug)]
pub struct ArmState {
    pub length_km: f64,
    /// Total insertion loss of the arm, dB.
    pub loss_db: f64,
    /// Birefringence at `reference_nm`, kept in SU(2).
    pub birefringence: JonesMatrix,
    pub reference_nm: f64,
    /// Relative change of the birefringence rotation angle per nm.
    pub kappa_per_nm: f64,
    /// Current total arm phase, rad.
    pub phase: f64,
    /// Polarisation drift strength, rad/√s.
    pub sigma_pol: f64,
    pub phase_drift: PhaseDriftState,
    /// Phase added by the fibre stretcher, rad.
    pub stretcher_offset: f64,
    /// Whether the quantum channel's unlocked segment sits in this arm.
    pub hosts_unlocked: bool,
}

impl ArmState {
    pub fn transmission(&self) -> f64 {
        10f64.powf(-self.loss_db / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km > 0.0) {
            return Err(Error::invalid("arm length must be > 0"));
        }
        if !(self.loss_db >= 0.0) {
            return Err(Error::invalid("arm loss must be >= 0 dB"));
        }
        if self.birefringence.unitarity_error() > 1e-9 {
            return Err(Error::invalid("arm birefringence must be unitary"));
        }
        Ok(())
    }
}

/// Random-walk step of the arm birefringence over `dt` seconds.
pub fn advance_birefringence<R: Rng + ?Sized>(arm: &mut ArmState, dt: f64, rng: &mut R) -> Result<()> {
    if !(dt >= 0.0) {
        return Err(Error::invalid(format!("birefringence step dt must be >= 0, got {dt}")));
    }
    if dt == 0.0 || arm.sigma_pol == 0.0 {
        return Ok(());
    }
    let step = random_unitary_step(rng, arm.sigma_pol * dt.sqrt())?;
    arm.birefringence = (step * arm.birefringence).reproject_su2();
    Ok(())
}

/// Arm birefringence at `lambda_nm`: the base rotation angle is scaled by
/// `1 + κ·(λ − λ0)` about the same axis. No randomness is involved.
pub fn arm_unitary_at(arm: &ArmState, plan: &ChannelPlan, lambda_nm: f64) -> Result<JonesMatrix> {
    let (lo, hi) = plan.span();
    if !(lambda_nm >= lo - WAVELENGTH_MARGIN_NM && lambda_nm <= hi + WAVELENGTH_MARGIN_NM) {
        return Err(Error::invalid(format!(
            "wavelength {lambda_nm} nm outside plan span [{lo}, {hi}] ± {WAVELENGTH_MARGIN_NM} nm"
        )));
    }
    let delta = lambda_nm - arm.reference_nm;
    if arm.kappa_per_nm == 0.0 || delta == 0.0 {
        return Ok(arm.birefringence);
    }
    let (phase, axis, angle) = arm.birefringence.to_poincare_rotation();
    let scaled = angle * (1.0 + arm.kappa_per_nm * delta);
    Ok(JonesMatrix::poincare_rotation(axis, scaled).scale(phase))
}
