//! Feedback loops: per-arm polarisation stabilisation on two reference
//! wavelengths and the side-of-fringe phase lock driving the stretcher.
//!
//! The polarisation compensator is a stack of four variable retarders with
//! fixed axes (0, π/4, 0, π/4), i.e. alternating rotations about s1 and s2.
//! Each controller iteration dithers one retardance, estimates the slope of
//! the summed analyser transmissions and steps uphill. Holding two
//! non-orthogonal references fixed pins the arm transform up to global phase.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::interferometer::Stretcher;
use crate::optics::{inner, make_retarder, wrap_two_pi, JonesMatrix, JonesVector};

pub const STACK_AXES: [f64; 4] = [0.0, FRAC_PI_4, 0.0, FRAC_PI_4];

#[derive(Clone, Debug, PartialEq)]
pub struct PolControllerState {
    pub axes: [f64; 4],
    /// Retardances, each in `[0, 2π)`.
    pub retardances: [f64; 4],
    pub dither: f64,
    pub step_gain: f64,
    /// Transmission that counts as "fully aligned" for each reference.
    pub setpoints: [f64; 2],
    pub references: [JonesVector; 2],
    pub analyzers: [JonesVector; 2],
    pub next_coordinate: usize,
    pub enabled: bool,
}

impl PolControllerState {
    pub fn new(
        references: [JonesVector; 2],
        analyzers: [JonesVector; 2],
        dither: f64,
        step_gain: f64,
    ) -> Result<Self> {
        let references = [references[0].normalized()?, references[1].normalized()?];
        let analyzers = [analyzers[0].normalized()?, analyzers[1].normalized()?];
        let c = inner(&references[0], &references[1]).norm();
        if !(c > 1e-6 && c < 1.0 - 1e-6) {
            return Err(Error::invalid(format!(
                "reference states must be non-orthogonal and distinct, |overlap| = {c}"
            )));
        }
        if !(dither >= 0.0) || !(step_gain >= 0.0) {
            return Err(Error::invalid("dither and step gain must be >= 0"));
        }
        Ok(Self {
            axes: STACK_AXES,
            retardances: [0.0; 4],
            dither,
            step_gain,
            setpoints: [1.0, 1.0],
            references,
            analyzers,
            next_coordinate: 0,
            enabled: true,
        })
    }

    /// Transfer matrix of the stack for arbitrary retardances; light crosses
    /// element 0 first.
    ///
    /// Each element carries the common phase `e^{iδ/2}` of a physical
    /// retarder, which makes it 2π-periodic in δ. Without it, wrapping a
    /// retardance would flip the sign of the arm field.
    pub fn compensator_for(&self, retardances: &[f64; 4]) -> JonesMatrix {
        let common: f64 = retardances.iter().sum::<f64>() / 2.0;
        self.axes
            .iter()
            .zip(retardances)
            .fold(JonesMatrix::identity(), |acc, (&axis, &ret)| {
                make_retarder(axis, ret).expect("finite retarder settings") * acc
            })
            .scale(Complex64::from_polar(1.0, common))
    }

    pub fn compensator(&self) -> JonesMatrix {
        self.compensator_for(&self.retardances)
    }

    fn objective(&self, powers: (f64, f64)) -> f64 {
        powers.0 / self.setpoints[0] + powers.1 / self.setpoints[1]
    }
}

/// Analyser transmissions of the two references after the full arm
/// (`arm_p1`, `arm_p2` already include the compensator).
pub fn pol_feedback_signals(
    arm_p1: &JonesMatrix,
    arm_p2: &JonesMatrix,
    ctrl: &PolControllerState,
) -> (f64, f64) {
    let p = |arm: &JonesMatrix, k: usize| {
        inner(&ctrl.analyzers[k], &arm.apply(&ctrl.references[k]))
            .norm_sqr()
            .clamp(0.0, 1.0)
    };
    (p(arm_p1, 0), p(arm_p2, 1))
}

/// One dither/gradient iteration on the current coordinate.
///
/// `signal` returns the two feedback powers for a candidate set of
/// retardances. With `step_gain ≤ 1` the update never overshoots along the
/// coordinate, so on a static plant with exact signals the objective cannot
/// decrease.
pub fn pol_control_step<F>(ctrl: &mut PolControllerState, mut signal: F)
where
    F: FnMut(&[f64; 4]) -> (f64, f64),
{
    if !ctrl.enabled {
        return;
    }
    let j = ctrl.next_coordinate % 4;
    ctrl.next_coordinate = (j + 1) % 4;
    if ctrl.dither == 0.0 || ctrl.step_gain == 0.0 {
        return;
    }
    let mut probe = ctrl.retardances;
    probe[j] = ctrl.retardances[j] + ctrl.dither;
    let up = ctrl.objective(signal(&probe));
    probe[j] = ctrl.retardances[j] - ctrl.dither;
    let down = ctrl.objective(signal(&probe));
    let gradient = (up - down) / (2.0 * ctrl.dither);
    ctrl.retardances[j] = wrap_two_pi(ctrl.retardances[j] + ctrl.step_gain * gradient);
}

/// Fringe extremes and mid-fringe setpoint of the phase-reference detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LockCalibration {
    pub imax: f64,
    pub imin: f64,
    pub setpoint: f64,
}

/// Calibrates the side-of-fringe lock from a stretcher sweep.
///
/// `travel_rad` is the commanded stretcher travel during the sweep. The sweep
/// must also show at least one full fringe in the data: the normalised signal
/// has to move between the upper and lower quarter bands at least twice
/// (each crossing being half a fringe).
pub fn lock_calibration(samples: &[f64], travel_rad: f64) -> Result<LockCalibration> {
    if !(travel_rad >= 2.0 * PI) {
        return Err(Error::CalibrationFailed(format!(
            "sweep travel {travel_rad:.3} rad is shorter than one fringe"
        )));
    }
    if samples.len() < 3 || samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::CalibrationFailed("sweep needs at least 3 finite samples".into()));
    }
    let imax = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let imin = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let range = imax - imin;
    if !(range > 1e-3 * imax.abs().max(1e-12)) {
        return Err(Error::CalibrationFailed(format!(
            "no fringe contrast in sweep (max {imax}, min {imin})"
        )));
    }
    let hi = imin + 0.75 * range;
    let lo = imin + 0.25 * range;
    let mut band = 0i8;
    let mut transitions = 0usize;
    for &s in samples {
        let b = if s >= hi {
            1
        } else if s <= lo {
            -1
        } else {
            0
        };
        if b != 0 {
            if band != 0 && b != band {
                transitions += 1;
            }
            band = b;
        }
    }
    if transitions < 2 {
        return Err(Error::CalibrationFailed(format!(
            "sweep covers about {:.2} rad of fringe phase, need 2π",
            transitions as f64 * PI
        )));
    }
    Ok(LockCalibration {
        imax,
        imin,
        setpoint: 0.5 * (imax + imin),
    })
}

/// Side-of-fringe PI lock state.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseLockState {
    pub kp: f64,
    /// Integral gain, 1/s.
    pub ki: f64,
    pub integrator: f64,
    pub calibration: Option<LockCalibration>,
    pub enabled: bool,
    /// Current stretcher command.
    pub command: f64,
    /// Number of 2π stretcher resets so far.
    pub resets: u64,
}

impl PhaseLockState {
    pub fn new(kp: f64, ki: f64) -> Self {
        Self {
            kp,
            ki,
            integrator: 0.0,
            calibration: None,
            enabled: true,
            command: 0.0,
            resets: 0,
        }
    }

    /// Normalised error of a detector reading against the calibrated setpoint.
    pub fn error_signal(&self, measured: f64) -> Result<f64> {
        let cal = self
            .calibration
            .ok_or_else(|| Error::contract("phase lock used before calibration"))?;
        if !(cal.imax > cal.imin) {
            return Err(Error::contract("phase lock calibration has Imax <= Imin"));
        }
        Ok((measured - cal.setpoint) / (cal.imax - cal.imin))
    }

    /// Out-of-range handling: move the stretcher by whole fringes toward the
    /// middle of its stroke and restart the integrator.
    pub fn recentre(&mut self, stretcher: &mut Stretcher) -> f64 {
        let jump = stretcher.recentre();
        self.command = stretcher.command;
        self.integrator = 0.0;
        self.resets += 1;
        jump
    }
}

/// One PI update. Returns the new stretcher command.
pub fn phase_lock_step(ctrl: &mut PhaseLockState, measured: f64, dt: f64) -> Result<f64> {
    if !ctrl.enabled {
        return Ok(ctrl.command);
    }
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("lock dt must be > 0, got {dt}")));
    }
    let error = ctrl.error_signal(measured)?;
    ctrl.command -= ctrl.kp * error + ctrl.ki * ctrl.integrator;
    ctrl.integrator += error * dt;
    Ok(ctrl.command)
}
