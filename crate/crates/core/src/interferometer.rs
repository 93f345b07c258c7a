//! Field propagation through the Mach-Zehnder: input split, arm transfer,
//! stretcher actuation and 50:50 recombination.
//!
//! Both couplers use the same convention: the cross port picks up a factor
//! `i`, `E_out1 = (E1 + i·E2)/√2` and `E_out2 = (i·E1 + E2)/√2`.

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::channel::{arm_unitary_at, ArmState, ChannelPlan};
use crate::error::{Error, Result};
use crate::optics::{inner, JonesMatrix, JonesVector, IMAG};

/// Wavelengths closer than this are treated as the same channel.
const SAME_CHANNEL_NM: f64 = 1e-6;

/// One wavelength channel travelling through the interferometer.
///
/// `power` is either a mean photon number per gate or a classical power; the
/// interferometer treats both identically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelField {
    pub wavelength_nm: f64,
    pub jones: JonesVector,
    pub power: f64,
    pub phase: f64,
}

impl ChannelField {
    pub fn new(wavelength_nm: f64, jones: JonesVector, power: f64) -> Result<Self> {
        if !(power >= 0.0) {
            return Err(Error::invalid(format!("field power must be >= 0, got {power}")));
        }
        Ok(Self {
            wavelength_nm,
            jones: jones.normalized()?,
            power,
            phase: 0.0,
        })
    }

    /// Complex field vector `√P·e^{iφ}·jones`.
    pub fn amplitude(&self) -> JonesVector {
        self.jones
            .scale(Complex64::from_polar(self.power.sqrt(), self.phase))
    }

    fn from_amplitude(wavelength_nm: f64, amp: JonesVector) -> Self {
        let power = amp.norm_sqr();
        if power == 0.0 {
            return Self {
                wavelength_nm,
                jones: JonesVector::horizontal(),
                power: 0.0,
                phase: 0.0,
            };
        }
        // Put the global phase on the larger component so the split is stable.
        let lead = if amp.ex.norm_sqr() >= amp.ey.norm_sqr() { amp.ex } else { amp.ey };
        let phase = lead.arg();
        let unit = amp.scale(Complex64::from_polar(1.0 / power.sqrt(), -phase));
        Self {
            wavelength_nm,
            jones: unit,
            power,
            phase,
        }
    }
}

/// Which coupler output port.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Port {
    One,
    Two,
}

/// First coupler with light in port 1 only: arm 1 is the through port, arm 2
/// the cross port (+π/2).
pub fn split_input(field: &ChannelField) -> (ChannelField, ChannelField) {
    let half = 0.5 * field.power;
    let through = ChannelField {
        power: half,
        ..*field
    };
    let cross = ChannelField {
        power: half,
        phase: field.phase + FRAC_PI_2,
        ..*field
    };
    (through, cross)
}

/// Sends a field through one arm: birefringence at the field's wavelength,
/// then the polarisation compensator, then loss and arm phase.
///
/// `unlocked_residual` is added only for the quantum channel in the arm that
/// hosts the unlocked segment.
pub fn propagate(
    field: &ChannelField,
    arm: &ArmState,
    compensator: &JonesMatrix,
    plan: &ChannelPlan,
    unlocked_residual: f64,
) -> Result<ChannelField> {
    let fibre = arm_unitary_at(arm, plan, field.wavelength_nm)?;
    let jones = (*compensator * fibre).apply(&field.jones);
    let mut phase = field.phase + arm.phase + arm.stretcher_offset;
    if arm.hosts_unlocked && (field.wavelength_nm - plan.lambda_q_nm).abs() < SAME_CHANNEL_NM {
        phase += unlocked_residual;
    }
    Ok(ChannelField {
        wavelength_nm: field.wavelength_nm,
        jones,
        power: field.power * arm.transmission(),
        phase,
    })
}

fn check_same_channel(in1: &ChannelField, in2: &ChannelField) -> Result<()> {
    if (in1.wavelength_nm - in2.wavelength_nm).abs() > SAME_CHANNEL_NM {
        return Err(Error::invalid(format!(
            "cannot combine {} nm with {} nm",
            in1.wavelength_nm, in2.wavelength_nm
        )));
    }
    Ok(())
}

/// Output coupler acting on full vector fields.
pub fn combine_coupler(in1: &ChannelField, in2: &ChannelField) -> Result<(ChannelField, ChannelField)> {
    check_same_channel(in1, in2)?;
    let e1 = in1.amplitude();
    let e2 = in2.amplitude();
    let s = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let out1 = JonesVector::new((e1.ex + IMAG * e2.ex) * s, (e1.ey + IMAG * e2.ey) * s);
    let out2 = JonesVector::new((IMAG * e1.ex + e2.ex) * s, (IMAG * e1.ey + e2.ey) * s);
    Ok((
        ChannelField::from_amplitude(in1.wavelength_nm, out1),
        ChannelField::from_amplitude(in1.wavelength_nm, out2),
    ))
}

/// Closed-form description of the port-1 fringe: `mean + amplitude·cos(phase)`.
///
/// Port 2 carries `mean − amplitude·cos(phase)`. `phase` includes the arm phase
/// difference, the coupler's π/2 and the argument of the polarisation overlap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FringeTerms {
    pub mean: f64,
    pub amplitude: f64,
    pub phase: f64,
    /// `|⟨jones1|jones2⟩|`.
    pub overlap: f64,
}

impl FringeTerms {
    pub fn at(&self, extra_phase: f64, port: Port) -> f64 {
        let swing = self.amplitude * (self.phase + extra_phase).cos();
        match port {
            Port::One => self.mean + swing,
            Port::Two => self.mean - swing,
        }
    }

    /// Fringe contrast of this channel.
    pub fn visibility(&self) -> f64 {
        if self.mean > 0.0 {
            self.amplitude / self.mean
        } else {
            0.0
        }
    }
}

pub fn fringe_terms(in1: &ChannelField, in2: &ChannelField) -> Result<FringeTerms> {
    check_same_channel(in1, in2)?;
    let c = inner(&in1.jones, &in2.jones);
    Ok(FringeTerms {
        mean: 0.5 * (in1.power + in2.power),
        amplitude: (in1.power * in2.power).sqrt() * c.norm(),
        phase: in2.phase - in1.phase + c.arg() + FRAC_PI_2,
        overlap: c.norm(),
    })
}

/// Mean photon number (or power) leaving `port`:
/// `(P1+P2)/2 ± √(P1·P2)·|c|·cos(Δφ + arg c)`.
pub fn output_mean_photons(in1: &ChannelField, in2: &ChannelField, port: Port) -> Result<f64> {
    Ok(fringe_terms(in1, in2)?.at(0.0, port))
}

/// Piezo fibre stretcher with finite stroke and slew rate.
#[derive(Clone, Debug, PartialEq)]
pub struct Stretcher {
    /// Phase per command unit, rad.
    pub gain: f64,
    /// Total phase range, rad; the offset stays within ±stroke/2.
    pub stroke: f64,
    /// Maximum phase rate, rad/s.
    pub slew: f64,
    pub command: f64,
    /// Set when the last update hit the end of the stroke.
    pub out_of_range: bool,
}

impl Stretcher {
    pub fn new(gain: f64, stroke: f64, slew: f64) -> Result<Self> {
        if !(gain.is_finite() && gain != 0.0) {
            return Err(Error::invalid("stretcher gain must be finite and non-zero"));
        }
        if !(stroke > 0.0) || !(slew > 0.0) {
            return Err(Error::invalid("stretcher stroke and slew must be > 0"));
        }
        Ok(Self {
            gain,
            stroke,
            slew,
            command: 0.0,
            out_of_range: false,
        })
    }

    pub fn offset(&self) -> f64 {
        self.gain * self.command
    }

    /// Largest command magnitude that stays inside the stroke.
    pub fn command_limit(&self) -> f64 {
        0.5 * self.stroke / self.gain.abs()
    }

    /// Moves toward `command` within the slew limit and returns the phase offset.
    pub fn apply(&mut self, command: f64, dt: f64) -> f64 {
        let max_step = self.slew * dt / self.gain.abs();
        let step = (command - self.command).clamp(-max_step, max_step);
        let target = self.command + step;
        let limit = self.command_limit();
        self.out_of_range = target.abs() > limit;
        self.command = target.clamp(-limit, limit);
        self.offset()
    }

    /// Jumps by the whole number of fringes that brings the offset nearest to
    /// the centre of the stroke. Returns the phase jump applied.
    pub fn recentre(&mut self) -> f64 {
        let turns = (self.offset() / (2.0 * PI)).round();
        let jump = -turns * 2.0 * PI;
        self.command += jump / self.gain;
        self.out_of_range = false;
        jump
    }
}

/// Value-style wrapper around [`Stretcher::apply`].
pub fn apply_stretcher(s: &Stretcher, command: f64, dt: f64) -> Result<(Stretcher, f64)> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("stretcher dt must be > 0, got {dt}")));
    }
    let mut next = s.clone();
    let offset = next.apply(command, dt);
    Ok((next, offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::PhaseDriftState;
    use crate::optics::{make_retarder, random_su2};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn arm(loss_db: f64, birefringence: JonesMatrix) -> ArmState {
        ArmState {
            length_km: 8.0,
            loss_db,
            birefringence,
            reference_nm: 1546.12,
            kappa_per_nm: 0.0,
            phase: 0.0,
            sigma_pol: 0.0,
            phase_drift: PhaseDriftState::new(0.0, 0.0, 0.0, 0.0).unwrap(),
            stretcher_offset: 0.0,
            hosts_unlocked: false,
        }
    }

    fn field(power: f64, jones: JonesVector, phase: f64) -> ChannelField {
        let mut f = ChannelField::new(1546.12, jones, power).unwrap();
        f.phase = phase;
        f
    }

    #[test]
    fn split_examples() {
        let f = field(0.5, JonesVector::horizontal(), 0.0);
        let (a, b) = split_input(&f);
        assert_eq!((a.power, b.power), (0.25, 0.25));
        assert_eq!(a.phase, 0.0);
        assert!((b.phase - FRAC_PI_2).abs() < 1e-15);
        let (a, b) = split_input(&field(1.0, JonesVector::horizontal(), 0.0));
        assert_eq!((a.power, b.power), (0.5, 0.5));
        let (a, b) = split_input(&field(0.0, JonesVector::horizontal(), 0.0));
        assert_eq!((a.power, b.power), (0.0, 0.0));
    }

    #[test]
    fn propagate_identity_arm_is_noop() {
        let plan = ChannelPlan::default();
        let f = field(0.3, JonesVector::linear(0.2), 0.7);
        let out = propagate(&f, &arm(0.0, JonesMatrix::identity()), &JonesMatrix::identity(), &plan, 1.0)
            .unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn propagate_loss_in_db() {
        let plan = ChannelPlan::default();
        let f = field(1.0, JonesVector::horizontal(), 0.0);
        let out = propagate(&f, &arm(3.01, JonesMatrix::identity()), &JonesMatrix::identity(), &plan, 0.0)
            .unwrap();
        assert!((out.power - 0.5).abs() < 1e-3);
    }

    #[test]
    fn propagate_matches_matrix_oracle() {
        let plan = ChannelPlan::default();
        let r = make_retarder(FRAC_PI_4, PI).unwrap();
        let pc = make_retarder(0.0, 0.4).unwrap();
        let f = field(1.0, JonesVector::linear(0.3), 0.0);
        let out = propagate(&f, &arm(0.0, r), &pc, &plan, 0.0).unwrap();
        let fibre_out = JonesVector::new(
            r.m[0][0] * f.jones.ex + r.m[0][1] * f.jones.ey,
            r.m[1][0] * f.jones.ex + r.m[1][1] * f.jones.ey,
        );
        let expect = JonesVector::new(
            pc.m[0][0] * fibre_out.ex + pc.m[0][1] * fibre_out.ey,
            pc.m[1][0] * fibre_out.ex + pc.m[1][1] * fibre_out.ey,
        );
        assert!((out.jones.ex - expect.ex).norm() < 1e-12);
        assert!((out.jones.ey - expect.ey).norm() < 1e-12);
    }

    #[test]
    fn unlocked_residual_only_on_quantum_channel_of_host_arm() {
        let plan = ChannelPlan::default();
        let mut host = arm(0.0, JonesMatrix::identity());
        host.hosts_unlocked = true;
        let q = field(1.0, JonesVector::horizontal(), 0.0);
        let mut ph = q;
        ph.wavelength_nm = plan.lambda_ph_nm;
        let id = JonesMatrix::identity();
        assert_eq!(propagate(&q, &host, &id, &plan, 0.9).unwrap().phase, 0.9);
        assert_eq!(propagate(&ph, &host, &id, &plan, 0.9).unwrap().phase, 0.0);
        let other = arm(0.0, id);
        assert_eq!(propagate(&q, &other, &id, &plan, 0.9).unwrap().phase, 0.0);
    }

    #[test]
    fn combine_single_input_halves() {
        let e = field(0.8, JonesVector::horizontal(), 0.3);
        let zero = field(0.0, JonesVector::horizontal(), 0.0);
        let (o1, o2) = combine_coupler(&e, &zero).unwrap();
        assert!((o1.power - 0.4).abs() < 1e-12 && (o2.power - 0.4).abs() < 1e-12);
    }

    #[test]
    fn combine_constructive_convention() {
        // in2 = −i·in1: everything leaves port 1.
        let e1 = field(0.25, JonesVector::linear(0.4), 0.0);
        let e2 = field(0.25, JonesVector::linear(0.4), -FRAC_PI_2);
        let (o1, o2) = combine_coupler(&e1, &e2).unwrap();
        assert!((o1.power - 0.5).abs() < 1e-12);
        assert!(o2.power.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_inputs_do_not_interfere() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for k in 0..100 {
            let phi = 2.0 * PI * k as f64 / 100.0;
            let e1 = field(0.3, JonesVector::horizontal(), 0.0);
            let e2 = field(0.3, JonesVector::vertical(), phi);
            let (o1, o2) = combine_coupler(&e1, &e2).unwrap();
            assert!((o1.power - 0.3).abs() < 1e-12 && (o2.power - 0.3).abs() < 1e-12);
            lo = lo.min(o1.power);
            hi = hi.max(o1.power);
        }
        assert!(hi - lo <= 1e-9);
    }

    #[test]
    fn combine_rejects_mismatched_wavelengths() {
        let e1 = field(0.3, JonesVector::horizontal(), 0.0);
        let mut e2 = e1;
        e2.wavelength_nm += 0.8;
        assert!(matches!(combine_coupler(&e1, &e2), Err(Error::InvalidArgument(_))));
        assert!(output_mean_photons(&e1, &e2, Port::One).is_err());
    }

    #[test]
    fn output_examples() {
        let h = JonesVector::horizontal();
        let a = field(0.25, h, 0.0);
        let constructive = field(0.25, h, -FRAC_PI_2);
        assert!((output_mean_photons(&a, &constructive, Port::One).unwrap() - 0.5).abs() < 1e-12);
        assert!(output_mean_photons(&a, &constructive, Port::Two).unwrap().abs() < 1e-12);
        let v = field(0.25, JonesVector::vertical(), 0.0);
        for k in 0..16 {
            let mut b = v;
            b.phase = k as f64 * 0.4;
            assert!((output_mean_photons(&a, &b, Port::One).unwrap() - 0.25).abs() < 1e-12);
            assert!((output_mean_photons(&a, &b, Port::Two).unwrap() - 0.25).abs() < 1e-12);
        }
    }

    /// Brute-force fringe visibility over a phase sweep.
    fn swept_visibility(in1: &ChannelField, in2: &ChannelField) -> f64 {
        let n = 20_000;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for k in 0..n {
            let mut b = *in2;
            b.phase += 2.0 * PI * k as f64 / n as f64;
            let (o1, _) = combine_coupler(in1, &b).unwrap();
            lo = lo.min(o1.power);
            hi = hi.max(o1.power);
        }
        (hi - lo) / (hi + lo)
    }

    #[test]
    fn visibility_equals_overlap_for_partial_overlap() {
        // |c| = 0.8 between linear states at 0 and acos(0.8).
        let a = field(0.25, JonesVector::horizontal(), 0.0);
        let b = field(0.25, JonesVector::linear(0.8f64.acos()), 0.0);
        assert!((swept_visibility(&a, &b) - 0.8).abs() < 1e-6);
    }

    #[test]
    fn stretcher_examples() {
        let s = Stretcher::new(10.0, 5000.0, 1e9).unwrap();
        let (s0, off) = apply_stretcher(&s, 0.0, 1e-4).unwrap();
        assert_eq!(off, 0.0);
        assert!(!s0.out_of_range);
        let (_, off) = apply_stretcher(&s, 0.5, 1e-4).unwrap();
        assert!((off - 5.0).abs() < 1e-12);
        let (s2, off) = apply_stretcher(&s, 1e6, 1e-4).unwrap();
        assert!((off - 2500.0).abs() < 1e-9);
        assert!(s2.out_of_range);
        assert!(apply_stretcher(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn stretcher_slew_limit_and_recentre() {
        let mut s = Stretcher::new(2.0, 100.0, 1000.0).unwrap();
        let off = s.apply(10.0, 1e-3);
        assert!((off - 1.0).abs() < 1e-12, "slew-limited to 1 rad per ms, got {off}");
        s.command = 20.0; // 40 rad
        let jump = s.recentre();
        assert!((jump + 12.0 * PI).abs() < 1e-9);
        assert!(s.offset().abs() <= PI);
    }

    fn arb_field() -> impl Strategy<Value = ChannelField> {
        (any::<u64>(), 0.0..2.0f64, -10.0..10.0f64).prop_map(|(seed, p, phi)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = random_su2(&mut rng).apply(&JonesVector::horizontal());
            field(p, j, phi)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn coupler_conserves_energy_and_matches_closed_form(a in arb_field(), b in arb_field()) {
            let (o1, o2) = combine_coupler(&a, &b).unwrap();
            prop_assert!((o1.power + o2.power - a.power - b.power).abs() <= 1e-9);
            prop_assert!((output_mean_photons(&a, &b, Port::One).unwrap() - o1.power).abs() <= 1e-9);
            prop_assert!((output_mean_photons(&a, &b, Port::Two).unwrap() - o2.power).abs() <= 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn unbalanced_visibility(p1 in 0.01..1.0f64, p2 in 0.01..1.0f64, angle in 0.0..1.5f64) {
            let a = field(p1, JonesVector::horizontal(), 0.0);
            let b = field(p2, JonesVector::linear(angle), 0.0);
            let expect = 2.0 * (p1 * p2).sqrt() * angle.cos() / (p1 + p2);
            prop_assert!((swept_visibility(&a, &b) - expect).abs() <= 1e-6);
        }
    }
}
