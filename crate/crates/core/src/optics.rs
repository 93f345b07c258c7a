//! Jones and Stokes calculus for fully polarised light.
//!
//! Stokes convention: `s1 = |ex|² − |ey|²`, `s2 = 2 Re(ex* ey)`,
//! `s3 = −2 Im(ex* ey)`, so `(1, −i)/√2` sits at `s3 = +1`.
//!
//! Every unitary built here is an SU(2) element written as a rotation on the
//! Poincaré sphere, `U = cos(α/2)·I − i·sin(α/2)·K(n)`, where `K(n)` is the
//! generator whose expectation value is `n · s`. Global phase is never
//! normalised away: interference code consumes it.

use std::f64::consts::PI;
use std::ops::Mul;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const NORM_TOLERANCE: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Complex two-component polarisation state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesVector {
    pub ex: Complex64,
    pub ey: Complex64,
}

impl JonesVector {
    pub const fn new(ex: Complex64, ey: Complex64) -> Self {
        Self { ex, ey }
    }

    pub const fn horizontal() -> Self {
        Self::new(ONE, ZERO)
    }

    pub const fn vertical() -> Self {
        Self::new(ZERO, ONE)
    }

    /// Linear polarisation at `angle` radians from horizontal.
    pub fn linear(angle: f64) -> Self {
        Self::new(Complex64::new(angle.cos(), 0.0), Complex64::new(angle.sin(), 0.0))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.ex.norm_sqr() + self.ey.norm_sqr()
    }

    pub fn is_finite(&self) -> bool {
        self.ex.is_finite() && self.ey.is_finite()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr().sqrt() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// Unit-norm copy; fails on a zero or non-finite vector.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::invalid("cannot normalise a zero or non-finite Jones vector"));
        }
        Ok(Self::new(self.ex / n, self.ey / n))
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        Self::new(self.ex * factor, self.ey * factor)
    }

    fn check_normalized(&self, what: &str) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::contract(format!(
                "{what} must be normalised, |v|² = {}",
                self.norm_sqr()
            )))
        }
    }
}

/// 2×2 complex transfer operator, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JonesMatrix {
    pub m: [[Complex64; 2]; 2],
}

impl JonesMatrix {
    pub const fn new(m: [[Complex64; 2]; 2]) -> Self {
        Self { m }
    }

    pub const fn identity() -> Self {
        Self::new([[ONE, ZERO], [ZERO, ONE]])
    }

    pub const fn diag(a: Complex64, d: Complex64) -> Self {
        Self::new([[a, ZERO], [ZERO, d]])
    }

    /// Real rotation of the field components by `theta`.
    pub fn real_rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self::new([
            [Complex64::new(c, 0.0), Complex64::new(-s, 0.0)],
            [Complex64::new(s, 0.0), Complex64::new(c, 0.0)],
        ])
    }

    /// Rotation by `angle` about the unit Stokes axis `axis`.
    pub fn poincare_rotation(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        let [n1, n2, n3] = axis;
        // K(n) = [[n1, n2 + i n3], [n2 − i n3, −n1]]
        let a = Complex64::new(c, -s * n1);
        let d = Complex64::new(c, s * n1);
        let b = Complex64::new(s * n3, -s * n2);
        let cc = Complex64::new(-s * n3, -s * n2);
        Self::new([[a, b], [cc, d]])
    }

    /// Decomposes `self = e^{iβ}·R(n, α)` with `α ∈ [0, 2π]`.
    ///
    /// Only meaningful for unitary matrices. When `α` is 0 or 2π the axis is
    /// arbitrary and `[1, 0, 0]` is returned.
    pub fn to_poincare_rotation(&self) -> (Complex64, [f64; 3], f64) {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let phase = Complex64::from_polar(1.0, 0.5 * det.arg());
        let (a, b, c, d) = (a / phase, b / phase, c / phase, d / phase);
        let cos_half = (0.5 * (a + d).re).clamp(-1.0, 1.0);
        let v = [0.5 * (d - a).im, -0.5 * (b + c).im, 0.5 * (b - c).re];
        let sin_half = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let angle = 2.0 * sin_half.atan2(cos_half);
        if sin_half < 1e-300 {
            return (phase, [1.0, 0.0, 0.0], angle);
        }
        (phase, [v[0] / sin_half, v[1] / sin_half, v[2] / sin_half], angle)
    }

    pub fn dagger(&self) -> Self {
        let [[a, b], [c, d]] = self.m;
        Self::new([[a.conj(), c.conj()], [b.conj(), d.conj()]])
    }

    pub fn apply(&self, v: &JonesVector) -> JonesVector {
        let [[a, b], [c, d]] = self.m;
        JonesVector::new(a * v.ex + b * v.ey, c * v.ex + d * v.ey)
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        let [[a, b], [c, d]] = self.m;
        Self::new([[a * factor, b * factor], [c * factor, d * factor]])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|z| z.is_finite())
    }

    pub fn frobenius_distance(&self, other: &JonesMatrix) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// ‖U†U − I‖_F.
    pub fn unitarity_error(&self) -> f64 {
        (self.dagger() * *self).frobenius_distance(&Self::identity())
    }

    /// Projects a near-SU(2) matrix back onto SU(2).
    ///
    /// Long products of unitaries accumulate rounding drift; the SU(2) form
    /// `[[a, b], [−b*, a*]]` is rebuilt from the first row and renormalised.
    pub fn reproject_su2(&self) -> Self {
        let [[a, b], [c, d]] = self.m;
        let a = 0.5 * (a + d.conj());
        let b = 0.5 * (b - c.conj());
        let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (a, b) = (a / n, b / n);
        Self::new([[a, b], [-b.conj(), a.conj()]])
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;

    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        let [[a, b], [c, d]] = self.m;
        let [[e, f], [g, h]] = rhs.m;
        JonesMatrix::new([
            [a * e + b * g, a * f + b * h],
            [c * e + d * g, c * f + d * h],
        ])
    }
}

impl Mul<JonesVector> for JonesMatrix {
    type Output = JonesVector;

    fn mul(self, rhs: JonesVector) -> JonesVector {
        self.apply(&rhs)
    }
}

/// Normalised Stokes parameters of a pure state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StokesVector {
    pub s0: f64,
    pub s1: f64,
    pub s2: f64,
    pub s3: f64,
}

impl StokesVector {
    pub fn direction(&self) -> [f64; 3] {
        [self.s1, self.s2, self.s3]
    }

    /// Great-circle angle between two points on the Poincaré sphere.
    pub fn angle_to(&self, other: &StokesVector) -> f64 {
        let dot = self.s1 * other.s1 + self.s2 * other.s2 + self.s3 * other.s3;
        let norm = (self.s1.powi(2) + self.s2.powi(2) + self.s3.powi(2)).sqrt()
            * (other.s1.powi(2) + other.s2.powi(2) + other.s3.powi(2)).sqrt();
        (dot / norm).clamp(-1.0, 1.0).acos()
    }
}

/// Linear retarder with fast axis at `axis_angle` and phase retardance `retardance`:
/// `R(θ)·diag(e^{−iδ/2}, e^{+iδ/2})·R(−θ)`.
pub fn make_retarder(axis_angle: f64, retardance: f64) -> Result<JonesMatrix> {
    if !axis_angle.is_finite() || !retardance.is_finite() {
        return Err(Error::invalid(format!(
            "retarder parameters must be finite (axis {axis_angle}, retardance {retardance})"
        )));
    }
    let core = JonesMatrix::diag(
        Complex64::from_polar(1.0, -0.5 * retardance),
        Complex64::from_polar(1.0, 0.5 * retardance),
    );
    Ok(JonesMatrix::real_rotation(axis_angle) * core * JonesMatrix::real_rotation(-axis_angle))
}

pub fn apply(j: &JonesMatrix, v: &JonesVector) -> JonesVector {
    j.apply(v)
}

/// Inner product `⟨a|b⟩` of two normalised states.
pub fn overlap(a: &JonesVector, b: &JonesVector) -> Result<Complex64> {
    a.check_normalized("overlap lhs")?;
    b.check_normalized("overlap rhs")?;
    Ok(inner(a, b))
}

/// `⟨a|b⟩` without the normalisation contract.
pub(crate) fn inner(a: &JonesVector, b: &JonesVector) -> Complex64 {
    a.ex.conj() * b.ex + a.ey.conj() * b.ey
}

pub fn to_stokes(v: &JonesVector) -> Result<StokesVector> {
    v.check_normalized("Stokes input")?;
    let cross = v.ex.conj() * v.ey;
    Ok(StokesVector {
        s0: v.norm_sqr(),
        s1: v.ex.norm_sqr() - v.ey.norm_sqr(),
        s2: 2.0 * cross.re,
        s3: -2.0 * cross.im,
    })
}

/// Uniformly distributed direction on the unit sphere.
pub fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// Isotropic drift increment: rotation by `|N(0, σ)|` about a uniformly random axis.
pub fn random_unitary_step<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Result<JonesMatrix> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("drift sigma must be >= 0, got {sigma}")));
    }
    let axis = random_axis(rng);
    let z: f64 = rng.sample(StandardNormal);
    Ok(JonesMatrix::poincare_rotation(axis, (sigma * z).abs()))
}

/// Haar-distributed SU(2) element (uniform over all polarisation transforms).
pub fn random_su2<R: Rng + ?Sized>(rng: &mut R) -> JonesMatrix {
    loop {
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-12 {
            continue;
        }
        let [q0, q1, q2, q3] = q.map(|x| x / n);
        return JonesMatrix::new([
            [Complex64::new(q0, -q1), Complex64::new(q3, -q2)],
            [Complex64::new(-q3, -q2), Complex64::new(q0, q1)],
        ]);
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_two_pi(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_pi(x: f64) -> f64 {
    wrap_two_pi(x + PI) - PI
}

/// Convenience: `i` as a complex number.
pub const IMAG: Complex64 = I;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    /// Explicit element-wise product, kept apart from the `Mul` impl.
    fn matmul_oracle(x: &JonesMatrix, y: &JonesMatrix) -> [[Complex64; 2]; 2] {
        let mut out = [[ZERO; 2]; 2];
        for (r, row) in out.iter_mut().enumerate() {
            for (col, cell) in row.iter_mut().enumerate() {
                for k in 0..2 {
                    *cell += x.m[r][k] * y.m[k][col];
                }
            }
        }
        out
    }

    #[test]
    fn retarder_zero_is_identity() {
        let r = make_retarder(0.0, 0.0).unwrap();
        assert!(r.frobenius_distance(&JonesMatrix::identity()) < 1e-15);
    }

    #[test]
    fn half_wave_on_horizontal_axis() {
        let r = make_retarder(0.0, PI).unwrap();
        let expect = JonesMatrix::diag(c(0.0, -1.0), c(0.0, 1.0));
        assert!(r.frobenius_distance(&expect) < 1e-12);
    }

    #[test]
    fn half_wave_at_45_degrees_maps_h_to_v() {
        // R(π/4) diag(−i, i) R(−π/4) written out by hand.
        let s = FRAC_1_SQRT_2;
        let rot = JonesMatrix::new([[c(s, 0.0), c(-s, 0.0)], [c(s, 0.0), c(s, 0.0)]]);
        let rot_inv = JonesMatrix::new([[c(s, 0.0), c(s, 0.0)], [c(-s, 0.0), c(s, 0.0)]]);
        let core = JonesMatrix::diag(c(0.0, -1.0), c(0.0, 1.0));
        let oracle = JonesMatrix::new(matmul_oracle(
            &JonesMatrix::new(matmul_oracle(&rot, &core)),
            &rot_inv,
        ));
        let r = make_retarder(FRAC_PI_4, PI).unwrap();
        assert!(r.frobenius_distance(&oracle) < 1e-12);

        let out = apply(&r, &JonesVector::horizontal());
        assert!(out.ex.norm() < 1e-12);
        assert!((out.ey.norm() - 1.0).abs() < 1e-12);
        assert!((out.norm_sqr().sqrt() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn retarder_rejects_non_finite() {
        assert!(matches!(make_retarder(f64::NAN, 0.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(make_retarder(0.0, f64::INFINITY), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn apply_examples() {
        let h = JonesVector::horizontal();
        assert_eq!(apply(&JonesMatrix::identity(), &h), h);
        let q = JonesMatrix::diag(c(0.0, -1.0), c(0.0, 1.0));
        let out = apply(&q, &JonesVector::vertical());
        assert!(close(out.ex, ZERO, 1e-15) && close(out.ey, c(0.0, 1.0), 1e-15));
    }

    #[test]
    fn overlap_examples() {
        let h = JonesVector::horizontal();
        let v = JonesVector::vertical();
        let d = JonesVector::linear(FRAC_PI_4);
        assert!(close(overlap(&h, &h).unwrap(), ONE, 1e-15));
        assert!(close(overlap(&h, &v).unwrap(), ZERO, 1e-15));
        assert!((overlap(&h, &d).unwrap().norm() - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn overlap_rejects_unnormalised() {
        let big = JonesVector::new(c(2.0, 0.0), ZERO);
        let err = overlap(&big, &JonesVector::horizontal()).unwrap_err();
        assert!(matches!(err, Error::ContractViolation(_)));
    }

    #[test]
    fn stokes_examples() {
        let s = to_stokes(&JonesVector::horizontal()).unwrap();
        assert_eq!((s.s0, s.s1, s.s2, s.s3), (1.0, 1.0, 0.0, 0.0));
        let s = to_stokes(&JonesVector::linear(FRAC_PI_4)).unwrap();
        assert!((s.s0 - 1.0).abs() < 1e-15 && s.s1.abs() < 1e-15);
        assert!((s.s2 - 1.0).abs() < 1e-15 && s.s3.abs() < 1e-15);
        let rc = JonesVector::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, -FRAC_1_SQRT_2));
        let s = to_stokes(&rc).unwrap();
        assert!(s.s1.abs() < 1e-15 && s.s2.abs() < 1e-15 && (s.s3 - 1.0).abs() < 1e-15);
        assert!(to_stokes(&JonesVector::new(ZERO, ZERO)).is_err());
    }

    #[test]
    fn retarder_rotates_about_expected_stokes_axis() {
        // Quarter-wave at 45° turns H (s1) into a circular state (±s3).
        let q = make_retarder(FRAC_PI_4, PI / 2.0).unwrap();
        let s = to_stokes(&q.apply(&JonesVector::horizontal())).unwrap();
        assert!((s.s3.abs() - 1.0).abs() < 1e-12);
        let (_, axis, angle) = q.to_poincare_rotation();
        assert!((angle - PI / 2.0).abs() < 1e-12);
        assert!((axis[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_step_zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_unitary_step(&mut rng, 0.0).unwrap();
        assert_eq!(u, JonesMatrix::identity());
        assert!(random_unitary_step(&mut rng, -1.0).is_err());
    }

    #[test]
    fn random_step_angle_is_half_normal() {
        // Monte Carlo oracle: E|N(0, σ)| = σ·√(2/π). The rotation angle is read
        // back from the trace, independent of how the step was assembled.
        let sigma = 0.01;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut angle_sum = 0.0;
        let mut h_move_sum = 0.0;
        let h = to_stokes(&JonesVector::horizontal()).unwrap();
        for _ in 0..n {
            let u = random_unitary_step(&mut rng, sigma).unwrap();
            let tr = u.m[0][0] + u.m[1][1];
            angle_sum += 2.0 * (0.5 * tr.re).clamp(-1.0, 1.0).acos();
            let moved = to_stokes(&u.apply(&JonesVector::horizontal())).unwrap();
            h_move_sum += h.angle_to(&moved);
        }
        let expected = sigma * (2.0 / PI).sqrt();
        let mean_angle = angle_sum / n as f64;
        assert!((mean_angle / expected - 1.0).abs() < 0.05, "{mean_angle} vs {expected}");
        // A probe state moves by α·sin(β) for axis angle β; E[sin β] = π/4.
        let mean_move = h_move_sum / n as f64;
        let expected_move = expected * FRAC_PI_4;
        assert!((mean_move / expected_move - 1.0).abs() < 0.05, "{mean_move} vs {expected_move}");
    }

    #[test]
    fn rotation_round_trip() {
        let axis = [0.6, 0.0, 0.8];
        let u = JonesMatrix::poincare_rotation(axis, 1.3).scale(Complex64::from_polar(1.0, 0.4));
        let (phase, ax, ang) = u.to_poincare_rotation();
        let rebuilt = JonesMatrix::poincare_rotation(ax, ang).scale(phase);
        assert!(rebuilt.frobenius_distance(&u) < 1e-12);
    }

    #[test]
    fn wrap_helpers() {
        assert!((wrap_two_pi(-0.5) - (2.0 * PI - 0.5)).abs() < 1e-12);
        assert!((wrap_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!(wrap_two_pi(2.0 * PI) < 2.0 * PI);
    }

    fn arb_state() -> impl Strategy<Value = JonesVector> {
        (-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64)
            .prop_filter("non-zero", |(a, b, c, d)| a * a + b * b + c * c + d * d > 1e-3)
            .prop_map(|(a, b, cc, d)| {
                JonesVector::new(c(a, b), c(cc, d)).normalized().unwrap()
            })
    }

    fn arb_unitary() -> impl Strategy<Value = JonesMatrix> {
        (any::<u64>(), -PI..PI).prop_map(|(seed, phase)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_su2(&mut rng).scale(Complex64::from_polar(1.0, phase))
        })
    }

    proptest! {
        #[test]
        fn constructed_matrices_are_unitary(theta in -10.0..10.0f64, delta in -10.0..10.0f64,
                                            seed in any::<u64>(), sigma in 0.0..5.0f64) {
            prop_assert!(make_retarder(theta, delta).unwrap().unitarity_error() <= 1e-9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(random_unitary_step(&mut rng, sigma).unwrap().unitarity_error() <= 1e-9);
            prop_assert!(random_su2(&mut rng).unitarity_error() <= 1e-9);
        }

        #[test]
        fn unitary_preserves_norm_and_overlap(u in arb_unitary(), a in arb_state(), b in arb_state()) {
            let ua = u.apply(&a);
            let ub = u.apply(&b);
            prop_assert!((ua.norm_sqr().sqrt() - 1.0).abs() <= 1e-9);
            let before = overlap(&a, &b).unwrap().norm();
            let after = overlap(&ua, &ub).unwrap().norm();
            prop_assert!((before - after).abs() <= 1e-9);
            prop_assert!(before <= 1.0 + 1e-9);
        }

        #[test]
        fn stokes_of_pure_state_is_on_sphere(a in arb_state()) {
            let s = to_stokes(&a).unwrap();
            prop_assert!((s.s0 - 1.0).abs() <= 1e-9);
            prop_assert!((s.s1 * s.s1 + s.s2 * s.s2 + s.s3 * s.s3 - 1.0).abs() <= 1e-9);
        }
    }
}
