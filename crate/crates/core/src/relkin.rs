//! Relativistic kinematics in natural units.
//!
//! A particle of unit mass with momentum `v` has energy `<v> = sqrt(1 + |v|^2)`
//! and velocity `v / <v>`, which always lies inside the open unit ball. The
//! inverse velocity map, its Jacobian and the per-species rescaling
//! `v -> m * v` live here; everything downstream (transport, field kernels,
//! asymptotic profiles) is built on these few maps.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-vector with `f64` components. Used for positions, momenta,
/// velocities and field values alike.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn splat(v: f64) -> Self {
        Vec3::new(v, v, v)
    }

    pub fn unit_x() -> Self {
        Vec3::new(1.0, 0.0, 0.0)
    }

    pub fn unit_y() -> Self {
        Vec3::new(0.0, 1.0, 0.0)
    }

    pub fn unit_z() -> Self {
        Vec3::new(0.0, 0.0, 1.0)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Unit vector in the same direction; zero input maps to zero.
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n == 0.0 {
            Vec3::ZERO
        } else {
            self / n
        }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn as_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Vec3 {
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

/// Row-major 3x3 matrix. Only the handful of operations needed for Jacobians
/// and gradient audits are provided.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub fn zero() -> Self {
        Mat3::default()
    }

    pub fn identity() -> Self {
        Mat3 {
            rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3 {
            rows: [r0.as_array(), r1.as_array(), r2.as_array()],
        }
    }

    pub fn row(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.rows[i])
    }

    /// Outer product `a b^T`.
    pub fn outer(a: Vec3, b: Vec3) -> Self {
        Mat3 {
            rows: [
                [a.x * b.x, a.x * b.y, a.x * b.z],
                [a.y * b.x, a.y * b.y, a.y * b.z],
                [a.z * b.x, a.z * b.y, a.z * b.z],
            ],
        }
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.row(0).dot(v),
            self.row(1).dot(v),
            self.row(2).dot(v),
        )
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = *self;
        for r in out.rows.iter_mut() {
            for e in r.iter_mut() {
                *e *= s;
            }
        }
        out
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = *self;
        for (r, or) in out.rows.iter_mut().zip(o.rows.iter()) {
            for (e, oe) in r.iter_mut().zip(or.iter()) {
                *e += *oe;
            }
        }
        out
    }

    pub fn sub(&self, o: &Mat3) -> Mat3 {
        self.add(&o.scale(-1.0))
    }

    pub fn det(&self) -> f64 {
        let r = &self.rows;
        r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0])
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0f64, |m, e| m.max(e.abs()))
    }

    /// Frobenius norm, used for gradient envelope scans.
    pub fn frobenius(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .map(|e| e * e)
            .sum::<f64>()
            .sqrt()
    }
}

/// Physical parameters of one particle species.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub label: String,
    /// Rest mass, strictly positive.
    pub mass: f64,
    /// Charge, nonzero.
    pub charge: f64,
    /// Radius of the initial-data support in both position and momentum.
    pub support_radius: f64,
}

impl SpeciesParams {
    pub fn new(label: impl Into<String>, mass: f64, charge: f64, support_radius: f64) -> Result<Self> {
        let params = SpeciesParams {
            label: label.into(),
            mass,
            charge,
            support_radius,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "species `{}`: mass must be positive, got {}",
                self.label, self.mass
            )));
        }
        if !(self.charge.is_finite() && self.charge != 0.0) {
            return Err(Error::InvalidParameter(format!(
                "species `{}`: charge must be nonzero, got {}",
                self.label, self.charge
            )));
        }
        if !(self.support_radius.is_finite() && self.support_radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "species `{}`: support radius must be positive, got {}",
                self.label, self.support_radius
            )));
        }
        Ok(())
    }

    /// Support radius in rescaled momentum, `k / m`.
    pub fn rescaled_support(&self) -> f64 {
        self.support_radius / self.mass
    }

    /// Charge-to-mass ratio, the coupling constant of the rescaled transport
    /// equation.
    pub fn coupling(&self) -> f64 {
        self.charge / self.mass
    }

    /// Rescaled momentum -> physical momentum, `v -> m * v`.
    pub fn rescale_momentum(&self, v: Vec3) -> Vec3 {
        v * self.mass
    }

    /// Physical momentum -> rescaled momentum, `v -> v / m`.
    pub fn unscale_momentum(&self, v: Vec3) -> Vec3 {
        v / self.mass
    }

    /// Species energy `sqrt(m^2 + |v|^2)` of a physical momentum.
    pub fn energy(&self, v: Vec3) -> f64 {
        (self.mass * self.mass + v.norm_sq()).sqrt()
    }

    /// Species velocity `v / sqrt(m^2 + |v|^2)` of a physical momentum.
    pub fn velocity(&self, v: Vec3) -> Vec3 {
        v / self.energy(v)
    }
}

/// Momentum together with its energy and velocity.
#[derive(Clone, Copy, Debug)]
pub struct KinematicPoint {
    /// Momentum.
    pub v: Vec3,
    /// Energy `<v> = sqrt(1 + |v|^2)`, always >= 1.
    pub v0: f64,
    /// Velocity `v / <v>`, always strictly inside the unit ball.
    pub vhat: Vec3,
}

/// Energy of a unit-mass momentum.
pub fn energy(v: Vec3) -> f64 {
    (1.0 + v.norm_sq()).sqrt()
}

/// Velocity of a unit-mass momentum.
pub fn velocity(v: Vec3) -> Vec3 {
    v / energy(v)
}

/// Energy and velocity of a unit-mass momentum, with input validation.
pub fn kinematics(v: Vec3) -> Result<KinematicPoint> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "kinematics",
        });
    }
    let v0 = energy(v);
    Ok(KinematicPoint {
        v,
        v0,
        vhat: v / v0,
    })
}

/// Inverse of the velocity map: the unique momentum whose velocity is `u`.
///
/// `u / sqrt(1 - |u|^2)` is the closed form; it satisfies both round-trip
/// identities with [`velocity`] and is consistent with the Jacobian
/// determinant `<v>^-5` of the forward map.
pub fn momentum_from_velocity(u: Vec3) -> Result<Vec3> {
    if !u.is_finite() {
        return Err(Error::NonFinite {
            context: "momentum_from_velocity",
        });
    }
    let n2 = u.norm_sq();
    if n2 >= 1.0 {
        return Err(Error::OutsideUnitBall { norm: n2.sqrt() });
    }
    Ok(u / (1.0 - n2).sqrt())
}

/// Differential of the velocity map `v -> v / <v>` and its determinant.
///
/// The matrix is `(I - vhat vhat^T) / <v>`; the determinant is exactly
/// `<v>^-5`.
pub fn velocity_jacobian(v: Vec3) -> Result<(Mat3, f64)> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "velocity_jacobian",
        });
    }
    let v0 = energy(v);
    let vhat = v / v0;
    let m = Mat3::identity().sub(&Mat3::outer(vhat, vhat)).scale(1.0 / v0);
    Ok((m, v0.powi(-5)))
}

/// Rescale a momentum into the physical coordinates of `species`.
///
/// The velocities agree: the species velocity of `m * v` equals the unit-mass
/// velocity of `v`.
pub fn species_rescale(species: &SpeciesParams, v: Vec3) -> Vec3 {
    species.rescale_momentum(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_unit(state: &mut u64) -> f64 {
        // xorshift64*, mapped to [0,1); deterministic test sampling
        let mut x = *state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        *state = x;
        (x.wrapping_mul(0x2545F4914F6CDD1D) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn random_vec(state: &mut u64, scale: f64) -> Vec3 {
        Vec3::new(
            (2.0 * lcg_unit(state) - 1.0) * scale,
            (2.0 * lcg_unit(state) - 1.0) * scale,
            (2.0 * lcg_unit(state) - 1.0) * scale,
        )
    }

    #[test]
    fn kinematics_zero_momentum() {
        let k = kinematics(Vec3::ZERO).unwrap();
        assert_eq!(k.v0, 1.0);
        assert_eq!(k.vhat, Vec3::ZERO);
    }

    #[test]
    fn kinematics_forced_value() {
        let k = kinematics(Vec3::new(3f64.sqrt(), 0.0, 0.0)).unwrap();
        assert!((k.v0 - 2.0).abs() < 1e-15);
        assert!((k.vhat.x - 3f64.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn kinematics_identities_random_sweep() {
        let mut state = 0x9E3779B97F4A7C15;
        for _ in 0..100 {
            let v = random_vec(&mut state, 10.0);
            let k = kinematics(v).unwrap();
            assert!(k.vhat.norm() < 1.0);
            let back = k.vhat * k.v0;
            assert!((back - v).max_abs() <= 1e-12 * (1.0 + v.max_abs()));
            // <v>^2 (1 - |vhat|^2) = 1
            let lhs = k.v0 * k.v0 * (1.0 - k.vhat.norm_sq());
            assert!((lhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kinematics_rejects_non_finite() {
        assert!(kinematics(Vec3::new(f64::NAN, 0.0, 0.0)).is_err());
        assert!(kinematics(Vec3::new(f64::INFINITY, 0.0, 0.0)).is_err());
    }

    #[test]
    fn inverse_velocity_known_values() {
        assert_eq!(momentum_from_velocity(Vec3::ZERO).unwrap(), Vec3::ZERO);
        let v = momentum_from_velocity(Vec3::new(0.6, 0.0, 0.0)).unwrap();
        assert!((v.x - 0.75).abs() < 1e-15);
        assert_eq!(v.y, 0.0);
    }

    #[test]
    fn inverse_velocity_rejects_unit_ball_boundary() {
        assert!(momentum_from_velocity(Vec3::new(1.0, 0.0, 0.0)).is_err());
        assert!(momentum_from_velocity(Vec3::new(0.8, 0.8, 0.0)).is_err());
    }

    #[test]
    fn velocity_round_trips() {
        let mut state = 0xDEADBEEFCAFE;
        for _ in 0..100 {
            // |u| <= 0.95
            let mut u = random_vec(&mut state, 1.0);
            if u.norm() > 0.95 {
                u = u.normalized() * 0.95;
            }
            let v = momentum_from_velocity(u).unwrap();
            assert!((velocity(v) - u).max_abs() < 1e-12);
            let w = random_vec(&mut state, 10.0);
            let back = momentum_from_velocity(velocity(w)).unwrap();
            assert!((back - w).max_abs() < 1e-10 * (1.0 + w.max_abs()));
        }
    }

    #[test]
    fn jacobian_zero_momentum_is_identity() {
        let (m, det) = velocity_jacobian(Vec3::ZERO).unwrap();
        assert_eq!(m, Mat3::identity());
        assert_eq!(det, 1.0);
    }

    #[test]
    fn jacobian_determinant_closed_form() {
        // at |v| = 1 the energy is sqrt(2), so the determinant is 2^(-5/2)
        let (_, det) = velocity_jacobian(Vec3::unit_x()).unwrap();
        assert!((det - 2f64.powf(-2.5)).abs() < 1e-15);

        let mut state = 0x12345678;
        for _ in 0..100 {
            let v = random_vec(&mut state, 10.0);
            let (m, det) = velocity_jacobian(v).unwrap();
            assert!((det - energy(v).powi(-5)).abs() < 1e-10);
            assert!((m.det() - det).abs() < 1e-10);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut state = 0xABCDEF;
        let h = 1e-5;
        for _ in 0..50 {
            let v = random_vec(&mut state, 5.0);
            let (m, _) = velocity_jacobian(v).unwrap();
            for j in 0..3 {
                let mut dv = Vec3::ZERO;
                match j {
                    0 => dv.x = h,
                    1 => dv.y = h,
                    _ => dv.z = h,
                }
                let col = (velocity(v + dv) - velocity(v - dv)) / (2.0 * h);
                for i in 0..3 {
                    let analytic = m.rows[i][j];
                    let fd = col.as_array()[i];
                    assert!(
                        (analytic - fd).abs() < 1e-6,
                        "entry ({i},{j}): {analytic} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn species_rescale_examples() {
        let s1 = SpeciesParams::new("a", 1.0, 1.0, 1.0).unwrap();
        assert_eq!(
            species_rescale(&s1, Vec3::new(1.0, 2.0, 3.0)),
            Vec3::new(1.0, 2.0, 3.0)
        );
        let s2 = SpeciesParams::new("b", 2.0, -1.0, 1.0).unwrap();
        assert_eq!(species_rescale(&s2, Vec3::unit_x()), Vec3::new(2.0, 0.0, 0.0));
    }

    #[test]
    fn species_velocity_consistency() {
        let mut state = 0xFEEDFACE;
        for _ in 0..100 {
            let mass = 0.25 + 4.0 * lcg_unit(&mut state);
            let s = SpeciesParams::new("s", mass, 1.0, 1.0).unwrap();
            let v = random_vec(&mut state, 5.0);
            let lhs = s.velocity(species_rescale(&s, v));
            let rhs = velocity(v);
            assert!((lhs - rhs).max_abs() < 1e-14);
        }
    }

    #[test]
    fn species_params_validation() {
        assert!(SpeciesParams::new("bad", 0.0, 1.0, 1.0).is_err());
        assert!(SpeciesParams::new("bad", 1.0, 0.0, 1.0).is_err());
        assert!(SpeciesParams::new("bad", 1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn velocity_is_monotone_along_rays() {
        // lambda -> lambda / <lambda> must be increasing
        let mut prev = 0.0;
        for i in 0..=1000 {
            let lambda = i as f64 * 0.1;
            let s = velocity(Vec3::new(lambda, 0.0, 0.0)).x;
            assert!(s >= prev);
            prev = s;
        }
    }
}
