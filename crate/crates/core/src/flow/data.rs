//! Initial data: compactly supported phase-space profiles and optional
//! electromagnetic seed fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::gauss_legendre_on;
use crate::relkin::{Mat3, SpeciesParams, Vec3};

/// Separable C^3 bump `A (1 - |x|^2/kx^2)^4 (1 - |v|^2/kv^2)^4` supported on
/// `{|x| <= kx, |v| <= kv}`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BumpProfile {
    pub amplitude: f64,
    pub x_radius: f64,
    pub v_radius: f64,
}

fn radial_bump(r_sq_over_radius_sq: f64) -> f64 {
    let u = 1.0 - r_sq_over_radius_sq;
    if u <= 0.0 {
        0.0
    } else {
        u * u * u * u
    }
}

/// d/du of `u -> (1-u)^4` composed with `u = r^2 / k^2`, returned as the
/// gradient factor so that `grad = factor * x`.
fn radial_bump_grad_factor(r_sq: f64, radius_sq: f64) -> f64 {
    let u = 1.0 - r_sq / radius_sq;
    if u <= 0.0 {
        0.0
    } else {
        -8.0 * u * u * u / radius_sq
    }
}

impl BumpProfile {
    pub fn new(amplitude: f64, x_radius: f64, v_radius: f64) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "profile amplitude must be non-negative, got {amplitude}"
            )));
        }
        if !(x_radius > 0.0 && v_radius > 0.0) {
            return Err(Error::InvalidParameter(
                "profile support radii must be positive".into(),
            ));
        }
        Ok(BumpProfile {
            amplitude,
            x_radius,
            v_radius,
        })
    }

    /// Density at position `x` and physical momentum `v`.
    pub fn eval(&self, x: Vec3, v: Vec3) -> f64 {
        self.amplitude
            * radial_bump(x.norm_sq() / (self.x_radius * self.x_radius))
            * radial_bump(v.norm_sq() / (self.v_radius * self.v_radius))
    }

    /// Position gradient at fixed momentum.
    pub fn grad_x(&self, x: Vec3, v: Vec3) -> Vec3 {
        let vx = radial_bump_grad_factor(x.norm_sq(), self.x_radius * self.x_radius);
        let fv = radial_bump(v.norm_sq() / (self.v_radius * self.v_radius));
        x * (self.amplitude * vx * fv)
    }

    /// Momentum gradient at fixed position.
    pub fn grad_v(&self, x: Vec3, v: Vec3) -> Vec3 {
        let fx = radial_bump(x.norm_sq() / (self.x_radius * self.x_radius));
        let gv = radial_bump_grad_factor(v.norm_sq(), self.v_radius * self.v_radius);
        v * (self.amplitude * fx * gv)
    }

    /// Exact phase-space integral: the radial moment of `(1-r^2)^4` over the
    /// unit ball is `4 pi * 128/3465`.
    pub fn integral(&self) -> f64 {
        const BALL_MOMENT: f64 = 128.0 / 3465.0;
        let c = 4.0 * std::f64::consts::PI * BALL_MOMENT;
        self.amplitude * c * self.x_radius.powi(3) * c * self.v_radius.powi(3)
    }
}

/// Optional electromagnetic seed. The curl construction keeps both fields
/// divergence free, so pointwise-neutral particle data satisfies the
/// constraint equations with compact support.
#[derive(Clone, Copy, Debug)]
pub enum EmInitialData {
    Zero,
    /// `E0 = a_e curl(psi n_e)`, `B0 = a_b curl(psi n_b)` with
    /// `psi(r) = (1 - r^2/R^2)^4` supported on `|x| <= R`.
    CurlBump {
        e_amplitude: f64,
        b_amplitude: f64,
        radius: f64,
        e_axis: Vec3,
        b_axis: Vec3,
    },
}

fn curl_bump_value(amplitude: f64, radius: f64, axis: Vec3, x: Vec3) -> Vec3 {
    // curl(psi n) = grad(psi) x n = phi(r) (x x n), phi = psi'(r)/r
    let u = 1.0 - x.norm_sq() / (radius * radius);
    if u <= 0.0 {
        return Vec3::ZERO;
    }
    let phi = -8.0 * u * u * u / (radius * radius);
    x.cross(axis) * (amplitude * phi)
}

fn curl_bump_grad(amplitude: f64, radius: f64, axis: Vec3, x: Vec3) -> Mat3 {
    let r2 = radius * radius;
    let u = 1.0 - x.norm_sq() / r2;
    if u <= 0.0 {
        return Mat3::zero();
    }
    let phi = -8.0 * u * u * u / r2;
    // d phi / d(r^2) chain-ruled through u
    let dphi_dr2 = 24.0 * u * u / (r2 * r2);
    let xn = x.cross(axis);
    let mut m = Mat3::outer(xn, x).scale(2.0 * dphi_dr2);
    // plus phi * d(x x n)_i / d x_j = phi * (e_j x n)_i
    for j in 0..3 {
        let ej = match j {
            0 => Vec3::unit_x(),
            1 => Vec3::unit_y(),
            _ => Vec3::unit_z(),
        };
        let col = ej.cross(axis);
        m.rows[0][j] += phi * col.x;
        m.rows[1][j] += phi * col.y;
        m.rows[2][j] += phi * col.z;
    }
    m.scale(amplitude)
}

fn curl_from_grad(g: &Mat3) -> Vec3 {
    Vec3::new(
        g.rows[2][1] - g.rows[1][2],
        g.rows[0][2] - g.rows[2][0],
        g.rows[1][0] - g.rows[0][1],
    )
}

impl EmInitialData {
    pub fn e0(&self, x: Vec3) -> Vec3 {
        match self {
            EmInitialData::Zero => Vec3::ZERO,
            EmInitialData::CurlBump {
                e_amplitude,
                radius,
                e_axis,
                ..
            } => curl_bump_value(*e_amplitude, *radius, *e_axis, x),
        }
    }

    pub fn b0(&self, x: Vec3) -> Vec3 {
        match self {
            EmInitialData::Zero => Vec3::ZERO,
            EmInitialData::CurlBump {
                b_amplitude,
                radius,
                b_axis,
                ..
            } => curl_bump_value(*b_amplitude, *radius, *b_axis, x),
        }
    }

    pub fn grad_e0(&self, x: Vec3) -> Mat3 {
        match self {
            EmInitialData::Zero => Mat3::zero(),
            EmInitialData::CurlBump {
                e_amplitude,
                radius,
                e_axis,
                ..
            } => curl_bump_grad(*e_amplitude, *radius, *e_axis, x),
        }
    }

    pub fn grad_b0(&self, x: Vec3) -> Mat3 {
        match self {
            EmInitialData::Zero => Mat3::zero(),
            EmInitialData::CurlBump {
                b_amplitude,
                radius,
                b_axis,
                ..
            } => curl_bump_grad(*b_amplitude, *radius, *b_axis, x),
        }
    }

    pub fn curl_e0(&self, x: Vec3) -> Vec3 {
        curl_from_grad(&self.grad_e0(x))
    }

    pub fn curl_b0(&self, x: Vec3) -> Vec3 {
        curl_from_grad(&self.grad_b0(x))
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, EmInitialData::Zero)
    }
}

/// One species with its initial profile.
#[derive(Clone, Debug)]
pub struct SpeciesData {
    pub params: SpeciesParams,
    pub profile: BumpProfile,
}

impl SpeciesData {
    /// Initial profile in rescaled momentum coordinates,
    /// `f0(x, m * u)`.
    pub fn rescaled_profile(&self, x: Vec3, u: Vec3) -> f64 {
        self.profile.eval(x, u * self.params.mass)
    }
}

/// Full initial data set for a run.
#[derive(Clone, Debug)]
pub struct InitialData {
    pub species: Vec<SpeciesData>,
    pub em: EmInitialData,
}

impl InitialData {
    /// Two species with opposite unit charges and identical profiles: the
    /// charge density vanishes pointwise, so zero seed fields satisfy the
    /// constraint equations.
    pub fn neutral_pair(mass: f64, support_radius: f64, peak: f64) -> Result<Self> {
        let profile = BumpProfile::new(peak, support_radius, support_radius)?;
        Ok(InitialData {
            species: vec![
                SpeciesData {
                    params: SpeciesParams::new("plus", mass, 1.0, support_radius)?,
                    profile,
                },
                SpeciesData {
                    params: SpeciesParams::new("minus", mass, -1.0, support_radius)?,
                    profile,
                },
            ],
            em: EmInitialData::Zero,
        })
    }

    /// Signed total charge `sum_a e_a integral(f_a0)` by quadrature, for the
    /// neutrality check.
    pub fn total_charge_quadrature(&self, n: usize) -> f64 {
        let mut total = 0.0;
        for sp in &self.species {
            let k = sp.profile.x_radius;
            let kv = sp.profile.v_radius;
            let (xs, wx) = gauss_legendre_on(n, -k, k);
            let (vs, wv) = gauss_legendre_on(n, -kv, kv);
            // separable: integrate each 3D factor as a product rule
            let mut ix = 0.0;
            for (a, wa) in xs.iter().zip(&wx) {
                for (b, wb) in xs.iter().zip(&wx) {
                    for (c, wc) in xs.iter().zip(&wx) {
                        let r2 = a * a + b * b + c * c;
                        ix += wa * wb * wc * radial_bump(r2 / (k * k));
                    }
                }
            }
            let mut iv = 0.0;
            for (a, wa) in vs.iter().zip(&wv) {
                for (b, wb) in vs.iter().zip(&wv) {
                    for (c, wc) in vs.iter().zip(&wv) {
                        let r2 = a * a + b * b + c * c;
                        iv += wa * wb * wc * radial_bump(r2 / (kv * kv));
                    }
                }
            }
            total += sp.params.charge * sp.profile.amplitude * ix * iv;
        }
        total
    }

    /// Validate support, non-negativity parameters and approximate neutrality.
    pub fn validate(&self, neutrality_tol: f64) -> Result<()> {
        if self.species.is_empty() {
            return Err(Error::InvalidParameter("no species defined".into()));
        }
        for sp in &self.species {
            sp.params.validate()?;
        }
        let q = self.total_charge_quadrature(16);
        let scale: f64 = self
            .species
            .iter()
            .map(|s| s.params.charge.abs() * s.profile.integral())
            .sum::<f64>()
            .max(f64::MIN_POSITIVE);
        if q.abs() / scale > neutrality_tol {
            return Err(Error::InvalidParameter(format!(
                "initial data is not neutral: total charge {q:.3e} (relative {:.3e})",
                q.abs() / scale
            )));
        }
        Ok(())
    }

    /// Largest spatial support radius over species.
    pub fn max_x_radius(&self) -> f64 {
        self.species
            .iter()
            .map(|s| s.profile.x_radius)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bump_profile_support_and_positivity() {
        let p = BumpProfile::new(2.0, 1.0, 1.0).unwrap();
        assert_eq!(p.eval(Vec3::new(1.1, 0.0, 0.0), Vec3::ZERO), 0.0);
        assert_eq!(p.eval(Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0)), 0.0);
        assert!(p.eval(Vec3::ZERO, Vec3::ZERO) == 2.0);
        assert!(p.eval(Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.0, 0.3, 0.0)) > 0.0);
    }

    #[test]
    fn bump_profile_gradients_match_finite_differences() {
        let p = BumpProfile::new(1.5, 1.0, 0.8).unwrap();
        let x = Vec3::new(0.3, -0.2, 0.1);
        let v = Vec3::new(0.1, 0.2, -0.3);
        let h = 1e-6;
        let gx = p.grad_x(x, v);
        let gv = p.grad_v(x, v);
        for j in 0..3 {
            let mut d = Vec3::ZERO;
            match j {
                0 => d.x = h,
                1 => d.y = h,
                _ => d.z = h,
            }
            let fdx = (p.eval(x + d, v) - p.eval(x - d, v)) / (2.0 * h);
            let fdv = (p.eval(x, v + d) - p.eval(x, v - d)) / (2.0 * h);
            assert!((gx.as_array()[j] - fdx).abs() < 1e-8);
            assert!((gv.as_array()[j] - fdv).abs() < 1e-8);
        }
    }

    #[test]
    fn profile_integral_matches_quadrature() {
        let p = BumpProfile::new(1.3, 1.0, 0.7).unwrap();
        let data = InitialData {
            species: vec![SpeciesData {
                params: SpeciesParams::new("s", 1.0, 1.0, 1.0).unwrap(),
                profile: p,
            }],
            em: EmInitialData::Zero,
        };
        let q = data.total_charge_quadrature(24);
        assert!((q - p.integral()).abs() < 1e-8 * p.integral());
    }

    #[test]
    fn neutral_pair_has_zero_charge() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        data.validate(1e-8).unwrap();
        assert!(data.total_charge_quadrature(12).abs() < 1e-14);
    }

    #[test]
    fn curl_bump_fields_are_divergence_free_and_supported() {
        let em = EmInitialData::CurlBump {
            e_amplitude: 0.5,
            b_amplitude: 0.25,
            radius: 1.0,
            e_axis: Vec3::unit_z(),
            b_axis: Vec3::unit_x(),
        };
        assert_eq!(em.e0(Vec3::new(1.2, 0.0, 0.0)), Vec3::ZERO);
        let x = Vec3::new(0.3, 0.2, -0.4);
        let g = em.grad_e0(x);
        let div = g.rows[0][0] + g.rows[1][1] + g.rows[2][2];
        assert!(div.abs() < 1e-12);
        // gradient vs finite differences
        let h = 1e-6;
        for j in 0..3 {
            let mut d = Vec3::ZERO;
            match j {
                0 => d.x = h,
                1 => d.y = h,
                _ => d.z = h,
            }
            let fd = (em.e0(x + d) - em.e0(x - d)) / (2.0 * h);
            for i in 0..3 {
                assert!((g.rows[i][j] - fd.as_array()[i]).abs() < 1e-7);
            }
        }
    }
}
