//! Closed-form field presets with analytic gradients.
//!
//! The `bump` preset is a radially cut-off field
//! `E(t,x) = A chi(|x|/(t+k)) d / ((t+|x|+2k)(t-|x|+2k))` with the magnetic
//! part along an orthogonal direction. Because
//! `(t+|x|+2k)(t-|x|+2k) = (t+2k)^2 - |x|^2`, the profile is smooth away from
//! the cutoff shell and vanishes outside the light cone `|x| <= t + k`.

use crate::error::{Error, Result};
use crate::relkin::{Mat3, Vec3};

use super::{DecayBudget, FieldEvaluator, FieldGradSample, FieldSample, ZeroField};

/// C^1 cutoff: 1 on [0, 1/2], 0 on [1, inf), cubic blend in between.
pub fn cutoff(r: f64) -> f64 {
    if r <= 0.5 {
        1.0
    } else if r >= 1.0 {
        0.0
    } else {
        let s = 2.0 * r - 1.0;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// Derivative of [`cutoff`]. Bounded by 3 in absolute value.
pub fn cutoff_deriv(r: f64) -> f64 {
    if r <= 0.5 || r >= 1.0 {
        0.0
    } else {
        let s = 2.0 * r - 1.0;
        -12.0 * s * (1.0 - s)
    }
}

/// Preset selector for [`prescribed_field`].
#[derive(Clone, Debug)]
pub enum FieldPreset {
    Zero { k: f64 },
    Bump { amplitude: f64, k: f64, direction: Vec3 },
}

impl FieldPreset {
    pub fn parse(name: &str, amplitude: f64, k: f64, direction: Vec3) -> Result<Self> {
        match name {
            "zero" => Ok(FieldPreset::Zero { k }),
            "bump" => Ok(FieldPreset::Bump {
                amplitude,
                k,
                direction,
            }),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

/// Build the evaluator for a preset and sample it once. Kept as a thin
/// convenience over the preset constructors; long-lived callers should build
/// the evaluator themselves.
pub fn prescribed_field(preset: &FieldPreset, t: f64, x: Vec3) -> Result<(FieldSample, FieldGradSample)> {
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!("field preset queried at t = {t} < 0")));
    }
    match preset {
        FieldPreset::Zero { k } => {
            let f = ZeroField::new(*k);
            Ok(f.sample_with_grad(t, x))
        }
        FieldPreset::Bump {
            amplitude,
            k,
            direction,
        } => {
            let f = BumpField::new(*amplitude, *k, *direction)?;
            Ok(f.sample_with_grad(t, x))
        }
    }
}

/// The `bump` preset evaluator.
#[derive(Clone, Debug)]
pub struct BumpField {
    amplitude: f64,
    k: f64,
    dir_e: Vec3,
    dir_b: Vec3,
    budget: DecayBudget,
}

impl BumpField {
    pub fn new(amplitude: f64, k: f64, direction: Vec3) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "bump amplitude must be positive, got {amplitude}"
            )));
        }
        if !(k.is_finite() && k > 0.5) {
            return Err(Error::InvalidParameter(format!(
                "bump support radius must exceed 1/2 so the gradient envelope is positive, got {k}"
            )));
        }
        let dir_e = direction.normalized();
        if dir_e == Vec3::ZERO {
            return Err(Error::InvalidParameter(
                "bump direction must be nonzero".into(),
            ));
        }
        let dir_b = orthogonal_unit(dir_e);
        // Margin by which the attached budget exceeds the amplitude so the
        // gradient envelope holds; scanned from the closed form.
        let margin = hypothesis_margin(amplitude, k, dir_e, dir_b);
        let budget = DecayBudget::new(amplitude * margin, k)?;
        Ok(BumpField {
            amplitude,
            k,
            dir_e,
            dir_b,
            budget,
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    fn scalar(&self, t: f64, x: Vec3) -> f64 {
        let r = x.norm();
        if r >= t + self.k {
            return 0.0;
        }
        let denom = (t + 2.0 * self.k).powi(2) - r * r;
        self.amplitude * cutoff(r / (t + self.k)) / denom
    }

    /// Gradient of the scalar profile; smooth everywhere including x = 0.
    fn scalar_grad(&self, t: f64, x: Vec3) -> Vec3 {
        let r = x.norm();
        if r >= t + self.k {
            return Vec3::ZERO;
        }
        let g = (t + 2.0 * self.k).powi(2) - r * r;
        let chi = cutoff(r / (t + self.k));
        let dchi = cutoff_deriv(r / (t + self.k));
        let radial = if r > 0.0 { x / r } else { Vec3::ZERO };
        radial * (self.amplitude * dchi / ((t + self.k) * g)) + x * (self.amplitude * chi * 2.0 / (g * g))
    }

    /// Exact limit of `t^2 (E, B)(t, x + t vhat)` along rays with bounded
    /// comoving offset `x`, as a function of the ray velocity.
    pub fn ray_limit(&self, vhat: Vec3) -> (Vec3, Vec3) {
        let s = vhat.norm();
        if s >= 1.0 {
            return (Vec3::ZERO, Vec3::ZERO);
        }
        let scale = self.amplitude * cutoff(s) / ((1.0 + s) * (1.0 - s));
        (self.dir_e * scale, self.dir_b * scale)
    }
}

impl FieldEvaluator for BumpField {
    fn sample(&self, t: f64, x: Vec3) -> FieldSample {
        let s = self.scalar(t, x);
        FieldSample::new(self.dir_e * s, self.dir_b * s)
    }

    fn sample_with_grad(&self, t: f64, x: Vec3) -> (FieldSample, FieldGradSample) {
        let s = self.scalar(t, x);
        let gs = self.scalar_grad(t, x);
        (
            FieldSample::new(self.dir_e * s, self.dir_b * s),
            FieldGradSample {
                de: Mat3::outer(self.dir_e, gs),
                db: Mat3::outer(self.dir_b, gs),
            },
        )
    }

    fn budget(&self) -> DecayBudget {
        self.budget
    }
}

/// Deterministic unit vector orthogonal to `d`.
fn orthogonal_unit(d: Vec3) -> Vec3 {
    let pick = if d.x.abs() <= d.y.abs() && d.x.abs() <= d.z.abs() {
        Vec3::unit_x()
    } else if d.y.abs() <= d.z.abs() {
        Vec3::unit_y()
    } else {
        Vec3::unit_z()
    };
    (pick - d * pick.dot(d)).normalized()
}

/// Scan the closed-form value and gradient ratios of the bump against the
/// decay envelopes, returning a slightly padded maximum. The attached budget
/// is the amplitude times this margin, so the preset audits clean against
/// itself while any uniform scaling by 2 or more fails the audit.
fn hypothesis_margin(amplitude: f64, k: f64, dir_e: Vec3, dir_b: Vec3) -> f64 {
    let probe = BumpField {
        amplitude,
        k,
        dir_e,
        dir_b,
        budget: DecayBudget { c0: amplitude, k },
    };
    let unit_budget = DecayBudget { c0: amplitude, k };
    let mut worst = 1.0f64;
    // Ratios decay in t; log-spaced times cover the transient.
    for it in 0..=120 {
        let t = if it == 0 {
            0.0
        } else {
            (10.0 * k + 1.0) * ((it as f64 / 120.0) * 4.0).exp_m1() / (4.0f64.exp_m1()) * 20.0
        };
        let rmax = t + k;
        for ir in 0..=160 {
            let r = rmax * ir as f64 / 160.0;
            let x = Vec3::new(r, 0.0, 0.0);
            let (s, g) = probe.sample_with_grad(t, x);
            let vb = unit_budget.value_bound(t, x);
            let gb = unit_budget.gradient_bound(t, x);
            worst = worst.max(s.magnitude() / vb).max(g.magnitude() / gb);
        }
    }
    worst * 1.05
}
