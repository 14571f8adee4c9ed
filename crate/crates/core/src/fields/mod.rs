//! Electromagnetic field evaluation.
//!
//! A [`FieldEvaluator`] maps `(t, x)` to field values and spatial gradients
//! and carries a decay budget `(C0, k)` bounding it by
//! `C0 / ((t+|x|+2k)(t-|x|+2k))`, with the gradient bounded by the same
//! expression times `log(t+|x|+2k) / (t-|x|+2k)`. Prescribed analytic
//! presets, the budget audit, the retarded-integral decomposition of the
//! field into transport, source and data pieces, and the self-consistent
//! fixed-point solver live in the submodules.

mod hypothesis;
mod picard;
mod prescribed;
mod retarded;

pub use hypothesis::{audit_gradient_consistency, verify_hypothesis, AuditGrid, HypothesisReport};
pub use picard::{
    read_field_snapshot, self_consistent_solve, write_field_snapshot, PicardConfig, PicardOutcome,
    TabulatedField,
};
pub use prescribed::{cutoff, cutoff_deriv, prescribed_field, BumpField, FieldPreset};
pub use retarded::{
    eval_b_data, eval_b_s, eval_b_t, eval_e_data, eval_e_s, eval_e_t, AnalyticBlobSource,
    EnsembleSource, FreeStreamingSource, RetardedQuadConfig, RetardedSource, WeightedMomentum,
};

use crate::error::{Error, Result};
use crate::relkin::{Mat3, Vec3};

/// Electric and magnetic field at one space-time point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldSample {
    pub e: Vec3,
    pub b: Vec3,
}

impl FieldSample {
    pub const ZERO: FieldSample = FieldSample {
        e: Vec3::ZERO,
        b: Vec3::ZERO,
    };

    pub fn new(e: Vec3, b: Vec3) -> Self {
        FieldSample { e, b }
    }

    pub fn magnitude(&self) -> f64 {
        (self.e.norm_sq() + self.b.norm_sq()).sqrt()
    }
}

/// Spatial gradients of the field: `de.rows[i][j] = d E_i / d x_j`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldGradSample {
    pub de: Mat3,
    pub db: Mat3,
}

impl FieldGradSample {
    pub const ZERO: FieldGradSample = FieldGradSample {
        de: Mat3 {
            rows: [[0.0; 3]; 3],
        },
        db: Mat3 {
            rows: [[0.0; 3]; 3],
        },
    };

    pub fn magnitude(&self) -> f64 {
        (self.de.frobenius().powi(2) + self.db.frobenius().powi(2)).sqrt()
    }
}

/// Decay constants `(C0, k)` attached to a field evaluator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayBudget {
    pub c0: f64,
    pub k: f64,
}

impl DecayBudget {
    pub fn new(c0: f64, k: f64) -> Result<Self> {
        if !(c0.is_finite() && c0 > 0.0 && k.is_finite() && k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "decay budget must have positive constants, got c0 = {c0}, k = {k}"
            )));
        }
        Ok(DecayBudget { c0, k })
    }

    /// Value envelope `C0 / ((t+|x|+2k)(t-|x|+2k))`.
    pub fn value_bound(&self, t: f64, x: Vec3) -> f64 {
        let r = x.norm();
        self.c0 / ((t + r + 2.0 * self.k) * (t - r + 2.0 * self.k))
    }

    /// Gradient envelope `C0 log(t+|x|+2k) / ((t+|x|+2k)(t-|x|+2k)^2)`, with
    /// the logarithm floored at `log(2k)` so the ratio stays well defined
    /// near `t = |x| = 0`.
    pub fn gradient_bound(&self, t: f64, x: Vec3) -> f64 {
        let r = x.norm();
        let p = t + r + 2.0 * self.k;
        let q = t - r + 2.0 * self.k;
        let log_term = p.ln().max((2.0 * self.k).ln()).max(f64::EPSILON);
        self.c0 * log_term / (p * q * q)
    }
}

/// Deterministic field contract: values, gradients, a decay budget, and the
/// light-cone support predicate `|x| <= t + k`.
pub trait FieldEvaluator: Sync + Send {
    fn sample(&self, t: f64, x: Vec3) -> FieldSample;

    fn sample_with_grad(&self, t: f64, x: Vec3) -> (FieldSample, FieldGradSample);

    fn budget(&self) -> DecayBudget;

    /// Whether `(t, x)` may lie inside the field support.
    fn supported(&self, t: f64, x: Vec3) -> bool {
        x.norm() <= t + self.budget().k
    }

    /// Lorentz force `E + vhat x B` felt by a particle with velocity `vhat`.
    fn lorentz(&self, t: f64, x: Vec3, vhat: Vec3) -> Vec3 {
        let s = self.sample(t, x);
        s.e + vhat.cross(s.b)
    }
}

/// The identically-zero field.
#[derive(Clone, Copy, Debug)]
pub struct ZeroField {
    budget: DecayBudget,
}

impl ZeroField {
    pub fn new(k: f64) -> Self {
        ZeroField {
            budget: DecayBudget { c0: 1.0, k },
        }
    }
}

impl FieldEvaluator for ZeroField {
    fn sample(&self, _t: f64, _x: Vec3) -> FieldSample {
        FieldSample::ZERO
    }

    fn sample_with_grad(&self, _t: f64, _x: Vec3) -> (FieldSample, FieldGradSample) {
        (FieldSample::ZERO, FieldGradSample::ZERO)
    }

    fn budget(&self) -> DecayBudget {
        self.budget
    }

    fn lorentz(&self, _t: f64, _x: Vec3, _vhat: Vec3) -> Vec3 {
        Vec3::ZERO
    }
}

/// Wrapper scaling another evaluator while keeping its budget. Exists so the
/// budget audit can be exercised against deliberately violating fields.
pub struct ScaledField<'a, F: FieldEvaluator + ?Sized> {
    pub inner: &'a F,
    pub factor: f64,
}

impl<'a, F: FieldEvaluator + ?Sized> FieldEvaluator for ScaledField<'a, F> {
    fn sample(&self, t: f64, x: Vec3) -> FieldSample {
        let s = self.inner.sample(t, x);
        FieldSample::new(s.e * self.factor, s.b * self.factor)
    }

    fn sample_with_grad(&self, t: f64, x: Vec3) -> (FieldSample, FieldGradSample) {
        let (s, g) = self.inner.sample_with_grad(t, x);
        (
            FieldSample::new(s.e * self.factor, s.b * self.factor),
            FieldGradSample {
                de: g.de.scale(self.factor),
                db: g.db.scale(self.factor),
            },
        )
    }

    fn budget(&self) -> DecayBudget {
        self.inner.budget()
    }
}
