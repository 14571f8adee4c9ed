//! Phase-space transport along (shifted) characteristics.
//!
//! The dynamics are expressed in comoving coordinates: a state `(X, V)` at
//! time `s` corresponds to the lab-frame phase point `(X + s vhat(V), V)` in
//! rescaled momentum. The transported density is constant along these
//! characteristics, so evaluating it anywhere reduces to integrating the
//! characteristic ODE back to `s = 0` and reading off the initial profile.

mod data;
mod ensemble;

pub use data::{BumpProfile, EmInitialData, InitialData, SpeciesData};
pub use ensemble::{
    build_ensemble, read_ensemble_snapshot, support_diagnostics, write_ensemble_snapshot,
    EnsembleSnapshot, ParticleEnsemble, SpeciesEnsemble, SupportDiagnostics, TimeSlice,
};

use crate::error::{Error, Result};
use crate::fields::FieldEvaluator;
use crate::relkin::{energy, velocity, Vec3};

/// State of one comoving characteristic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CharState {
    /// Comoving position.
    pub x: Vec3,
    /// Rescaled momentum.
    pub v: Vec3,
    /// Time.
    pub s: f64,
}

impl CharState {
    pub fn new(x: Vec3, v: Vec3, s: f64) -> Self {
        CharState { x, v, s }
    }

    /// Lab-frame position `X + s vhat(V)`.
    pub fn lab_position(&self) -> Vec3 {
        self.x + velocity(self.v) * self.s
    }
}

/// Right-hand side of the comoving characteristic ODE.
///
/// With `L = E + vhat x B` evaluated at the lab position, the momentum
/// equation is `dV/ds = (e/m) L` and the comoving position absorbs the
/// secular part: `dX/ds = (s/<V>) (e/m) [vhat (L.vhat) - L]`.
pub fn char_rhs(
    s: f64,
    x: Vec3,
    v: Vec3,
    field: &dyn FieldEvaluator,
    coupling: f64,
) -> (Vec3, Vec3) {
    let v0 = energy(v);
    let vhat = v / v0;
    let lab = x + vhat * s;
    let l = field.lorentz(s, lab, vhat);
    let dv = l * coupling;
    let dx = (vhat * l.dot(vhat) - l) * (coupling * s / v0);
    (dx, dv)
}

// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

const MAX_STEPS: usize = 200_000;

/// A-priori support bounds used to short-circuit density evaluations.
#[derive(Clone, Copy, Debug)]
pub struct SupportEnvelope {
    /// Bound on the rescaled momentum.
    pub momentum_bound: f64,
    /// Constant in the logarithmic comoving-support bound.
    pub log_constant: f64,
    /// Spatial radius of the initial support.
    pub k: f64,
}

impl SupportEnvelope {
    /// Strictly outside the bounds inflated by 1%.
    pub fn outside(&self, t: f64, x: Vec3, v: Vec3) -> bool {
        if v.norm() > self.momentum_bound * 1.01 {
            return true;
        }
        let radius = (self.log_constant * (2.0 + t).ln() + self.k) * 1.01;
        x.norm() > radius
    }
}

/// Transport of one species through a field evaluator.
pub struct CharacteristicFlow<'a> {
    pub field: &'a dyn FieldEvaluator,
    pub species: &'a SpeciesData,
    /// Local error tolerance of the adaptive integrator.
    pub tol: f64,
    /// Optional short-circuit bounds for density evaluations.
    pub envelope: Option<SupportEnvelope>,
}

impl<'a> CharacteristicFlow<'a> {
    pub fn new(field: &'a dyn FieldEvaluator, species: &'a SpeciesData, tol: f64) -> Self {
        CharacteristicFlow {
            field,
            species,
            tol,
            envelope: None,
        }
    }

    pub fn with_envelope(mut self, envelope: SupportEnvelope) -> Self {
        self.envelope = Some(envelope);
        self
    }

    fn rhs(&self, s: f64, x: Vec3, v: Vec3) -> (Vec3, Vec3) {
        char_rhs(s, x, v, self.field, self.species.params.coupling())
    }

    /// Integrate a characteristic from `state.s` to `s_target` (either
    /// direction) with an embedded 5(4) pair and per-step error below `tol`.
    pub fn integrate(&self, state: CharState, s_target: f64) -> Result<CharState> {
        if !(state.s >= 0.0 && s_target >= 0.0) {
            return Err(Error::Precondition(format!(
                "characteristic times must be non-negative, got {} -> {}",
                state.s, s_target
            )));
        }
        let span = s_target - state.s;
        if span == 0.0 {
            return Ok(state);
        }
        let dir = span.signum();
        let mut s = state.s;
        let mut x = state.x;
        let mut v = state.v;
        let mut h = (span.abs() * 1e-2).min(span.abs()).max(1e-8) * dir;
        let tol = self.tol.max(1e-14);

        let mut kx = [Vec3::ZERO; 7];
        let mut kv = [Vec3::ZERO; 7];
        for _step in 0..MAX_STEPS {
            let remaining = s_target - s;
            if remaining == 0.0 || remaining.abs() <= 1e-14 * (1.0 + s.abs()) {
                return Ok(CharState::new(x, v, s_target));
            }
            if h.abs() > remaining.abs() {
                h = remaining;
            }
            if h.abs() < 1e-13 * (1.0 + s.abs()) {
                return Err(Error::StepSizeUnderflow { s, h });
            }
            // characteristics of a non-negative time variable; never step below 0
            if s + h < 0.0 {
                h = -s;
            }

            for i in 0..7 {
                let mut xi = x;
                let mut vi = v;
                for j in 0..i {
                    xi += kx[j] * (DP_A[i][j] * h);
                    vi += kv[j] * (DP_A[i][j] * h);
                }
                let (dx, dv) = self.rhs(s + DP_C[i] * h, xi, vi);
                kx[i] = dx;
                kv[i] = dv;
            }

            let mut x5 = x;
            let mut v5 = v;
            let mut x4 = x;
            let mut v4 = v;
            for i in 0..7 {
                x5 += kx[i] * (DP_B5[i] * h);
                v5 += kv[i] * (DP_B5[i] * h);
                x4 += kx[i] * (DP_B4[i] * h);
                v4 += kv[i] * (DP_B4[i] * h);
            }

            let mut err_norm = 0.0f64;
            for c in 0..3 {
                let ex = (x5.as_array()[c] - x4.as_array()[c]).abs();
                let sx = tol * (1.0 + x.as_array()[c].abs().max(x5.as_array()[c].abs()));
                err_norm = err_norm.max(ex / sx);
                let ev = (v5.as_array()[c] - v4.as_array()[c]).abs();
                let sv = tol * (1.0 + v.as_array()[c].abs().max(v5.as_array()[c].abs()));
                err_norm = err_norm.max(ev / sv);
            }

            if err_norm <= 1.0 {
                s += h;
                x = x5;
                v = v5;
            }
            let scale = if err_norm == 0.0 {
                5.0
            } else {
                (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= scale;
        }
        Err(Error::StepSizeUnderflow { s, h })
    }

    /// Transported comoving density at `(t, x, v)`: integrate back to the
    /// initial time and read the initial profile. Returns 0 without
    /// integrating when `(x, v)` lies outside the a-priori support bounds.
    pub fn comoving_density(&self, t: f64, x: Vec3, v: Vec3) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::Precondition(format!("density queried at t = {t} < 0")));
        }
        if t == 0.0 {
            return Ok(self.species.rescaled_profile(x, v));
        }
        if let Some(env) = &self.envelope {
            if env.outside(t, x, v) {
                return Ok(0.0);
            }
        }
        let foot = self.integrate(CharState::new(x, v, t), 0.0)?;
        Ok(self.species.rescaled_profile(foot.x, foot.v))
    }

    /// Lab-frame density in rescaled momentum, `f(t, x, v)` with
    /// `x` a lab position.
    pub fn lab_density(&self, t: f64, x: Vec3, v: Vec3) -> Result<f64> {
        self.comoving_density(t, x - velocity(v) * t, v)
    }

    /// Central finite-difference gradients of the comoving density, with a
    /// Richardson consistency flag from the doubled step.
    pub fn gradients(&self, t: f64, x: Vec3, v: Vec3) -> Result<FlowGradients> {
        let hx = 1e-4 * x.norm().max(1.0);
        let hv = 1e-4 * v.norm().max(1.0);
        let mut grad_x = Vec3::ZERO;
        let mut grad_v = Vec3::ZERO;
        let mut flagged = false;
        let floor = 1e-7 * (1.0 + self.species.profile.amplitude);
        for c in 0..3 {
            let mut dx = Vec3::ZERO;
            match c {
                0 => dx.x = hx,
                1 => dx.y = hx,
                _ => dx.z = hx,
            }
            let d1 = (self.comoving_density(t, x + dx, v)? - self.comoving_density(t, x - dx, v)?)
                / (2.0 * hx);
            let d2 = (self.comoving_density(t, x + dx * 2.0, v)?
                - self.comoving_density(t, x - dx * 2.0, v)?)
                / (4.0 * hx);
            if (d2 - d1).abs() > 0.5 * d1.abs() + floor {
                flagged = true;
            }
            match c {
                0 => grad_x.x = d1,
                1 => grad_x.y = d1,
                _ => grad_x.z = d1,
            }
        }
        for c in 0..3 {
            let mut dv = Vec3::ZERO;
            match c {
                0 => dv.x = hv,
                1 => dv.y = hv,
                _ => dv.z = hv,
            }
            let d1 = (self.comoving_density(t, x, v + dv)? - self.comoving_density(t, x, v - dv)?)
                / (2.0 * hv);
            let d2 = (self.comoving_density(t, x, v + dv * 2.0)?
                - self.comoving_density(t, x, v - dv * 2.0)?)
                / (4.0 * hv);
            if (d2 - d1).abs() > 0.5 * d1.abs() + floor {
                flagged = true;
            }
            match c {
                0 => grad_v.x = d1,
                1 => grad_v.y = d1,
                _ => grad_v.z = d1,
            }
        }
        Ok(FlowGradients {
            grad_x,
            grad_v,
            richardson_flag: flagged,
        })
    }
}

/// Finite-difference gradients of the comoving density.
#[derive(Clone, Copy, Debug)]
pub struct FlowGradients {
    pub grad_x: Vec3,
    pub grad_v: Vec3,
    /// Set when the step-doubled estimate disagrees by more than 50%.
    pub richardson_flag: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BumpField, ZeroField};
    use crate::relkin::SpeciesParams;

    fn test_species() -> SpeciesData {
        SpeciesData {
            params: SpeciesParams::new("plus", 1.0, 1.0, 1.0).unwrap(),
            profile: BumpProfile::new(1.0, 1.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn zero_field_rhs_vanishes() {
        let field = ZeroField::new(1.0);
        let (dx, dv) = char_rhs(3.0, Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.2, 0.1, 0.0), &field, 1.0);
        assert_eq!(dx, Vec3::ZERO);
        assert_eq!(dv, Vec3::ZERO);
    }

    #[test]
    fn rhs_at_zero_momentum_reduces_to_electric_push() {
        // vhat = 0 kills the projection and the magnetic part:
        // dX = -(s)(e/m) E, dV = (e/m) E
        let field = BumpField::new(0.8, 1.0, Vec3::unit_x()).unwrap();
        let s = 2.0;
        let x = Vec3::new(0.3, 0.1, 0.0);
        let (dx, dv) = char_rhs(s, x, Vec3::ZERO, &field, 1.0);
        let e = field.sample(s, x).e;
        assert!((dv - e).norm() < 1e-15);
        assert!((dx + e * s).norm() < 1e-15);
    }

    #[test]
    fn zero_field_characteristics_are_frozen() {
        let field = ZeroField::new(1.0);
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-10);
        let start = CharState::new(Vec3::new(0.2, -0.1, 0.4), Vec3::new(0.3, 0.0, -0.2), 0.0);
        let end = flow.integrate(start, 57.0).unwrap();
        assert_eq!(end.x, start.x);
        assert_eq!(end.v, start.v);
    }

    #[test]
    fn forward_backward_round_trip() {
        let field = BumpField::new(0.5, 1.0, Vec3::unit_x()).unwrap();
        let sp = test_species();
        let tol = 1e-10;
        let flow = CharacteristicFlow::new(&field, &sp, tol);
        let start = CharState::new(Vec3::new(0.4, 0.2, -0.3), Vec3::new(0.25, -0.1, 0.05), 0.0);
        let fwd = flow.integrate(start, 40.0).unwrap();
        let back = flow.integrate(fwd, 0.0).unwrap();
        assert!((back.x - start.x).max_abs() <= 10.0 * tol * 40.0_f64);
        assert!((back.v - start.v).max_abs() <= 10.0 * tol * 40.0_f64);
    }

    #[test]
    fn halving_tolerance_shrinks_error() {
        let field = BumpField::new(0.8, 1.0, Vec3::new(1.0, 0.5, 0.0)).unwrap();
        let sp = test_species();
        let start = CharState::new(Vec3::new(0.3, 0.0, 0.1), Vec3::new(0.2, 0.2, 0.0), 0.0);
        let reference = CharacteristicFlow::new(&field, &sp, 1e-13)
            .integrate(start, 20.0)
            .unwrap();
        let coarse = CharacteristicFlow::new(&field, &sp, 1e-6)
            .integrate(start, 20.0)
            .unwrap();
        let fine = CharacteristicFlow::new(&field, &sp, 5e-7)
            .integrate(start, 20.0)
            .unwrap();
        let err_coarse = (coarse.x - reference.x).norm() + (coarse.v - reference.v).norm();
        let err_fine = (fine.x - reference.x).norm() + (fine.v - reference.v).norm();
        assert!(
            err_fine * 3.0 <= err_coarse || err_coarse < 1e-12,
            "coarse {err_coarse:.3e} fine {err_fine:.3e}"
        );
    }

    #[test]
    fn lab_and_comoving_positions_are_consistent_along_trajectories() {
        // d/ds of the lab position should equal vhat along solutions
        let field = BumpField::new(0.5, 1.0, Vec3::unit_x()).unwrap();
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-11);
        let start = CharState::new(Vec3::new(0.2, 0.3, 0.0), Vec3::new(0.1, -0.2, 0.3), 0.0);
        let s_mid = 10.0;
        let ds = 1e-3;
        let a = flow.integrate(start, s_mid - ds).unwrap();
        let b = flow.integrate(start, s_mid + ds).unwrap();
        let mid = flow.integrate(start, s_mid).unwrap();
        let fd = (b.lab_position() - a.lab_position()) / (2.0 * ds);
        let vhat = velocity(mid.v);
        assert!((fd - vhat).norm() < 1e-5);
    }

    #[test]
    fn density_at_time_zero_is_the_profile() {
        let field = ZeroField::new(1.0);
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-10);
        let x = Vec3::new(0.3, 0.1, 0.0);
        let v = Vec3::new(0.0, 0.4, 0.0);
        assert_eq!(
            flow.comoving_density(0.0, x, v).unwrap(),
            sp.rescaled_profile(x, v)
        );
    }

    #[test]
    fn zero_field_density_is_frozen_in_comoving_coordinates() {
        let field = ZeroField::new(1.0);
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-10);
        let x = Vec3::new(0.2, -0.3, 0.1);
        let v = Vec3::new(0.1, 0.0, 0.45);
        let f0 = sp.rescaled_profile(x, v);
        for t in [1.0, 10.0, 123.0] {
            let g = flow.comoving_density(t, x, v).unwrap();
            assert!((g - f0).abs() < 1e-12);
        }
    }

    #[test]
    fn density_constant_along_stored_trajectory() {
        let field = BumpField::new(0.5, 1.0, Vec3::unit_x()).unwrap();
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-11);
        let start = CharState::new(Vec3::new(0.3, 0.2, 0.0), Vec3::new(0.2, 0.0, 0.3), 0.0);
        let f0 = sp.rescaled_profile(start.x, start.v);
        assert!(f0 > 0.0);
        for t in [5.0, 25.0, 60.0] {
            let s = flow.integrate(start, t).unwrap();
            let g = flow.comoving_density(t, s.x, s.v).unwrap();
            assert!((g - f0).abs() < 1e-8, "t = {t}: {g} vs {f0}");
        }
    }

    #[test]
    fn envelope_short_circuits_far_points() {
        let field = BumpField::new(0.5, 1.0, Vec3::unit_x()).unwrap();
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-10).with_envelope(SupportEnvelope {
            momentum_bound: 1.2,
            log_constant: 1.0,
            k: 1.0,
        });
        assert_eq!(
            flow.comoving_density(10.0, Vec3::new(50.0, 0.0, 0.0), Vec3::ZERO).unwrap(),
            0.0
        );
        assert_eq!(
            flow.comoving_density(10.0, Vec3::ZERO, Vec3::new(5.0, 0.0, 0.0)).unwrap(),
            0.0
        );
    }

    #[test]
    fn gradients_match_initial_profile_under_zero_field() {
        let field = ZeroField::new(1.0);
        let sp = test_species();
        let flow = CharacteristicFlow::new(&field, &sp, 1e-10);
        let x = Vec3::new(0.2, 0.1, -0.3);
        let v = Vec3::new(0.3, -0.2, 0.1);
        let g = flow.gradients(31.0, x, v).unwrap();
        let exact_x = sp.profile.grad_x(x, v * sp.params.mass);
        // rescaled momentum gradient picks up a factor of the mass
        let exact_v = sp.profile.grad_v(x, v * sp.params.mass) * sp.params.mass;
        assert!((g.grad_x - exact_x).max_abs() < 1e-5);
        assert!((g.grad_v - exact_v).max_abs() < 1e-5);
        assert!(!g.richardson_flag);
    }
}
