//! Audit of a field evaluator against its decay budget.

use crate::relkin::Vec3;

use super::{FieldEvaluator, FieldSample};

/// Deterministic space-time audit grid covering `t in [0, t_max]`,
/// `|x| <= t + k` per time slice.
#[derive(Clone, Debug)]
pub struct AuditGrid {
    pub points: Vec<(f64, Vec3)>,
}

impl AuditGrid {
    /// Log-spaced times, radial shells per time, and a fixed direction fan.
    pub fn standard(t_max: f64, k: f64, n_times: usize, n_radial: usize, n_dirs: usize) -> Self {
        let mut dirs = Vec::with_capacity(n_dirs);
        // golden-angle spiral on the sphere, fixed ordering
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for i in 0..n_dirs {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n_dirs as f64;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            dirs.push(Vec3::new(rho * phi.cos(), rho * phi.sin(), z));
        }
        let mut points = Vec::new();
        for it in 0..n_times {
            let frac = it as f64 / (n_times.max(2) - 1) as f64;
            let t = ((1.0 + t_max).powf(frac) - 1.0).max(0.0);
            let rmax = t + k;
            for ir in 0..n_radial {
                let r = rmax * (ir as f64 + 0.5) / n_radial as f64;
                for d in &dirs {
                    points.push((t, *d * r));
                }
            }
            points.push((t, Vec3::ZERO));
        }
        AuditGrid { points }
    }
}

/// Result of [`verify_hypothesis`]. Ratios are maxima of the measured field
/// against the budget envelopes; both must stay at or below 1 to pass.
#[derive(Clone, Copy, Debug)]
pub struct HypothesisReport {
    pub max_ratio_value: f64,
    pub max_ratio_grad: f64,
    pub pass: bool,
}

/// Scan the evaluator over the grid and compare against its decay budget.
pub fn verify_hypothesis<F: FieldEvaluator + ?Sized>(field: &F, grid: &AuditGrid) -> HypothesisReport {
    let budget = field.budget();
    let mut max_value = 0.0f64;
    let mut max_grad = 0.0f64;
    for &(t, x) in &grid.points {
        let (s, g) = field.sample_with_grad(t, x);
        max_value = max_value.max(s.magnitude() / budget.value_bound(t, x));
        max_grad = max_grad.max(g.magnitude() / budget.gradient_bound(t, x));
    }
    HypothesisReport {
        max_ratio_value: max_value,
        max_ratio_grad: max_grad,
        pass: max_value <= 1.0 && max_grad <= 1.0,
    }
}

/// Maximum relative disagreement between the analytic gradient and central
/// finite differences of the sampled values, over the given points.
pub fn audit_gradient_consistency<F: FieldEvaluator + ?Sized>(
    field: &F,
    points: &[(f64, Vec3)],
    step: f64,
) -> f64 {
    let mut worst = 0.0f64;
    for &(t, x) in points {
        let (_, g) = field.sample_with_grad(t, x);
        let scale = 1.0 + g.de.max_abs().max(g.db.max_abs());
        for j in 0..3 {
            let mut dx = Vec3::ZERO;
            match j {
                0 => dx.x = step,
                1 => dx.y = step,
                _ => dx.z = step,
            }
            let sp: FieldSample = field.sample(t, x + dx);
            let sm: FieldSample = field.sample(t, x - dx);
            let fd_e = (sp.e - sm.e) / (2.0 * step);
            let fd_b = (sp.b - sm.b) / (2.0 * step);
            for i in 0..3 {
                worst = worst.max((g.de.rows[i][j] - fd_e.as_array()[i]).abs() / scale);
                worst = worst.max((g.db.rows[i][j] - fd_b.as_array()[i]).abs() / scale);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BumpField, ScaledField, ZeroField};

    #[test]
    fn zero_field_passes_with_zero_ratios() {
        let f = ZeroField::new(1.0);
        let grid = AuditGrid::standard(50.0, 1.0, 8, 6, 8);
        let report = verify_hypothesis(&f, &grid);
        assert_eq!(report.max_ratio_value, 0.0);
        assert_eq!(report.max_ratio_grad, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn bump_passes_against_its_own_budget() {
        let f = BumpField::new(1.0, 1.0, Vec3::unit_x()).unwrap();
        let grid = AuditGrid::standard(100.0, 1.0, 24, 20, 20);
        let report = verify_hypothesis(&f, &grid);
        assert!(report.pass, "value {} grad {}", report.max_ratio_value, report.max_ratio_grad);
        assert!(report.max_ratio_value <= 1.0);
    }

    #[test]
    fn doubled_bump_fails_the_original_budget() {
        let f = BumpField::new(1.0, 1.0, Vec3::unit_x()).unwrap();
        let doubled = ScaledField {
            inner: &f,
            factor: 2.0,
        };
        let grid = AuditGrid::standard(100.0, 1.0, 24, 20, 20);
        let report = verify_hypothesis(&doubled, &grid);
        assert!(!report.pass);
    }

    #[test]
    fn bump_gradients_are_consistent() {
        let f = BumpField::new(0.5, 1.0, Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let points: Vec<(f64, Vec3)> = vec![
            (0.0, Vec3::new(0.2, 0.1, 0.0)),
            (3.0, Vec3::new(1.0, -2.0, 0.5)),
            (20.0, Vec3::new(5.0, 5.0, 5.0)),
        ];
        assert!(audit_gradient_consistency(&f, &points, 1e-6) < 1e-6);
    }
}
