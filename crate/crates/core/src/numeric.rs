//! Small numerical building blocks shared across the crate: compensated
//! summation, Gauss-Legendre rules and order-preserving parallel maps.
//!
//! Every routine here is deterministic: node orderings are fixed and parallel
//! work is merged in index order, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::relkin::Vec3;

/// Neumaier compensated accumulator.
///
/// Summation order still matters for bitwise reproducibility; callers must
/// feed terms in a fixed order.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Componentwise compensated accumulator for vectors.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanVec3 {
    x: KahanSum,
    y: KahanSum,
    z: KahanSum,
}

impl KahanVec3 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: Vec3) {
        self.x.add(v.x);
        self.y.add(v.y);
        self.z.add(v.z);
    }

    pub fn add_scaled(&mut self, v: Vec3, s: f64) {
        self.x.add(v.x * s);
        self.y.add(v.y * s);
        self.z.add(v.z * s);
    }

    pub fn value(&self) -> Vec3 {
        Vec3::new(self.x.value(), self.y.value(), self.z.value())
    }
}

/// Compensated sum of a slice in index order.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Compensated vector sum of a slice in index order.
pub fn compensated_sum_vec3(values: &[Vec3]) -> Vec3 {
    let mut acc = KahanVec3::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Parallel map that preserves input order, so downstream reductions are
/// independent of the rayon worker count.
pub fn par_map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Parallel map over an index range, in index order.
pub fn par_map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Nodes are computed by Newton iteration from the Chebyshev initial guess and
/// returned in ascending order. Rules are exact for polynomials of degree
/// 2n - 1; we use them for all smooth one-dimensional integrals.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // Chebyshev guess for the i-th positive root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre recurrence for P_n(x) and P'_n(x).
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (xs, ws) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        xs.iter().map(|x| mid + half * x).collect(),
        ws.iter().map(|w| w * half).collect(),
    )
}

/// Product rule on the unit sphere: Gauss-Legendre in cos(theta) times a
/// uniform (trapezoidal) rule in phi. Weights sum to 4*pi.
pub fn sphere_rule(n_polar: usize, n_azimuth: usize) -> Vec<(Vec3, f64)> {
    let (cts, ws) = gauss_legendre(n_polar);
    let dphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
    let mut out = Vec::with_capacity(n_polar * n_azimuth);
    for (ct, w) in cts.iter().zip(ws.iter()) {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for j in 0..n_azimuth {
            let phi = dphi * j as f64;
            let dir = Vec3::new(st * phi.cos(), st * phi.sin(), *ct);
            out.push((dir, w * dphi));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (xs, ws) = gauss_legendre(6);
        // degree-11 monomial x^10 over [-1,1] = 2/11
        let got: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.powi(10)).sum();
        assert!((got - 2.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_on_interval() {
        let (xs, ws) = gauss_legendre_on(8, 0.0, 2.0);
        let got: f64 = xs.iter().zip(&ws).map(|(x, w)| w * x.exp()).sum();
        assert!((got - (2f64.exp() - 1.0)).abs() < 1e-10);
    }

    #[test]
    fn sphere_rule_weights_sum_to_full_solid_angle() {
        let rule = sphere_rule(8, 16);
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-12);
        // first spherical harmonic integrates to zero
        let m1: f64 = rule.iter().map(|(d, w)| w * d.z).sum();
        assert!(m1.abs() < 1e-13);
    }

    #[test]
    fn compensated_sum_beats_naive_on_cancellation() {
        let mut terms = vec![1.0e16, 1.0, -1.0e16];
        terms.extend(std::iter::repeat(1e-3).take(1000));
        let exact = 2.0;
        assert!((compensated_sum(&terms) - exact).abs() < 1e-12);
    }

    #[test]
    fn par_map_is_order_preserving() {
        let items: Vec<usize> = (0..1000).collect();
        let out = par_map_ordered(&items, |&i| i * 2);
        assert!(out.iter().enumerate().all(|(i, &v)| v == i * 2));
    }
}
