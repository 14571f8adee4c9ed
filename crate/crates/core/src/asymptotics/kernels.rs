//! Kernel quadrature for the asymptotic field profiles.
//!
//! For one species with charge profile `q` supported in `|u| <= beta`, the
//! asymptotic electric profile at momentum `v` is
//!
//! ```text
//! E(v) = - int_{|y|<=1, |y+vh| < 1-|y|}
//!            [<.>^5 W(y/|y|, .) q]( inv_velocity((y+vh)/(1-|y|)) )
//!            (1-|y|)^-3 dy/|y|^2
//! ```
//!
//! with `W(w, u) = (w + uh) / (<u>^2 (1 + uh.w)^2)`; the magnetic profile
//! replaces `w + uh` by `w x uh`. In spherical coordinates `y = r w` the
//! `1/|y|^2` factor cancels, and the support restricts the radius to
//! `r <= (|vh| + beta_hat)/(1 + beta_hat)`, which keeps `1 - r` bounded away
//! from zero.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre_on, sphere_rule, KahanVec3};
use crate::relkin::{velocity, Vec3};

/// Quadrature settings for the kernel integrals.
#[derive(Clone, Copy, Debug)]
pub struct KernelQuadConfig {
    pub n_radial: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    pub refine_levels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for KernelQuadConfig {
    fn default() -> Self {
        KernelQuadConfig {
            n_radial: 48,
            n_polar: 12,
            n_azimuth: 24,
            refine_levels: 2,
            rel_tol: 1e-4,
            abs_tol: 1e-10,
        }
    }
}

/// Single-species profile pair `(E, B)` plus the count of quadrature nodes
/// whose momentum argument left the open unit velocity ball.
#[derive(Clone, Copy, Debug, Default)]
pub struct KernelProfile {
    pub e: Vec3,
    pub b: Vec3,
    pub outside_nodes: usize,
}

fn kernel_pass<Q>(q: &Q, beta_hat: f64, v: Vec3, n_radial: usize, n_polar: usize, n_azimuth: usize) -> KernelProfile
where
    Q: Fn(Vec3) -> f64,
{
    let vh = velocity(v);
    let r_max = (vh.norm() + beta_hat) / (1.0 + beta_hat);
    if r_max <= 0.0 {
        return KernelProfile::default();
    }
    let (rs, rw) = gauss_legendre_on(n_radial, 0.0, r_max);
    let angular = sphere_rule(n_polar, n_azimuth);
    let mut acc_e = KahanVec3::new();
    let mut acc_b = KahanVec3::new();
    let mut outside = 0usize;
    for (r, wr) in rs.iter().zip(&rw) {
        let shrink = 1.0 - r;
        debug_assert!(shrink >= (1.0 - vh.norm()) / (1.0 + beta_hat) - 1e-12);
        let inv_shrink3 = 1.0 / (shrink * shrink * shrink);
        for &(omega, wo) in &angular {
            // velocity argument of the profile
            let arg = (omega * *r + vh) / shrink;
            let n2 = arg.norm_sq();
            if n2 >= 1.0 {
                outside += 1;
                continue;
            }
            let gamma = 1.0 / (1.0 - n2).sqrt();
            let qv = q(arg * gamma);
            if qv == 0.0 {
                continue;
            }
            // <u>^5 W(omega, u) = <u>^3 (omega + arg) / (1 + arg.omega)^2
            let denom = 1.0 + arg.dot(omega);
            let scale = -(gamma * gamma * gamma) * qv * inv_shrink3 * wr * wo / (denom * denom);
            acc_e.add_scaled(omega + arg, scale);
            acc_b.add_scaled(omega.cross(arg), scale);
        }
    }
    KernelProfile {
        e: acc_e.value(),
        b: acc_b.value(),
        outside_nodes: outside,
    }
}

/// Asymptotic field profiles of a single species from its charge profile
/// `q` (rescaled momentum, zero outside its support ball of radius `beta`).
pub fn asymptotic_fields_single<Q>(
    q: &Q,
    beta: f64,
    v: Vec3,
    cfg: &KernelQuadConfig,
) -> Result<KernelProfile>
where
    Q: Fn(Vec3) -> f64,
{
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "asymptotic_fields",
        });
    }
    let beta_hat = beta / (1.0 + beta * beta).sqrt();
    let mut prev = kernel_pass(q, beta_hat, v, cfg.n_radial, cfg.n_polar, cfg.n_azimuth);
    if cfg.refine_levels == 0 {
        return Ok(prev);
    }
    let mut nr = cfg.n_radial;
    let mut np = cfg.n_polar;
    let mut na = cfg.n_azimuth;
    for level in 1..=cfg.refine_levels {
        nr = nr * 3 / 2 + 1;
        np = np * 3 / 2 + 1;
        na = na * 3 / 2 + 1;
        let next = kernel_pass(q, beta_hat, v, nr, np, na);
        let delta = (next.e - prev.e).norm() + (next.b - prev.b).norm();
        let scale = (next.e.norm() + next.b.norm()).max(cfg.abs_tol / cfg.rel_tol);
        if delta <= cfg.rel_tol * scale {
            return Ok(next);
        }
        if level == cfg.refine_levels {
            return Err(Error::QuadratureNoConvergence {
                last: next.e.norm() + next.b.norm(),
                previous: prev.e.norm() + prev.b.norm(),
                levels: cfg.refine_levels,
            });
        }
        prev = next;
    }
    Ok(prev)
}

/// One species' contribution descriptor for the charge-weighted totals.
pub struct SpeciesKernelInput<'a> {
    pub charge: f64,
    pub mass: f64,
    /// Charge profile in rescaled momentum.
    pub q: &'a (dyn Fn(Vec3) -> f64 + Sync),
    /// Rescaled momentum support bound.
    pub beta: f64,
}

/// Charge-and-mass weighted totals `sum_a e_a m_a^3 (E_a, B_a)(v)`.
pub fn asymptotic_fields(
    species: &[SpeciesKernelInput<'_>],
    v: Vec3,
    cfg: &KernelQuadConfig,
) -> Result<(Vec3, Vec3)> {
    let mut e = Vec3::ZERO;
    let mut b = Vec3::ZERO;
    for sp in species {
        let profile = asymptotic_fields_single(&sp.q, sp.beta, v, cfg)?;
        let w = sp.charge * sp.mass.powi(3);
        e += profile.e * w;
        b += profile.b * w;
    }
    Ok((e, b))
}

/// Tabulate the totals over a list of momentum nodes, in node order.
pub fn tabulate_asymptotic_fields(
    species: &[SpeciesKernelInput<'_>],
    nodes: &[Vec3],
    cfg: &KernelQuadConfig,
) -> Result<Vec<(Vec3, Vec3)>> {
    let rows: Vec<Result<(Vec3, Vec3)>> = nodes
        .par_iter()
        .map(|&v| asymptotic_fields(species, v, cfg))
        .collect();
    rows.into_iter().collect()
}
