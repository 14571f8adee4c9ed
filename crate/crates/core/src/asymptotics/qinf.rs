//! Spatial averages of the comoving density and their large-time limit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::CharacteristicFlow;
use crate::numeric::{gauss_legendre_on, KahanSum};
use crate::relkin::Vec3;

use super::ratefit::envelope;
use super::MomentumGrid;

/// Quadrature settings for the spatial averages.
#[derive(Clone, Copy, Debug)]
pub struct ChargeQuadConfig {
    /// Fixed cube half-extent of the x-quadrature. Shared across all times
    /// so that profile differences carry no node-placement noise.
    pub radius: f64,
    /// Base nodes per dimension.
    pub n: usize,
    pub refine_levels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for ChargeQuadConfig {
    fn default() -> Self {
        ChargeQuadConfig {
            radius: 2.0,
            n: 12,
            refine_levels: 2,
            rel_tol: 1e-6,
            abs_tol: 1e-10,
        }
    }
}

fn cube_quadrature(flow: &CharacteristicFlow, t: f64, v: Vec3, radius: f64, n: usize) -> Result<f64> {
    let (xs, ws) = gauss_legendre_on(n, -radius, radius);
    let mut acc = KahanSum::new();
    for (a, wa) in xs.iter().zip(&ws) {
        for (b, wb) in xs.iter().zip(&ws) {
            for (c, wc) in xs.iter().zip(&ws) {
                let x = Vec3::new(*a, *b, *c);
                let g = flow.comoving_density(t, x, v)?;
                if g != 0.0 {
                    acc.add(wa * wb * wc * g);
                }
            }
        }
    }
    Ok(acc.value())
}

/// Spatial average of the comoving density at momentum `v`:
/// `integral g(t, x, v) dx` over the support-covering cube. Returns 0
/// immediately beyond the measured momentum bound.
pub fn spatial_average_q(
    flow: &CharacteristicFlow,
    t: f64,
    v: Vec3,
    momentum_bound: f64,
    cfg: &ChargeQuadConfig,
) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Precondition(format!("spatial average at t = {t} < 0")));
    }
    if v.norm() > momentum_bound * (1.0 + 1e-9) {
        return Ok(0.0);
    }
    let mut prev = cube_quadrature(flow, t, v, cfg.radius, cfg.n)?;
    if cfg.refine_levels == 0 {
        return Ok(prev);
    }
    let mut n = cfg.n;
    for level in 1..=cfg.refine_levels {
        n = n * 3 / 2 + 1;
        let next = cube_quadrature(flow, t, v, cfg.radius, n)?;
        if (next - prev).abs() <= cfg.rel_tol * next.abs().max(cfg.abs_tol / cfg.rel_tol) {
            return Ok(next);
        }
        if level == cfg.refine_levels {
            return Err(Error::QuadratureNoConvergence {
                last: next,
                previous: prev,
                levels: cfg.refine_levels,
            });
        }
        prev = next;
    }
    Ok(prev)
}

/// Spatial averages of one species tabulated over a momentum grid and a set
/// of times.
#[derive(Clone, Debug)]
pub struct ChargeProfile {
    pub grid: MomentumGrid,
    pub times: Vec<f64>,
    /// `values[species][time][node]`
    pub values: Vec<Vec<Vec<f64>>>,
}

impl ChargeProfile {
    /// Tabulate by quadrature, one flow per species. `momentum_bounds` are
    /// the per-species rescaled momentum bounds.
    pub fn tabulate(
        flows: &[&CharacteristicFlow],
        momentum_bounds: &[f64],
        grid: MomentumGrid,
        times: &[f64],
        cfg: &ChargeQuadConfig,
    ) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "charge profile needs increasing times".into(),
            ));
        }
        let nodes = grid.nodes();
        let mut values = Vec::with_capacity(flows.len());
        for (flow, &bound) in flows.iter().zip(momentum_bounds) {
            let mut per_time = Vec::with_capacity(times.len());
            for &t in times {
                let row: Vec<Result<f64>> = nodes
                    .par_iter()
                    .map(|&v| spatial_average_q(flow, t, v, bound, cfg))
                    .collect();
                per_time.push(row.into_iter().collect::<Result<Vec<f64>>>()?);
            }
            values.push(per_time);
        }
        Ok(ChargeProfile {
            grid,
            times: times.to_vec(),
            values,
        })
    }
}

/// Large-time limit of a charge profile with rate diagnostics.
#[derive(Clone, Debug)]
pub struct ChargeExtrapolation {
    /// Per-species per-node limit, taken as the value at the largest time.
    pub q_inf: Vec<Vec<f64>>,
    /// Envelope-corrected diagnostic values `Q(t_max) - c env(t_max)` with c
    /// fitted least-squares from the differences to the last time.
    pub corrected: Vec<Vec<f64>>,
    /// Per-species envelope constant of `|Q(t) - Q(t_max)|` against
    /// `log^5(2+t)/(2+t)`.
    pub envelope_constant: Vec<f64>,
    /// Nodes whose difference sequence fails to decrease monotonically.
    pub non_monotone_nodes: usize,
}

/// Extrapolate the profile limit. Requires at least 4 increasing times
/// reaching 50 or beyond.
pub fn extrapolate_q_infinity(profile: &ChargeProfile) -> Result<ChargeExtrapolation> {
    let nt = profile.times.len();
    if nt < 4 {
        return Err(Error::Precondition(format!(
            "extrapolation needs at least 4 times, got {nt}"
        )));
    }
    let t_max = profile.times[nt - 1];
    if t_max < 50.0 {
        return Err(Error::Precondition(format!(
            "extrapolation needs a largest time of at least 50, got {t_max}"
        )));
    }
    let envs: Vec<f64> = profile.times.iter().map(|&t| envelope(t, 5.0, 1.0)).collect();
    let env_last = envs[nt - 1];
    let mut q_inf = Vec::with_capacity(profile.values.len());
    let mut corrected = Vec::with_capacity(profile.values.len());
    let mut env_constants = Vec::with_capacity(profile.values.len());
    let mut non_monotone = 0usize;
    for per_time in &profile.values {
        let n_nodes = per_time[0].len();
        let mut species_qinf = Vec::with_capacity(n_nodes);
        let mut species_corr = Vec::with_capacity(n_nodes);
        let mut env_c = 0.0f64;
        for node in 0..n_nodes {
            let last = per_time[nt - 1][node];
            species_qinf.push(last);
            // least-squares slope of (Q(t_j) - Q(t_max)) against
            // (env(t_j) - env(t_max))
            let mut num = 0.0;
            let mut den = 0.0;
            let mut prev_diff = f64::INFINITY;
            let mut monotone = true;
            for j in 0..nt - 1 {
                let d = per_time[j][node] - last;
                let de = envs[j] - env_last;
                num += d * de;
                den += de * de;
                if d.abs() > prev_diff + 1e-14 {
                    monotone = false;
                }
                prev_diff = d.abs();
                env_c = env_c.max(d.abs() / envs[j]);
            }
            if !monotone {
                non_monotone += 1;
            }
            let slope = if den > 0.0 { num / den } else { 0.0 };
            species_corr.push(last - slope * env_last);
        }
        q_inf.push(species_qinf);
        corrected.push(species_corr);
        env_constants.push(env_c);
    }
    Ok(ChargeExtrapolation {
        q_inf,
        corrected,
        envelope_constant: env_constants,
        non_monotone_nodes: non_monotone,
    })
}
