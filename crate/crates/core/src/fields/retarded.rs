//! Retarded-integral decomposition of the electromagnetic field.
//!
//! The field splits into a transport piece (cone integral against the
//! distribution), a source piece (cone integral against the Lorentz force
//! times the distribution, in integrated-by-parts form so no momentum
//! derivatives of the distribution are needed) and a data piece (light-shell
//! integral of the initial data).
//!
//! Conventions: `omega = (y - x) / |y - x|` points from the evaluation point
//! toward the source point. The cone quadrature is spherical about the
//! evaluation point, `y = x + r omega`, which cancels the `1/|y-x|^2` volume
//! factor exactly. All node orderings are fixed and parallel partial sums are
//! merged in index order, so results are reproducible across worker counts.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{EmInitialData, InitialData};
use crate::numeric::{gauss_legendre, gauss_legendre_on, sphere_rule, KahanVec3};
use crate::relkin::{SpeciesParams, Vec3};

use super::FieldEvaluator;

/// One weighted momentum sample `(v, w)` of the distribution at a retarded
/// space-time point: `integral phi(v) f(t', y, v) dv ~ sum_j w_j phi(v_j)`.
pub type WeightedMomentum = (Vec3, f64);

/// Access to the per-species momentum content of the plasma at retarded
/// times. Implementations must be deterministic and shareable read-only
/// across workers.
pub trait RetardedSource: Sync {
    fn n_species(&self) -> usize;

    fn species(&self, idx: usize) -> &SpeciesParams;

    /// Append weighted momentum samples of `f_alpha(t', y, .)` to `out`.
    /// Leaves `out` untouched when the distribution vanishes there.
    fn momentum_samples(&self, species: usize, t_prime: f64, y: Vec3, out: &mut Vec<WeightedMomentum>);

    /// Upper bound on the spatial support radius at time `t'`, used to skip
    /// empty quadrature nodes.
    fn support_radius(&self, species: usize, t_prime: f64) -> f64;
}

/// Quadrature configuration for the retarded integrals.
#[derive(Clone, Copy, Debug)]
pub struct RetardedQuadConfig {
    /// Radial panels over `[0, t]`; each panel carries an 8-node rule. The
    /// panel nearest the cone tip `r = t` is subdivided geometrically.
    pub n_radial_panels: usize,
    pub n_polar: usize,
    pub n_azimuth: usize,
    /// Per-dimension node count for analytic momentum integrals.
    pub n_momentum: usize,
    /// Refinement passes comparing successively denser rules; 0 disables the
    /// convergence check and takes the base rule as-is.
    pub refine_levels: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for RetardedQuadConfig {
    fn default() -> Self {
        RetardedQuadConfig {
            n_radial_panels: 8,
            n_polar: 8,
            n_azimuth: 16,
            n_momentum: 6,
            refine_levels: 2,
            rel_tol: 1e-4,
            abs_tol: 1e-10,
        }
    }
}

impl RetardedQuadConfig {
    fn scaled(&self, level: usize) -> RetardedQuadConfig {
        let mut c = *self;
        for _ in 0..level {
            c.n_radial_panels = c.n_radial_panels * 3 / 2 + 1;
            c.n_polar = c.n_polar * 3 / 2 + 1;
            c.n_azimuth = c.n_azimuth * 3 / 2 + 1;
            c.n_momentum += 1;
        }
        c
    }
}

const GL_PER_PANEL: usize = 8;

/// Radial nodes and weights over `[0, t]` with geometric refinement of the
/// final panel toward the cone tip.
fn radial_rule(t: f64, n_panels: usize) -> Vec<(f64, f64)> {
    let n_panels = n_panels.max(2);
    let width = t / n_panels as f64;
    let mut bounds: Vec<(f64, f64)> = Vec::with_capacity(n_panels + 2);
    for i in 0..n_panels - 1 {
        bounds.push((width * i as f64, width * (i + 1) as f64));
    }
    // split the last panel 2:1:1 toward r = t
    let a = width * (n_panels - 1) as f64;
    let m1 = a + 0.5 * width;
    let m2 = a + 0.75 * width;
    bounds.push((a, m1));
    bounds.push((m1, m2));
    bounds.push((m2, t));
    let (gx, gw) = gauss_legendre(GL_PER_PANEL);
    let mut out = Vec::with_capacity(bounds.len() * GL_PER_PANEL);
    for (lo, hi) in bounds {
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (x, w) in gx.iter().zip(&gw) {
            out.push((mid + half * x, w * half));
        }
    }
    out
}

/// Transport kernel `(omega + vh)(1 - |vh|^2) / (1 + vh . omega)^2`.
fn transport_kernel_e(omega: Vec3, vh: Vec3) -> Vec3 {
    let denom = 1.0 + vh.dot(omega);
    (omega + vh) * ((1.0 - vh.norm_sq()) / (denom * denom))
}

/// Magnetic transport kernel: `omega + vh` replaced by `omega x vh`.
fn transport_kernel_b(omega: Vec3, vh: Vec3) -> Vec3 {
    let denom = 1.0 + vh.dot(omega);
    omega.cross(vh) * ((1.0 - vh.norm_sq()) / (denom * denom))
}

/// Momentum gradient of the source kernel `(omega + vh)/(1 + vh.omega)`
/// contracted with the Lorentz force `force`, divided out forms included.
/// `energy` is the species energy of the physical momentum.
fn source_kernel_e(omega: Vec3, vh: Vec3, energy: f64, force: Vec3) -> Vec3 {
    let denom = 1.0 + vh.dot(omega);
    let mf = force - vh * vh.dot(force); // (I - vh vh^T) force
    let momega_f = omega.dot(force) - vh.dot(omega) * vh.dot(force);
    (mf * (1.0 / denom) - (omega + vh) * (momega_f / (denom * denom))) * (1.0 / energy)
}

/// Magnetic analogue for the kernel `(omega x vh)/(1 + vh.omega)`.
fn source_kernel_b(omega: Vec3, vh: Vec3, energy: f64, force: Vec3) -> Vec3 {
    let denom = 1.0 + vh.dot(omega);
    let mf = force - vh * vh.dot(force);
    let momega_f = omega.dot(force) - vh.dot(omega) * vh.dot(force);
    (omega.cross(mf) * (1.0 / denom) - omega.cross(vh) * (momega_f / (denom * denom)))
        * (1.0 / energy)
}

/// Shell kernel of the data piece, `(omega - (vh.omega) vh)/(1 + vh.omega)`.
fn data_kernel_e(omega: Vec3, vh: Vec3) -> Vec3 {
    let denom = 1.0 + vh.dot(omega);
    (omega - vh * vh.dot(omega)) * (1.0 / denom)
}

fn data_kernel_b(omega: Vec3, vh: Vec3) -> Vec3 {
    let denom = 1.0 + vh.dot(omega);
    omega.cross(vh) * (1.0 / denom)
}

fn check_kernel_denominator(omega: Vec3, vh: Vec3) -> Result<()> {
    if 1.0 + vh.dot(omega) < 1e-6 {
        return Err(Error::Precondition(format!(
            "retarded kernel denominator 1 + vh.omega = {:.3e} below 1e-6; \
             momentum support violates the light-cone margin",
            1.0 + vh.dot(omega)
        )));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum ConePiece {
    Transport,
    Source,
}

#[derive(Clone, Copy)]
enum Component {
    Electric,
    Magnetic,
}

/// Shared cone quadrature for the transport and source pieces.
fn cone_integral<S: RetardedSource + ?Sized>(
    src: &S,
    field: Option<&dyn FieldEvaluator>,
    species_sel: &[usize],
    t: f64,
    x: Vec3,
    cfg: &RetardedQuadConfig,
    piece: ConePiece,
    component: Component,
) -> Result<Vec3> {
    if !(t > 0.0) {
        return Err(Error::Precondition(format!(
            "retarded integral requires t > 0, got {t}"
        )));
    }
    let radial = radial_rule(t, cfg.n_radial_panels);
    let angular = sphere_rule(cfg.n_polar, cfg.n_azimuth);

    // One task per radial node; each task accumulates its angular sum
    // sequentially and tasks are merged in radial order.
    let partials: Vec<Result<Vec3>> = radial
        .par_iter()
        .map(|&(r, wr)| -> Result<Vec3> {
            let t_prime = t - r;
            let mut acc = KahanVec3::new();
            let mut samples: Vec<WeightedMomentum> = Vec::new();
            for &(omega, wo) in &angular {
                let y = x + omega * r;
                for &si in species_sel {
                    let params = src.species(si);
                    if y.norm() > src.support_radius(si, t_prime) * (1.0 + 1e-12) {
                        continue;
                    }
                    samples.clear();
                    src.momentum_samples(si, t_prime, y, &mut samples);
                    if samples.is_empty() {
                        continue;
                    }
                    let force = match piece {
                        ConePiece::Source => {
                            let f = field.expect("source piece requires a field evaluator");
                            Some(f.sample(t_prime, y))
                        }
                        ConePiece::Transport => None,
                    };
                    let charge_factor = match piece {
                        ConePiece::Transport => -params.charge,
                        ConePiece::Source => -params.charge * params.charge,
                    };
                    // transport measure: dr dOmega; source measure: r dr dOmega
                    let measure = match piece {
                        ConePiece::Transport => wr * wo,
                        ConePiece::Source => wr * r * wo,
                    };
                    for &(v, w) in &samples {
                        let energy = params.energy(v);
                        let vh = v / energy;
                        check_kernel_denominator(omega, vh)?;
                        let k = match (piece, component) {
                            (ConePiece::Transport, Component::Electric) => {
                                transport_kernel_e(omega, vh)
                            }
                            (ConePiece::Transport, Component::Magnetic) => {
                                transport_kernel_b(omega, vh)
                            }
                            (ConePiece::Source, Component::Electric) => {
                                let fs = force.as_ref().unwrap();
                                let lorentz = fs.e + vh.cross(fs.b);
                                source_kernel_e(omega, vh, energy, lorentz)
                            }
                            (ConePiece::Source, Component::Magnetic) => {
                                let fs = force.as_ref().unwrap();
                                let lorentz = fs.e + vh.cross(fs.b);
                                source_kernel_b(omega, vh, energy, lorentz)
                            }
                        };
                        acc.add_scaled(k, charge_factor * measure * w);
                    }
                }
            }
            Ok(acc.value())
        })
        .collect();

    let mut total = KahanVec3::new();
    for p in partials {
        total.add(p?);
    }
    Ok(total.value())
}

fn converged(prev: Vec3, next: Vec3, cfg: &RetardedQuadConfig) -> bool {
    (next - prev).norm() <= cfg.rel_tol * next.norm().max(cfg.abs_tol / cfg.rel_tol)
}

fn refine<FEval>(cfg: &RetardedQuadConfig, eval: FEval) -> Result<Vec3>
where
    FEval: Fn(&RetardedQuadConfig) -> Result<Vec3>,
{
    let mut prev = eval(cfg)?;
    if cfg.refine_levels == 0 {
        return Ok(prev);
    }
    for level in 1..=cfg.refine_levels {
        let next = eval(&cfg.scaled(level))?;
        if converged(prev, next, cfg) {
            return Ok(next);
        }
        if level == cfg.refine_levels {
            return Err(Error::QuadratureNoConvergence {
                last: next.norm(),
                previous: prev.norm(),
                levels: cfg.refine_levels,
            });
        }
        prev = next;
    }
    Ok(prev)
}

/// Transport piece of the electric field at `(t, x)`.
pub fn eval_e_t<S: RetardedSource + ?Sized>(
    src: &S,
    species_sel: &[usize],
    t: f64,
    x: Vec3,
    cfg: &RetardedQuadConfig,
) -> Result<Vec3> {
    refine(cfg, |c| {
        cone_integral(src, None, species_sel, t, x, c, ConePiece::Transport, Component::Electric)
    })
}

/// Transport piece of the magnetic field.
pub fn eval_b_t<S: RetardedSource + ?Sized>(
    src: &S,
    species_sel: &[usize],
    t: f64,
    x: Vec3,
    cfg: &RetardedQuadConfig,
) -> Result<Vec3> {
    refine(cfg, |c| {
        cone_integral(src, None, species_sel, t, x, c, ConePiece::Transport, Component::Magnetic)
    })
}

/// Source piece of the electric field; needs the field at retarded times.
pub fn eval_e_s<S: RetardedSource + ?Sized>(
    src: &S,
    field: &dyn FieldEvaluator,
    species_sel: &[usize],
    t: f64,
    x: Vec3,
    cfg: &RetardedQuadConfig,
) -> Result<Vec3> {
    refine(cfg, |c| {
        cone_integral(src, Some(field), species_sel, t, x, c, ConePiece::Source, Component::Electric)
    })
}

/// Source piece of the magnetic field.
pub fn eval_b_s<S: RetardedSource + ?Sized>(
    src: &S,
    field: &dyn FieldEvaluator,
    species_sel: &[usize],
    t: f64,
    x: Vec3,
    cfg: &RetardedQuadConfig,
) -> Result<Vec3> {
    refine(cfg, |c| {
        cone_integral(src, Some(field), species_sel, t, x, c, ConePiece::Source, Component::Magnetic)
    })
}

/// Tensor Gauss-Legendre rule over the momentum support box of a species.
fn momentum_box_rule(v_radius: f64, n: usize) -> Vec<(Vec3, f64)> {
    let (xs, ws) = gauss_legendre_on(n, -v_radius, v_radius);
    let mut out = Vec::with_capacity(n * n * n);
    for (a, wa) in xs.iter().zip(&ws) {
        for (b, wb) in xs.iter().zip(&ws) {
            for (c, wc) in xs.iter().zip(&ws) {
                out.push((Vec3::new(*a, *b, *c), wa * wb * wc));
            }
        }
    }
    out
}

fn shell_integral(
    data: &InitialData,
    t: f64,
    x: Vec3,
    cfg: &RetardedQuadConfig,
    component: Component,
) -> Result<Vec3> {
    if !(t > 0.0) {
        return Err(Error::Precondition(format!(
            "data shell integral requires t > 0, got {t}"
        )));
    }
    // the shell |y - x| = t misses every support ball when | |x| - t | > k
    let k = data.max_x_radius();
    if (x.norm() - t).abs() > k {
        return Ok(Vec3::ZERO);
    }
    let angular = sphere_rule(cfg.n_polar, cfg.n_azimuth);
    let momentum_rules: Vec<Vec<(Vec3, f64)>> = data
        .species
        .iter()
        .map(|sp| momentum_box_rule(sp.profile.v_radius, cfg.n_momentum))
        .collect();
    let inv_4pi = 1.0 / (4.0 * std::f64::consts::PI);

    let partials: Vec<Result<Vec3>> = angular
        .par_iter()
        .map(|&(omega, wo)| -> Result<Vec3> {
            let y = x + omega * t;
            let mut acc = KahanVec3::new();
            match component {
                Component::Electric => {
                    if !data.em.is_zero() {
                        let wave = data.em.e0(y)
                            + data.em.grad_e0(y).mul_vec(omega * t)
                            + data.em.curl_b0(y) * t;
                        acc.add_scaled(wave, inv_4pi * wo);
                    }
                }
                Component::Magnetic => {
                    if !data.em.is_zero() {
                        let wave = data.em.b0(y)
                            + data.em.grad_b0(y).mul_vec(omega * t)
                            - data.em.curl_e0(y) * t;
                        acc.add_scaled(wave, inv_4pi * wo);
                    }
                }
            }
            for (sp, rule) in data.species.iter().zip(&momentum_rules) {
                if y.norm() > sp.profile.x_radius {
                    continue;
                }
                let e = sp.params.charge;
                for &(v, wv) in rule {
                    let f0 = sp.profile.eval(y, v);
                    if f0 == 0.0 {
                        continue;
                    }
                    let vh = sp.params.velocity(v);
                    check_kernel_denominator(omega, vh)?;
                    match component {
                        Component::Electric => {
                            // current term of the wave data plus the shell kernel
                            acc.add_scaled(vh, -e * t * inv_4pi * wo * wv * f0);
                            acc.add_scaled(data_kernel_e(omega, vh), -e * t * wo * wv * f0);
                        }
                        Component::Magnetic => {
                            acc.add_scaled(data_kernel_b(omega, vh), -e * t * wo * wv * f0);
                        }
                    }
                }
            }
            Ok(acc.value())
        })
        .collect();

    let mut total = KahanVec3::new();
    for p in partials {
        total.add(p?);
    }
    Ok(total.value())
}

/// Data piece of the electric field: light-shell integral of the initial
/// fields and the initial distribution.
pub fn eval_e_data(data: &InitialData, t: f64, x: Vec3, cfg: &RetardedQuadConfig) -> Result<Vec3> {
    refine(cfg, |c| shell_integral(data, t, x, c, Component::Electric))
}

/// Data piece of the magnetic field.
pub fn eval_b_data(data: &InitialData, t: f64, x: Vec3, cfg: &RetardedQuadConfig) -> Result<Vec3> {
    refine(cfg, |c| shell_integral(data, t, x, c, Component::Magnetic))
}

/// Static separable fixture source `f(t, y, v) = A gx(|y|) gv(|v|)`, used to
/// exercise the cone quadratures against independent oracles.
#[derive(Clone, Debug)]
pub struct AnalyticBlobSource {
    pub species: Vec<SpeciesParams>,
    pub amplitude: f64,
    pub x_radius: f64,
    pub v_radius: f64,
    pub n_momentum: usize,
}

impl AnalyticBlobSource {
    pub fn density(&self, y: Vec3, v: Vec3) -> f64 {
        let gx = {
            let u = 1.0 - y.norm_sq() / (self.x_radius * self.x_radius);
            if u <= 0.0 {
                0.0
            } else {
                u.powi(4)
            }
        };
        let gv = {
            let u = 1.0 - v.norm_sq() / (self.v_radius * self.v_radius);
            if u <= 0.0 {
                0.0
            } else {
                u.powi(4)
            }
        };
        self.amplitude * gx * gv
    }
}

impl RetardedSource for AnalyticBlobSource {
    fn n_species(&self) -> usize {
        self.species.len()
    }

    fn species(&self, idx: usize) -> &SpeciesParams {
        &self.species[idx]
    }

    fn momentum_samples(&self, _species: usize, _t_prime: f64, y: Vec3, out: &mut Vec<WeightedMomentum>) {
        if y.norm() > self.x_radius {
            return;
        }
        for (v, w) in momentum_box_rule(self.v_radius, self.n_momentum) {
            let f = self.density(y, v);
            if f != 0.0 {
                out.push((v, w * f));
            }
        }
    }

    fn support_radius(&self, _species: usize, _t_prime: f64) -> f64 {
        self.x_radius
    }
}

/// Closed-form free transport of compactly supported initial data:
/// `f(t, y, v) = f0(y - t vh, v)`.
///
/// For large retarded times the momentum support at a fixed point is a thin
/// ball of velocities around `y/t`, so the momentum integral switches to the
/// velocity-substituted form concentrated on that ball.
#[derive(Clone, Debug)]
pub struct FreeStreamingSource {
    pub data: InitialData,
    pub n_momentum: usize,
}

impl RetardedSource for FreeStreamingSource {
    fn n_species(&self) -> usize {
        self.data.species.len()
    }

    fn species(&self, idx: usize) -> &SpeciesParams {
        &self.data.species[idx].params
    }

    fn momentum_samples(&self, species: usize, t_prime: f64, y: Vec3, out: &mut Vec<WeightedMomentum>) {
        let sp = &self.data.species[species];
        let kx = sp.profile.x_radius;
        let kv = sp.profile.v_radius;
        let m = sp.params.mass;
        if t_prime <= 2.0 * kx {
            for (v, w) in momentum_box_rule(kv, self.n_momentum) {
                let pos = y - sp.params.velocity(v) * t_prime;
                let f = sp.profile.eval(pos, v);
                if f != 0.0 {
                    out.push((v, w * f));
                }
            }
            return;
        }
        // velocity substitution u = vh(v): dv = m^3 <u'>^5 du with u' the
        // rescaled momentum of u; support is |y - t' u| <= kx
        let center = y / t_prime;
        let rad = kx / t_prime;
        let vhat_max = kv / (m * m + kv * kv).sqrt();
        let (xs, ws) = gauss_legendre_on(self.n_momentum, -1.0, 1.0);
        for (a, wa) in xs.iter().zip(&ws) {
            for (b, wb) in xs.iter().zip(&ws) {
                for (c, wc) in xs.iter().zip(&ws) {
                    let s = Vec3::new(*a, *b, *c);
                    let u = center + s * rad;
                    let un2 = u.norm_sq();
                    if un2 >= vhat_max * vhat_max {
                        continue;
                    }
                    let gamma = 1.0 / (1.0 - un2).sqrt();
                    let v = u * (gamma * m); // physical momentum with velocity u
                    let pos = s * (-kx); // y - t' u
                    let f = sp.profile.eval(pos, v);
                    if f == 0.0 {
                        continue;
                    }
                    let jac = m * m * m * gamma.powi(5);
                    out.push((v, wa * wb * wc * rad.powi(3) * jac * f));
                }
            }
        }
    }

    fn support_radius(&self, species: usize, t_prime: f64) -> f64 {
        let sp = &self.data.species[species];
        let kv = sp.profile.v_radius;
        let m = sp.params.mass;
        let vhat_max = kv / (m * m + kv * kv).sqrt();
        vhat_max * t_prime + sp.profile.x_radius
    }
}

/// Particle-ensemble source: cell-averaged momentum samples from stored
/// trajectory slices, with linear interpolation of positions between stored
/// times. Used by the self-consistent field rebuild.
#[derive(Clone, Debug)]
pub struct EnsembleSource {
    species: Vec<SpeciesParams>,
    times: Vec<f64>,
    /// positions[time][species][particle], physical coordinates
    positions: Vec<Vec<Vec<Vec3>>>,
    momenta: Vec<Vec<Vec<Vec3>>>,
    weights: Vec<Vec<f64>>,
    momentum_bounds: Vec<f64>,
    support_radii: Vec<Vec<f64>>,
    cell_half_width: f64,
}

impl EnsembleSource {
    pub fn new(
        species: Vec<SpeciesParams>,
        times: Vec<f64>,
        positions: Vec<Vec<Vec<Vec3>>>,
        momenta: Vec<Vec<Vec<Vec3>>>,
        weights: Vec<Vec<f64>>,
        cell_half_width: f64,
    ) -> Result<Self> {
        if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "ensemble source needs strictly increasing times".into(),
            ));
        }
        if positions.len() != times.len() || momenta.len() != times.len() {
            return Err(Error::InvalidParameter(
                "ensemble source slice count must match times".into(),
            ));
        }
        let momentum_bounds = (0..species.len())
            .map(|si| {
                momenta
                    .iter()
                    .flat_map(|slice| slice[si].iter())
                    .fold(0.0f64, |m, v| m.max(v.norm()))
            })
            .collect();
        let support_radii = times
            .iter()
            .enumerate()
            .map(|(ti, _)| {
                (0..species.len())
                    .map(|si| {
                        positions[ti][si]
                            .iter()
                            .fold(0.0f64, |m, p| m.max(p.norm()))
                    })
                    .collect()
            })
            .collect();
        Ok(EnsembleSource {
            species,
            times,
            positions,
            momenta,
            weights,
            momentum_bounds,
            support_radii,
            cell_half_width,
        })
    }

    pub fn momentum_bound(&self, species: usize) -> f64 {
        self.momentum_bounds[species]
    }

    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let n = self.times.len();
        if t <= self.times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.times[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let hi = self.times.partition_point(|&s| s < t).min(n - 1);
        let lo = hi - 1;
        let theta = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        (lo, hi, theta)
    }
}

impl RetardedSource for EnsembleSource {
    fn n_species(&self) -> usize {
        self.species.len()
    }

    fn species(&self, idx: usize) -> &SpeciesParams {
        &self.species[idx]
    }

    fn momentum_samples(&self, species: usize, t_prime: f64, y: Vec3, out: &mut Vec<WeightedMomentum>) {
        let (lo, hi, theta) = self.bracket(t_prime);
        let h = self.cell_half_width;
        let cell_volume = (2.0 * h).powi(3);
        let plo = &self.positions[lo][species];
        let phi = &self.positions[hi][species];
        let mlo = &self.momenta[lo][species];
        let mhi = &self.momenta[hi][species];
        let w = &self.weights[species];
        for i in 0..plo.len() {
            let pos = plo[i] * (1.0 - theta) + phi[i] * theta;
            if (pos - y).max_abs() > h {
                continue;
            }
            let v = mlo[i] * (1.0 - theta) + mhi[i] * theta;
            out.push((v, w[i] / cell_volume));
        }
    }

    fn support_radius(&self, species: usize, t_prime: f64) -> f64 {
        let (lo, hi, _) = self.bracket(t_prime);
        let r = self.support_radii[lo][species].max(self.support_radii[hi][species]);
        // inflate by the cell size so boundary cells are not skipped
        r + 2.0 * self.cell_half_width
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BumpField, ZeroField};
    use crate::relkin::energy;

    fn fixture_species() -> Vec<SpeciesParams> {
        vec![SpeciesParams::new("probe", 1.0, 1.0, 1.0).unwrap()]
    }

    fn empty_source() -> AnalyticBlobSource {
        AnalyticBlobSource {
            species: fixture_species(),
            amplitude: 0.0,
            x_radius: 1.0,
            v_radius: 0.5,
            n_momentum: 4,
        }
    }

    fn blob_source() -> AnalyticBlobSource {
        AnalyticBlobSource {
            species: fixture_species(),
            amplitude: 1.0,
            x_radius: 1.5,
            v_radius: 0.6,
            n_momentum: 6,
        }
    }

    #[test]
    fn vanishing_source_gives_zero_fields() {
        let src = empty_source();
        let cfg = RetardedQuadConfig::default();
        let e = eval_e_t(&src, &[0], 5.0, Vec3::new(1.0, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(e, Vec3::ZERO);
        let zero = ZeroField::new(1.0);
        let es = eval_e_s(&src, &zero, &[0], 5.0, Vec3::ZERO, &cfg).unwrap();
        assert_eq!(es, Vec3::ZERO);
    }

    #[test]
    fn transport_is_linear_in_the_source() {
        let src = blob_source();
        let mut doubled = src.clone();
        doubled.amplitude *= 2.0;
        let cfg = RetardedQuadConfig {
            refine_levels: 0,
            ..Default::default()
        };
        let x = Vec3::new(2.0, 0.3, -0.4);
        let e1 = eval_e_t(&src, &[0], 10.0, x, &cfg).unwrap();
        let e2 = eval_e_t(&doubled, &[0], 10.0, x, &cfg).unwrap();
        assert!((e2 - e1 * 2.0).norm() <= 1e-12 * e2.norm().max(1.0));
        let b1 = eval_b_t(&src, &[0], 10.0, x, &cfg).unwrap();
        let b2 = eval_b_t(&doubled, &[0], 10.0, x, &cfg).unwrap();
        assert!((b2 - b1 * 2.0).norm() <= 1e-12 * b2.norm().max(1.0));
    }

    #[test]
    fn source_kernel_gradient_matches_finite_differences() {
        // d/dv of (omega + vh)/(1 + vh.omega) contracted with a fixed force
        let omega = Vec3::new(0.3, -0.5, 0.81).normalized();
        let force = Vec3::new(0.2, 0.7, -0.4);
        let mass = 1.7;
        let sp = SpeciesParams::new("m", mass, 1.0, 1.0).unwrap();
        let v = Vec3::new(0.4, -0.1, 0.25);
        let en = sp.energy(v);
        let vh = v / en;
        let analytic = source_kernel_e(omega, vh, en, force);
        let h = 1e-6;
        let kernel = |v: Vec3| {
            let vh = sp.velocity(v);
            (omega + vh) * (1.0 / (1.0 + vh.dot(omega)))
        };
        let mut fd = Vec3::ZERO;
        for j in 0..3 {
            let mut d = Vec3::ZERO;
            match j {
                0 => d.x = h,
                1 => d.y = h,
                _ => d.z = h,
            }
            let diff = (kernel(v + d) - kernel(v - d)) / (2.0 * h);
            fd += diff * force.as_array()[j];
        }
        assert!((analytic - fd).norm() < 1e-8, "{analytic:?} vs {fd:?}");

        let analytic_b = source_kernel_b(omega, vh, en, force);
        let kernel_b = |v: Vec3| {
            let vh = sp.velocity(v);
            omega.cross(vh) * (1.0 / (1.0 + vh.dot(omega)))
        };
        let mut fd_b = Vec3::ZERO;
        for j in 0..3 {
            let mut d = Vec3::ZERO;
            match j {
                0 => d.x = h,
                1 => d.y = h,
                _ => d.z = h,
            }
            let diff = (kernel_b(v + d) - kernel_b(v - d)) / (2.0 * h);
            fd_b += diff * force.as_array()[j];
        }
        assert!((analytic_b - fd_b).norm() < 1e-8);
    }

    #[test]
    fn transport_kernel_identity() {
        // (1 - |vh|^2) = <v>^-2 for unit mass
        let v = Vec3::new(0.5, 0.2, -0.7);
        let vh = v / energy(v);
        let omega = Vec3::new(0.0, 0.6, 0.8);
        let k = transport_kernel_e(omega, vh);
        let expected =
            (omega + vh) * (1.0 / (energy(v).powi(2) * (1.0 + vh.dot(omega)).powi(2)));
        assert!((k - expected).norm() < 1e-15);
    }

    #[test]
    fn data_piece_vanishes_for_zero_initial_data() {
        let data = InitialData {
            species: vec![crate::flow::SpeciesData {
                params: SpeciesParams::new("s", 1.0, 1.0, 1.0).unwrap(),
                profile: crate::flow::BumpProfile::new(0.0, 1.0, 1.0).unwrap(),
            }],
            em: EmInitialData::Zero,
        };
        let cfg = RetardedQuadConfig::default();
        let e = eval_e_data(&data, 4.0, Vec3::new(3.8, 0.0, 0.0), &cfg).unwrap();
        assert_eq!(e, Vec3::ZERO);
    }

    #[test]
    fn data_piece_vanishes_off_the_shell() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let cfg = RetardedQuadConfig {
            refine_levels: 0,
            ..Default::default()
        };
        // | |x| - t | > k: shell misses the support ball entirely
        for (t, x) in [
            (10.0, Vec3::new(3.0, 0.0, 0.0)),
            (10.0, Vec3::new(0.0, 20.0, 0.0)),
            (5.0, Vec3::ZERO),
        ] {
            assert_eq!(eval_e_data(&data, t, x, &cfg).unwrap(), Vec3::ZERO);
            assert_eq!(eval_b_data(&data, t, x, &cfg).unwrap(), Vec3::ZERO);
        }
        // on the shell it is generically nonzero per species
        let on_shell = eval_e_data(&data, 10.0, Vec3::new(9.8, 0.0, 0.0), &cfg).unwrap();
        // neutral data cancels exactly between the two species
        assert!(on_shell.norm() < 1e-14);
    }

    #[test]
    fn free_streaming_source_momentum_integral_consistency() {
        // direct and substituted momentum rules agree across the switchover
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let src = FreeStreamingSource {
            data,
            n_momentum: 14,
        };
        let t = 2.1; // past the switch at 2k = 2.0
        let y = Vec3::new(0.9, 0.2, 0.0);
        let mut subst = Vec::new();
        src.momentum_samples(0, t, y, &mut subst);
        // direct rule at the same point
        let sp = &src.data.species[0];
        let mut direct_total = 0.0;
        for (v, w) in momentum_box_rule(sp.profile.v_radius, 20) {
            let pos = y - sp.params.velocity(v) * t;
            direct_total += w * sp.profile.eval(pos, v);
        }
        let subst_total: f64 = subst.iter().map(|(_, w)| w).sum();
        assert!(
            (direct_total - subst_total).abs() < 2e-4 * direct_total.abs().max(1e-12),
            "direct {direct_total:.6e} vs substituted {subst_total:.6e}"
        );
    }

    #[test]
    fn quadrature_refinement_reports_failure_with_iterates() {
        let src = blob_source();
        // absurdly tight tolerance with no headroom to refine
        let cfg = RetardedQuadConfig {
            n_radial_panels: 2,
            n_polar: 2,
            n_azimuth: 4,
            n_momentum: 2,
            refine_levels: 1,
            rel_tol: 1e-15,
            abs_tol: 1e-300,
        };
        let err = eval_e_t(&src, &[0], 6.0, Vec3::new(1.0, 0.0, 0.0), &cfg).unwrap_err();
        match err {
            Error::QuadratureNoConvergence { levels, .. } => assert_eq!(levels, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn source_piece_decays_with_the_field_envelope() {
        let src = blob_source();
        let field = BumpField::new(0.5, 1.0, Vec3::unit_x()).unwrap();
        let cfg = RetardedQuadConfig {
            n_radial_panels: 6,
            n_polar: 6,
            ..Default::default()
        };
        let t = 30.0;
        let e = eval_e_s(&src, &field, &[0], t, Vec3::new(1.0, 0.5, 0.0), &cfg);
        assert!(e.is_ok());
    }
}
