//! Asymptotic profiles in momentum space: the limiting spatial charge, the
//! rescaled field limits along rays, the drift corrections they induce, and
//! the corrected (modified) states whose large-time differences certify the
//! decay rate.

mod kernels;
mod qinf;
mod ratefit;

pub use kernels::{
    asymptotic_fields, asymptotic_fields_single, tabulate_asymptotic_fields, KernelProfile,
    KernelQuadConfig, SpeciesKernelInput,
};
pub use qinf::{
    extrapolate_q_infinity, spatial_average_q, ChargeExtrapolation, ChargeProfile,
    ChargeQuadConfig,
};
pub use ratefit::{envelope, rate_fit, RateFit};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::FieldEvaluator;
use crate::flow::CharacteristicFlow;
use crate::relkin::{energy, velocity, Vec3};

/// Uniform tensor grid over the momentum cube `[-radius, radius]^3` with
/// trilinear interpolation and zero extension outside.
#[derive(Clone, Debug)]
pub struct MomentumGrid {
    n: usize,
    radius: f64,
    nodes: Vec<Vec3>,
}

impl MomentumGrid {
    pub fn new(n: usize, radius: f64) -> Result<Self> {
        if n < 1 || !(radius > 0.0) {
            return Err(Error::InvalidParameter(
                "momentum grid needs n >= 1 and a positive radius".into(),
            ));
        }
        let mut nodes = Vec::with_capacity(n * n * n);
        for ix in 0..n {
            for iy in 0..n {
                for iz in 0..n {
                    nodes.push(Vec3::new(
                        Self::coord(n, radius, ix),
                        Self::coord(n, radius, iy),
                        Self::coord(n, radius, iz),
                    ));
                }
            }
        }
        Ok(MomentumGrid { n, radius, nodes })
    }

    fn coord(n: usize, radius: f64, i: usize) -> f64 {
        if n == 1 {
            0.0
        } else {
            -radius + 2.0 * radius * i as f64 / (n - 1) as f64
        }
    }

    pub fn n_per_dim(&self) -> usize {
        self.n
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    /// Trilinear interpolation of node values, zero outside the cube.
    pub fn interpolate(&self, values: &[f64], v: Vec3) -> f64 {
        if self.n == 1 {
            return if v == Vec3::ZERO { values[0] } else { 0.0 };
        }
        if v.max_abs() >= self.radius {
            return 0.0;
        }
        let step = 2.0 * self.radius / (self.n - 1) as f64;
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for (c, val) in v.as_array().iter().enumerate() {
            let u = (val + self.radius) / step;
            let i = (u.floor() as usize).min(self.n - 2);
            cell[c] = i;
            frac[c] = u - i as f64;
        }
        let mut out = 0.0;
        for (dx, wx) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
            for (dy, wy) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                for (dz, wz) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                    out += wx * wy * wz
                        * values[self.index(cell[0] + dx, cell[1] + dy, cell[2] + dz)];
                }
            }
        }
        out
    }

    /// Componentwise trilinear interpolation of vector node values.
    pub fn interpolate_vec(&self, values: &[Vec3], v: Vec3) -> Vec3 {
        let xs: Vec<f64> = values.iter().map(|w| w.x).collect();
        let ys: Vec<f64> = values.iter().map(|w| w.y).collect();
        let zs: Vec<f64> = values.iter().map(|w| w.z).collect();
        Vec3::new(
            self.interpolate(&xs, v),
            self.interpolate(&ys, v),
            self.interpolate(&zs, v),
        )
    }
}

/// Drift corrections induced by the asymptotic field at one momentum.
#[derive(Clone, Copy, Debug)]
pub struct Corrections {
    /// Asymptotic Lorentz force `E + vhat x B`.
    pub lorentz: Vec3,
    /// Time-like correction `-vhat . lorentz`.
    pub time_shift: f64,
    /// Space-like correction `-lorentz`.
    pub space_shift: Vec3,
    /// Comoving shift `space_shift - vhat * time_shift`, equal to
    /// `vhat (E.vhat) - (E + vhat x B)`.
    pub combined: Vec3,
}

/// Build the corrections from asymptotic field values at momentum `v` and
/// cross-check the two closed forms of the combined shift.
pub fn corrections(e: Vec3, b: Vec3, v: Vec3) -> Result<Corrections> {
    let vh = velocity(v);
    let lorentz = e + vh.cross(b);
    let time_shift = -vh.dot(lorentz);
    let space_shift = -lorentz;
    let combined = space_shift - vh * time_shift;
    let alt = vh * e.dot(vh) - (e + vh.cross(b));
    let scale = 1.0 + e.norm().max(b.norm());
    if (combined - alt).max_abs() > 1e-12 * scale {
        return Err(Error::Precondition(format!(
            "correction identity violated by {:.3e}",
            (combined - alt).max_abs()
        )));
    }
    Ok(Corrections {
        lorentz,
        time_shift,
        space_shift,
        combined,
    })
}

/// Asymptotic profiles tabulated on a momentum grid: per-species charge
/// limits, their charge-weighted total, the field limits and the derived
/// corrections.
#[derive(Clone, Debug)]
pub struct AsymptoticProfile {
    pub grid: MomentumGrid,
    /// Per-species charge limit on the grid.
    pub q_inf: Vec<Vec<f64>>,
    /// `sum_a e_a m_a^3 q_a`.
    pub q_inf_total: Vec<f64>,
    pub e_field: Vec<Vec3>,
    pub b_field: Vec<Vec3>,
    pub lorentz: Vec<Vec3>,
    pub time_shift: Vec<f64>,
    pub space_shift: Vec<Vec3>,
    pub combined: Vec<Vec3>,
}

impl AsymptoticProfile {
    /// Assemble from per-species charge limits and tabulated field limits.
    /// `charge_mass: (e_a, m_a)` per species, ordered like `q_inf`.
    pub fn assemble(
        grid: MomentumGrid,
        q_inf: Vec<Vec<f64>>,
        charge_mass: &[(f64, f64)],
        fields: Vec<(Vec3, Vec3)>,
    ) -> Result<Self> {
        if q_inf.len() != charge_mass.len() {
            return Err(Error::InvalidParameter(
                "charge limits and species parameters must align".into(),
            ));
        }
        if fields.len() != grid.len() {
            return Err(Error::InvalidParameter(
                "field table must cover every grid node".into(),
            ));
        }
        let mut q_total = vec![0.0; grid.len()];
        for (per_species, &(e, m)) in q_inf.iter().zip(charge_mass) {
            if per_species.len() != grid.len() {
                return Err(Error::InvalidParameter(
                    "charge table must cover every grid node".into(),
                ));
            }
            for (tot, q) in q_total.iter_mut().zip(per_species) {
                *tot += e * m.powi(3) * q;
            }
        }
        let mut e_field = Vec::with_capacity(grid.len());
        let mut b_field = Vec::with_capacity(grid.len());
        let mut lorentz = Vec::with_capacity(grid.len());
        let mut time_shift = Vec::with_capacity(grid.len());
        let mut space_shift = Vec::with_capacity(grid.len());
        let mut combined = Vec::with_capacity(grid.len());
        for (node, &(e, b)) in grid.nodes().iter().zip(&fields) {
            let c = corrections(e, b, *node)?;
            e_field.push(e);
            b_field.push(b);
            lorentz.push(c.lorentz);
            time_shift.push(c.time_shift);
            space_shift.push(c.space_shift);
            combined.push(c.combined);
        }
        Ok(AsymptoticProfile {
            grid,
            q_inf,
            q_inf_total: q_total,
            e_field,
            b_field,
            lorentz,
            time_shift,
            space_shift,
            combined,
        })
    }

    /// Tabulate the field columns by sampling `t_ref^2 (E, B)(t_ref, t_ref vhat)`
    /// of a concrete evaluator. Valid whenever the evaluator settles onto its
    /// ray limit by `t_ref`.
    pub fn field_limit_table(
        field: &dyn FieldEvaluator,
        grid: &MomentumGrid,
        t_ref: f64,
    ) -> Vec<(Vec3, Vec3)> {
        grid.nodes()
            .iter()
            .map(|&v| {
                let vh = velocity(v);
                let s = field.sample(t_ref, vh * t_ref);
                (s.e * (t_ref * t_ref), s.b * (t_ref * t_ref))
            })
            .collect()
    }

    /// Interpolated asymptotic field values at momentum `v`.
    pub fn fields_at(&self, v: Vec3) -> (Vec3, Vec3) {
        (
            self.grid.interpolate_vec(&self.e_field, v),
            self.grid.interpolate_vec(&self.b_field, v),
        )
    }

    /// Corrections at momentum `v`, derived from the interpolated fields so
    /// the closed-form identities hold exactly at the query point.
    pub fn corrections_at(&self, v: Vec3) -> Result<Corrections> {
        let (e, b) = self.fields_at(v);
        corrections(e, b, v)
    }

    /// Interpolated total charge limit.
    pub fn q_total_at(&self, v: Vec3) -> f64 {
        self.grid.interpolate(&self.q_inf_total, v)
    }
}

/// Corrected comoving state: the density evaluated along log-shifted
/// characteristics. Requires `t >= 1`.
pub fn modified_state_h(
    flow: &CharacteristicFlow,
    profile: &AsymptoticProfile,
    t: f64,
    x: Vec3,
    v: Vec3,
) -> Result<f64> {
    if !(t >= 1.0) {
        return Err(Error::Precondition(format!(
            "corrected state defined for t >= 1, got {t}"
        )));
    }
    let c = profile.corrections_at(v)?;
    let shift = c.combined * (flow.species.params.coupling() * t.ln() / energy(v));
    flow.comoving_density(t, x + shift, v)
}

/// Corrected lab state with the reparametrized time. `v` is the physical
/// momentum. Rejects arguments where the shifted evaluation time would be
/// negative.
pub fn modified_state_h_tilde(
    flow: &CharacteristicFlow,
    profile: &AsymptoticProfile,
    t: f64,
    x: Vec3,
    v: Vec3,
) -> Result<f64> {
    if !(t >= 1.0) {
        return Err(Error::Precondition(format!(
            "corrected state defined for t >= 1, got {t}"
        )));
    }
    let params = &flow.species.params;
    let v_rescaled = params.unscale_momentum(v);
    let energy_phys = params.energy(v);
    let c = profile.corrections_at(v_rescaled)?;
    let charge = params.charge;
    let s_eval = t * energy_phys + charge / energy_phys * t.ln() * c.time_shift;
    if s_eval < 0.0 {
        return Err(Error::Precondition(format!(
            "reparametrized time {s_eval:.3e} is negative; state undefined there"
        )));
    }
    let y = x + v * t + c.space_shift * (charge / energy_phys * t.ln());
    flow.lab_density(s_eval, y, v_rescaled)
}

/// Discrepancy between the rescaled field along a ray and the asymptotic
/// profile: `(|t^2 E(t, x + t vhat) - E(v)|, |t^2 B(...) - B(v)|)`.
pub fn field_limit_error(
    field: &dyn FieldEvaluator,
    profile: &AsymptoticProfile,
    t: f64,
    x: Vec3,
    v: Vec3,
) -> (f64, f64) {
    let vh = velocity(v);
    let s = field.sample(t, x + vh * t);
    let (e_inf, b_inf) = profile.fields_at(v);
    (
        (s.e * (t * t) - e_inf).norm(),
        (s.b * (t * t) - b_inf).norm(),
    )
}

/// Earliest time at which the cone-restricted field limit applies for ray
/// fractions up to `gamma`:
/// `T(gamma) = 2k / ((1 - gamma)(1 + vhat_max)) + 1`.
pub fn transport_window_start(gamma: f64, vhat_max: f64, k: f64) -> Result<f64> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::Precondition(format!(
            "cone fraction must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(2.0 * k / ((1.0 - gamma) * (1.0 + vhat_max)) + 1.0)
}

/// Write the asymptotic profile as CSV with the fixed column set
/// `vx,vy,vz,Qinf,Ex,...,Ctz`.
pub fn write_profile_csv(profile: &AsymptoticProfile, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "vx,vy,vz,Qinf,Ex,Ey,Ez,Bx,By,Bz,Lx,Ly,Lz,D,Ctx,Cty,Ctz"
    )?;
    for (i, v) in profile.grid.nodes().iter().enumerate() {
        let e = profile.e_field[i];
        let b = profile.b_field[i];
        let l = profile.lorentz[i];
        let ct = profile.combined[i];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            v.x,
            v.y,
            v.z,
            profile.q_inf_total[i],
            e.x,
            e.y,
            e.z,
            b.x,
            b.y,
            b.z,
            l.x,
            l.y,
            l.z,
            profile.time_shift[i],
            ct.x,
            ct.y,
            ct.z
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Write a charge profile as CSV with columns `species,t,vx,vy,vz,q`.
pub fn write_charge_csv(profile: &ChargeProfile, labels: &[String], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "species,t,vx,vy,vz,q")?;
    for (si, per_time) in profile.values.iter().enumerate() {
        for (ti, row) in per_time.iter().enumerate() {
            for (ni, q) in row.iter().enumerate() {
                let v = profile.grid.nodes()[ni];
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    labels[si], profile.times[ti], v.x, v.y, v.z, q
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write rate fits as CSV with columns
/// `check_name,p,q,C,stability_ratio,n_points`.
pub fn write_rate_fits_csv(fits: &[(String, RateFit)], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "check_name,p,q,C,stability_ratio,n_points")?;
    for (name, fit) in fits {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            name, fit.log_power, fit.poly_power, fit.constant, fit.stability_ratio, fit.n_points
        )?;
    }
    w.flush()?;
    Ok(())
}
