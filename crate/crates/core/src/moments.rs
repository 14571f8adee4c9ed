//! Charge and current densities from particle ensembles, their asymptotic
//! ray profiles, and the pointwise moment-asymptotics discrepancy.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::ParticleEnsemble;
use crate::relkin::{energy, momentum_from_velocity, velocity, Vec3};

/// Cell-averaged charge and current densities on a uniform cube grid.
#[derive(Clone, Debug)]
pub struct MomentField {
    pub t: f64,
    pub n: usize,
    pub half_extent: f64,
    pub rho: Vec<f64>,
    pub j: Vec<Vec3>,
    /// Signed charge weight that fell outside the grid.
    pub overflow_charge: f64,
    pub overflow_count: usize,
}

impl MomentField {
    pub fn cell_volume(&self) -> f64 {
        (2.0 * self.half_extent / self.n as f64).powi(3)
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let h = 2.0 * self.half_extent / self.n as f64;
        Vec3::new(
            -self.half_extent + h * (ix as f64 + 0.5),
            -self.half_extent + h * (iy as f64 + 0.5),
            -self.half_extent + h * (iz as f64 + 0.5),
        )
    }

    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    /// Total deposited charge, `sum_cells rho * cell volume`, excluding
    /// overflow.
    pub fn total_charge(&self) -> f64 {
        let vol = self.cell_volume();
        let mut acc = crate::numeric::KahanSum::new();
        for r in &self.rho {
            acc.add(r * vol);
        }
        acc.value()
    }
}

/// Deposit ensemble weights into cells containing the lab position at stored
/// time index `ti`. Per-species deposition merges in species order, so the
/// result is independent of the worker count.
pub fn compute_rho_j(
    ensemble: &ParticleEnsemble,
    ti: usize,
    n: usize,
    half_extent: f64,
) -> Result<MomentField> {
    if n == 0 || !(half_extent > 0.0) {
        return Err(Error::InvalidParameter("moment grid must be non-empty".into()));
    }
    let t = ensemble.times.get(ti).copied().ok_or_else(|| {
        Error::Precondition(format!("no cached trajectories at time index {ti}"))
    })?;
    let mut field = MomentField {
        t,
        n,
        half_extent,
        rho: vec![0.0; n * n * n],
        j: vec![Vec3::ZERO; n * n * n],
        overflow_charge: 0.0,
        overflow_count: 0,
    };
    let inv_vol = 1.0 / field.cell_volume();
    let h = 2.0 * half_extent / n as f64;
    for sp in &ensemble.species {
        let e = sp.data.params.charge;
        let slice = &sp.slices[ti];
        for ((x, v), w) in slice.x.iter().zip(&slice.v).zip(&sp.w) {
            let lab = *x + velocity(*v) * slice.s;
            let mut idx = [0usize; 3];
            let mut inside = true;
            for (c, val) in lab.as_array().iter().enumerate() {
                let u = (val + half_extent) / h;
                if u < 0.0 || u >= n as f64 {
                    inside = false;
                    break;
                }
                idx[c] = u as usize;
            }
            if !inside {
                field.overflow_charge += e * w;
                field.overflow_count += 1;
                continue;
            }
            let cell = field.index(idx[0], idx[1], idx[2]);
            field.rho[cell] += e * w * inv_vol;
            // species velocity equals the unit-mass velocity of the rescaled momentum
            field.j[cell] += velocity(*v) * (e * w * inv_vol);
        }
    }
    Ok(field)
}

/// Asymptotic ray densities built from a charge-profile interpolant
/// `q(v)`: `rho = t^-3 <u>^5 q(u)` at `u = inverse-velocity(x/t)` inside the
/// light cone, and `j = (x/t) rho`.
pub fn asymptotic_rho_j<Q>(q_total: Q, t: f64, x: Vec3) -> Result<(f64, Vec3)>
where
    Q: Fn(Vec3) -> f64,
{
    if !(t > 0.0) {
        return Err(Error::Precondition(format!(
            "asymptotic densities need t > 0, got {t}"
        )));
    }
    let ray = x / t;
    if ray.norm_sq() >= 1.0 {
        return Ok((0.0, Vec3::ZERO));
    }
    let u = momentum_from_velocity(ray)?;
    let rho = energy(u).powi(5) * q_total(u) / t.powi(3);
    Ok((rho, ray * rho))
}

/// Discrepancy of one velocity moment against its asymptotic profile.
#[derive(Clone, Copy, Debug)]
pub struct MomentDiscrepancy {
    pub measured: f64,
    pub expected: f64,
    pub error: f64,
    /// Set when the estimation cell contained no particles.
    pub low_confidence: bool,
}

/// Compare `t^3 integral h(v) f_a(t, x, v) dv` (cell-averaged from the
/// ensemble) with `m^3 [<.>^5 h(m .) q_a](inverse-velocity(x/t))`.
///
/// `h` takes the physical momentum; `q_a` is the per-species charge profile
/// in rescaled momentum. `cell_half_width` sets the averaging cell.
pub fn moment_asymptotics_error<H, Q>(
    ensemble: &ParticleEnsemble,
    species: usize,
    ti: usize,
    x: Vec3,
    h: H,
    q_a: Q,
    cell_half_width: f64,
) -> Result<MomentDiscrepancy>
where
    H: Fn(Vec3) -> f64,
    Q: Fn(Vec3) -> f64,
{
    let sp = &ensemble.species[species];
    let slice = sp.slices.get(ti).ok_or_else(|| {
        Error::Precondition(format!("no cached trajectories at time index {ti}"))
    })?;
    let t = slice.s;
    if !(x.norm() < t) {
        return Err(Error::Precondition(format!(
            "moment asymptotics need |x| < t, got |x| = {} at t = {t}",
            x.norm()
        )));
    }
    let mass = sp.data.params.mass;
    let cell_volume = (2.0 * cell_half_width).powi(3);
    let mut acc = crate::numeric::KahanSum::new();
    let mut count = 0usize;
    for ((cx, v), w) in slice.x.iter().zip(&slice.v).zip(&sp.w) {
        let lab = *cx + velocity(*v) * t;
        if (lab - x).max_abs() > cell_half_width {
            continue;
        }
        acc.add(w * h(*v * mass) / cell_volume);
        count += 1;
    }
    let measured = t.powi(3) * acc.value();
    let ray = x / t;
    let u = momentum_from_velocity(ray)?;
    let expected = mass.powi(3) * energy(u).powi(5) * h(u * mass) * q_a(u);
    Ok(MomentDiscrepancy {
        measured,
        expected,
        error: (measured - expected).abs(),
        low_confidence: count == 0,
    })
}

/// Export a set of moment fields as CSV with columns
/// `t,cell_center_x,cell_center_y,cell_center_z,rho,jx,jy,jz`.
pub fn write_moments_csv(fields: &[MomentField], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "t,cell_center_x,cell_center_y,cell_center_z,rho,jx,jy,jz")?;
    for f in fields {
        for ix in 0..f.n {
            for iy in 0..f.n {
                for iz in 0..f.n {
                    let c = f.cell_center(ix, iy, iz);
                    let idx = f.index(ix, iy, iz);
                    let j = f.j[idx];
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        f.t, c.x, c.y, c.z, f.rho[idx], j.x, j.y, j.z
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ZeroField;
    use crate::flow::{build_ensemble, InitialData};

    fn propagated_ensemble(times: &[f64]) -> ParticleEnsemble {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let mut ens = build_ensemble(&data, 5, 1 << 30).unwrap();
        let field = ZeroField::new(1.0);
        ens.propagate(&field, times, 1e-9).unwrap();
        ens
    }

    #[test]
    fn empty_ensemble_deposits_nothing() {
        let mut data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        for sp in &mut data.species {
            sp.profile = crate::flow::BumpProfile::new(0.0, 1.0, 1.0).unwrap();
        }
        let mut ens = build_ensemble(&data, 4, 1 << 30).unwrap();
        ens.propagate(&ZeroField::new(1.0), &[1.0], 1e-9).unwrap();
        let m = compute_rho_j(&ens, 0, 4, 3.0).unwrap();
        assert!(m.rho.iter().all(|&r| r == 0.0));
        assert_eq!(m.overflow_count, 0);
    }

    #[test]
    fn neutral_deposition_cancels_at_every_time() {
        let ens = propagated_ensemble(&[1.0, 5.0]);
        for ti in 0..2 {
            let m = compute_rho_j(&ens, ti, 8, 8.0).unwrap();
            assert!(m.total_charge().abs() < 1e-12);
            assert_eq!(m.overflow_count, 0);
        }
    }

    #[test]
    fn deposition_conserves_signed_weight_per_species() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let mut ens = build_ensemble(&data, 5, 1 << 30).unwrap();
        ens.species.truncate(1); // single species: nonzero totals
        ens.propagate(&ZeroField::new(1.0), &[3.0], 1e-9).unwrap();
        let expected = ens.species[0].total_weight();
        let m = compute_rho_j(&ens, 0, 6, 6.0).unwrap();
        assert!(m.overflow_count == 0);
        assert!((m.total_charge() - expected).abs() < 1e-12 * expected.abs().max(1.0));
    }

    #[test]
    fn current_is_dominated_by_absolute_charge_density() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let mut ens = build_ensemble(&data, 5, 1 << 30).unwrap();
        ens.species.truncate(1);
        ens.propagate(&ZeroField::new(1.0), &[4.0], 1e-9).unwrap();
        let m = compute_rho_j(&ens, 0, 6, 6.0).unwrap();
        for idx in 0..m.rho.len() {
            assert!(m.j[idx].norm() <= m.rho[idx].abs() + 1e-15);
        }
    }

    #[test]
    fn asymptotic_densities_respect_the_light_cone_and_ray_identity() {
        let q = |u: Vec3| (1.0 - u.norm_sq()).max(0.0);
        // outside the cone
        let (rho, j) = asymptotic_rho_j(q, 2.0, Vec3::new(2.5, 0.0, 0.0)).unwrap();
        assert_eq!((rho, j), (0.0, Vec3::ZERO));
        // at the origin: rho = q(0) / t^3, j = 0
        let (rho0, j0) = asymptotic_rho_j(q, 2.0, Vec3::ZERO).unwrap();
        assert!((rho0 - q(Vec3::ZERO) / 8.0).abs() < 1e-15);
        assert_eq!(j0, Vec3::ZERO);
        // j - (x/t) rho = 0 identically
        let x = Vec3::new(0.4, -0.8, 0.2);
        let t = 3.0;
        let (rho, j) = asymptotic_rho_j(q, t, x).unwrap();
        assert_eq!(j - (x / t) * rho, Vec3::ZERO);
    }

    #[test]
    fn moment_error_zero_for_empty_profile() {
        let mut data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        for sp in &mut data.species {
            sp.profile = crate::flow::BumpProfile::new(0.0, 1.0, 1.0).unwrap();
        }
        let mut ens = build_ensemble(&data, 3, 1 << 30).unwrap();
        ens.propagate(&ZeroField::new(1.0), &[5.0], 1e-9).unwrap();
        let d = moment_asymptotics_error(&ens, 0, 0, Vec3::ZERO, |_| 1.0, |_| 0.0, 0.5).unwrap();
        assert_eq!(d.error, 0.0);
        assert!(d.low_confidence);
    }

    #[test]
    fn moments_csv_round_trip() {
        let ens = propagated_ensemble(&[2.0]);
        let m = compute_rho_j(&ens, 0, 3, 4.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moments.csv");
        write_moments_csv(std::slice::from_ref(&m), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,cell_center_x,cell_center_y,cell_center_z,rho,jx,jy,jz"
        );
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), 8);
        let t: f64 = first[0].parse().unwrap();
        assert_eq!(t, 2.0);
        let rho: f64 = first[4].parse().unwrap();
        assert_eq!(rho, m.rho[0]);
    }
}
