//! Self-consistent field solve by fixed-point iteration.
//!
//! Alternates particle pushes with a field rebuild from the retarded-integral
//! decomposition on a space-time tabulation grid, until successive field
//! iterates agree in sup norm. The converged field is returned as a
//! [`TabulatedField`] that interpolates multilinearly in space and linearly
//! in time.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::flow::{InitialData, ParticleEnsemble};
use crate::numeric::par_map_indices;
use crate::relkin::{SpeciesParams, Vec3};

use super::retarded::{
    eval_b_data, eval_b_s, eval_b_t, eval_e_data, eval_e_s, eval_e_t, RetardedQuadConfig,
};
use super::{DecayBudget, FieldEvaluator, FieldGradSample, FieldSample};

/// Space-time tabulated field with multilinear interpolation.
#[derive(Clone, Debug)]
pub struct TabulatedField {
    times: Vec<f64>,
    half_extent: f64,
    n: usize,
    /// `e[time][ix * n^2 + iy * n + iz]`
    e: Vec<Vec<Vec3>>,
    b: Vec<Vec<Vec3>>,
    budget: DecayBudget,
}

impl TabulatedField {
    pub fn zero(times: Vec<f64>, half_extent: f64, n: usize, k: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(
                "tabulated field needs at least 2 nodes per dimension".into(),
            ));
        }
        if times.len() < 2 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "tabulated field needs at least 2 increasing times".into(),
            ));
        }
        let slots = vec![vec![Vec3::ZERO; n * n * n]; times.len()];
        Ok(TabulatedField {
            times,
            half_extent,
            n,
            e: slots.clone(),
            b: slots,
            budget: DecayBudget { c0: 1.0, k },
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes_per_dim(&self) -> usize {
        self.n
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    pub fn node_position(&self, i: usize) -> f64 {
        -self.half_extent + 2.0 * self.half_extent * i as f64 / (self.n - 1) as f64
    }

    pub fn node_index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    pub fn set(&mut self, ti: usize, idx: usize, e: Vec3, b: Vec3) {
        self.e[ti][idx] = e;
        self.b[ti][idx] = b;
    }

    pub fn values(&self, ti: usize, idx: usize) -> (Vec3, Vec3) {
        (self.e[ti][idx], self.b[ti][idx])
    }

    /// Sup-norm distance between two tabulations on the same grid.
    pub fn sup_distance(&self, other: &TabulatedField) -> f64 {
        let mut worst = 0.0f64;
        for ti in 0..self.times.len() {
            for idx in 0..self.e[ti].len() {
                worst = worst.max((self.e[ti][idx] - other.e[ti][idx]).max_abs());
                worst = worst.max((self.b[ti][idx] - other.b[ti][idx]).max_abs());
            }
        }
        worst
    }

    /// Fit the smallest decay budget covering the tabulated values and set it.
    pub fn fit_budget(&mut self) {
        let mut c0 = f64::MIN_POSITIVE;
        let k = self.budget.k;
        for (ti, t) in self.times.iter().enumerate() {
            for ix in 0..self.n {
                for iy in 0..self.n {
                    for iz in 0..self.n {
                        let x = Vec3::new(
                            self.node_position(ix),
                            self.node_position(iy),
                            self.node_position(iz),
                        );
                        let idx = self.node_index(ix, iy, iz);
                        let mag = (self.e[ti][idx].norm_sq() + self.b[ti][idx].norm_sq()).sqrt();
                        let r = x.norm();
                        let bound = (t + r + 2.0 * k) * (t - r + 2.0 * k);
                        c0 = c0.max(mag * bound);
                    }
                }
            }
        }
        self.budget = DecayBudget { c0: c0 * 1.05, k };
    }

    fn interp(&self, t: f64, x: Vec3, values: &[Vec<Vec3>]) -> Vec3 {
        let h = self.half_extent;
        if x.max_abs() >= h {
            return Vec3::ZERO;
        }
        // clamp t to the tabulated range
        let nt = self.times.len();
        let (t0, t1, theta) = if t <= self.times[0] {
            (0, 0, 0.0)
        } else if t >= self.times[nt - 1] {
            (nt - 1, nt - 1, 0.0)
        } else {
            let hi = self.times.partition_point(|&s| s < t).min(nt - 1);
            let lo = hi - 1;
            (lo, hi, (t - self.times[lo]) / (self.times[hi] - self.times[lo]))
        };
        let step = 2.0 * h / (self.n - 1) as f64;
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for (c, val) in x.as_array().iter().enumerate() {
            let u = (val + h) / step;
            let i = (u.floor() as usize).min(self.n - 2);
            cell[c] = i;
            frac[c] = u - i as f64;
        }
        let mut out = Vec3::ZERO;
        for (dx, wx) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
            for (dy, wy) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                for (dz, wz) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                    let idx = self.node_index(cell[0] + dx, cell[1] + dy, cell[2] + dz);
                    let w = wx * wy * wz;
                    let v0 = values[t0][idx];
                    let v = if t0 == t1 {
                        v0
                    } else {
                        v0 * (1.0 - theta) + values[t1][idx] * theta
                    };
                    out += v * w;
                }
            }
        }
        out
    }
}

impl FieldEvaluator for TabulatedField {
    fn sample(&self, t: f64, x: Vec3) -> FieldSample {
        if x.norm() > t + self.budget.k {
            return FieldSample::ZERO;
        }
        FieldSample::new(self.interp(t, x, &self.e), self.interp(t, x, &self.b))
    }

    fn sample_with_grad(&self, t: f64, x: Vec3) -> (FieldSample, FieldGradSample) {
        let s = self.sample(t, x);
        let h = self.half_extent / (self.n - 1) as f64;
        let mut grad = FieldGradSample::ZERO;
        for j in 0..3 {
            let mut dx = Vec3::ZERO;
            match j {
                0 => dx.x = h,
                1 => dx.y = h,
                _ => dx.z = h,
            }
            let sp = self.sample(t, x + dx);
            let sm = self.sample(t, x - dx);
            let de = (sp.e - sm.e) / (2.0 * h);
            let db = (sp.b - sm.b) / (2.0 * h);
            for i in 0..3 {
                grad.de.rows[i][j] = de.as_array()[i];
                grad.db.rows[i][j] = db.as_array()[i];
            }
        }
        (s, grad)
    }

    fn budget(&self) -> DecayBudget {
        self.budget
    }
}

/// Configuration of the fixed-point solve.
#[derive(Clone, Debug)]
pub struct PicardConfig {
    pub t_end: f64,
    pub n_times: usize,
    pub n_spatial: usize,
    pub ensemble_n: usize,
    pub ode_tol: f64,
    pub quad: RetardedQuadConfig,
    /// Sup-norm convergence threshold between field iterates.
    pub tol: f64,
    pub max_iterations: usize,
    /// Half-width of the deposition cell of the retarded ensemble source.
    pub source_cell_half_width: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            t_end: 2.0,
            n_times: 5,
            n_spatial: 7,
            ensemble_n: 4,
            ode_tol: 1e-8,
            quad: RetardedQuadConfig {
                n_radial_panels: 4,
                n_polar: 4,
                n_azimuth: 8,
                n_momentum: 4,
                refine_levels: 0,
                ..Default::default()
            },
            tol: 1e-8,
            max_iterations: 12,
            source_cell_half_width: 0.25,
        }
    }
}

/// Result of a converged fixed-point solve.
pub struct PicardOutcome {
    pub field: TabulatedField,
    pub ensemble: ParticleEnsemble,
    pub iterations: usize,
    /// Successive sup-norm differences between field iterates.
    pub diffs: Vec<f64>,
}

/// Fixed-point coupling of the particle push and the retarded-field rebuild.
pub fn self_consistent_solve(data: &InitialData, cfg: &PicardConfig) -> Result<PicardOutcome> {
    data.validate(1e-8)?;
    let k = data.max_x_radius();
    let times: Vec<f64> = (0..cfg.n_times)
        .map(|i| cfg.t_end * i as f64 / (cfg.n_times - 1) as f64)
        .collect();
    let half_extent = cfg.t_end + 2.0 * k;
    let mut field = TabulatedField::zero(times.clone(), half_extent, cfg.n_spatial, k)?;
    let species_sel: Vec<usize> = (0..data.species.len()).collect();

    let mut diffs: Vec<f64> = Vec::new();
    let mut ensemble = crate::flow::build_ensemble(data, cfg.ensemble_n, 1 << 28)?;
    for iteration in 1..=cfg.max_iterations {
        let propagate_times: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
        ensemble.propagate(&field, &propagate_times, cfg.ode_tol)?;
        let src = ensemble.retarded_source(cfg.source_cell_half_width)?;

        let mut next = TabulatedField::zero(times.clone(), half_extent, cfg.n_spatial, k)?;
        let n = cfg.n_spatial;
        for (ti, &t) in times.iter().enumerate() {
            let values: Vec<Result<(Vec3, Vec3)>> = par_map_indices(n * n * n, |flat| {
                let ix = flat / (n * n);
                let iy = (flat / n) % n;
                let iz = flat % n;
                let x = Vec3::new(
                    next.node_position(ix),
                    next.node_position(iy),
                    next.node_position(iz),
                );
                if t == 0.0 {
                    return Ok((data.em.e0(x), data.em.b0(x)));
                }
                if x.norm() > t + k {
                    return Ok((Vec3::ZERO, Vec3::ZERO));
                }
                let e = eval_e_data(data, t, x, &cfg.quad)?
                    + eval_e_t(&src, &species_sel, t, x, &cfg.quad)?
                    + eval_e_s(&src, &field, &species_sel, t, x, &cfg.quad)?;
                let b = eval_b_data(data, t, x, &cfg.quad)?
                    + eval_b_t(&src, &species_sel, t, x, &cfg.quad)?
                    + eval_b_s(&src, &field, &species_sel, t, x, &cfg.quad)?;
                Ok((e, b))
            });
            for (flat, value) in values.into_iter().enumerate() {
                let (e, b) = value?;
                next.set(ti, flat, e, b);
            }
        }

        let diff = next.sup_distance(&field);
        diffs.push(diff);
        field = next;
        if diff < cfg.tol {
            field.fit_budget();
            return Ok(PicardOutcome {
                field,
                ensemble,
                iterations: iteration,
                diffs,
            });
        }
        // three consecutive non-contracting steps abort the solve
        if diffs.len() >= 4 {
            let ratios: Vec<f64> = diffs
                .windows(2)
                .map(|w| w[1] / w[0].max(f64::MIN_POSITIVE))
                .collect();
            if ratios.iter().rev().take(3).all(|&r| r >= 1.0) {
                return Err(Error::NonContraction { ratios });
            }
        }
    }
    Err(Error::NonContraction {
        ratios: diffs
            .windows(2)
            .map(|w| w[1] / w[0].max(f64::MIN_POSITIVE))
            .collect(),
    })
}

const FIELD_MAGIC: &[u8; 8] = b"RVMFLD01";

/// Persist a tabulated field: header (grid spec, species params, fixed-point
/// metadata) followed by row-major `(E, B)` arrays per time slice, all values
/// IEEE-754 little-endian doubles.
pub fn write_field_snapshot(
    field: &TabulatedField,
    species: &[SpeciesParams],
    iterations: usize,
    final_diff: f64,
    path: &Path,
) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(field.times.len() as u32).to_le_bytes())?;
    w.write_all(&(field.n as u32).to_le_bytes())?;
    w.write_all(&field.half_extent.to_le_bytes())?;
    w.write_all(&field.budget.c0.to_le_bytes())?;
    w.write_all(&field.budget.k.to_le_bytes())?;
    for t in &field.times {
        w.write_all(&t.to_le_bytes())?;
    }
    w.write_all(&(species.len() as u32).to_le_bytes())?;
    for sp in species {
        let label = sp.label.as_bytes();
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label)?;
        for v in [sp.mass, sp.charge, sp.support_radius] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&(iterations as u32).to_le_bytes())?;
    w.write_all(&final_diff.to_le_bytes())?;
    for ti in 0..field.times.len() {
        for v in &field.e[ti] {
            for c in v.as_array() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        for v in &field.b[ti] {
            for c in v.as_array() {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Read back a field snapshot. Returns the field, species parameters and
/// fixed-point metadata `(iterations, final_diff)`.
pub fn read_field_snapshot(path: &Path) -> Result<(TabulatedField, Vec<SpeciesParams>, usize, f64)> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Snapshot("bad magic bytes".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let n_times = read_u32(&mut r)? as usize;
    let n = read_u32(&mut r)? as usize;
    let mut read_f64 = |r: &mut dyn Read| -> Result<f64> {
        r.read_exact(&mut b8)?;
        Ok(f64::from_le_bytes(b8))
    };
    let half_extent = read_f64(&mut r)?;
    let c0 = read_f64(&mut r)?;
    let k = read_f64(&mut r)?;
    let mut times = Vec::with_capacity(n_times);
    for _ in 0..n_times {
        times.push(read_f64(&mut r)?);
    }
    let mut field = TabulatedField::zero(times, half_extent, n, k)?;
    field.budget = DecayBudget { c0, k };
    let mut b4b = [0u8; 4];
    r.read_exact(&mut b4b)?;
    let n_species = u32::from_le_bytes(b4b) as usize;
    let mut species = Vec::with_capacity(n_species);
    for _ in 0..n_species {
        r.read_exact(&mut b4b)?;
        let label_len = u32::from_le_bytes(b4b) as usize;
        let mut label_bytes = vec![0u8; label_len];
        r.read_exact(&mut label_bytes)?;
        let label = String::from_utf8(label_bytes)
            .map_err(|_| Error::Snapshot("label is not valid UTF-8".into()))?;
        let mut vals = [0.0f64; 3];
        for v in vals.iter_mut() {
            r.read_exact(&mut b8)?;
            *v = f64::from_le_bytes(b8);
        }
        species.push(SpeciesParams::new(label, vals[0], vals[1], vals[2])?);
    }
    r.read_exact(&mut b4b)?;
    let iterations = u32::from_le_bytes(b4b) as usize;
    r.read_exact(&mut b8)?;
    let final_diff = f64::from_le_bytes(b8);
    for ti in 0..n_times {
        for idx in 0..n * n * n {
            let mut e = [0.0f64; 3];
            for c in e.iter_mut() {
                r.read_exact(&mut b8)?;
                *c = f64::from_le_bytes(b8);
            }
            field.e[ti][idx] = Vec3::from_array(e);
        }
        for idx in 0..n * n * n {
            let mut b = [0.0f64; 3];
            for c in b.iter_mut() {
                r.read_exact(&mut b8)?;
                *c = f64::from_le_bytes(b8);
            }
            field.b[ti][idx] = Vec3::from_array(b);
        }
    }
    Ok((field, species, iterations, final_diff))
}
