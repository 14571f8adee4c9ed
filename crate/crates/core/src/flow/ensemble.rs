//! Weighted particle ensembles: deterministic tensor-grid sampling of the
//! initial data, trajectory propagation, support diagnostics and binary
//! snapshots.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fields::{EnsembleSource, FieldEvaluator};
use crate::numeric::compensated_sum;
use crate::relkin::{velocity, SpeciesParams, Vec3};

use super::{CharState, CharacteristicFlow, InitialData, SpeciesData};

/// Trajectory slice of one species at one stored time: comoving positions and
/// rescaled momenta, indexed like the weight array.
#[derive(Clone, Debug)]
pub struct TimeSlice {
    pub s: f64,
    pub x: Vec<Vec3>,
    pub v: Vec<Vec3>,
}

/// One species' share of the ensemble.
#[derive(Clone, Debug)]
pub struct SpeciesEnsemble {
    pub data: SpeciesData,
    /// Initial positions.
    pub x0: Vec<Vec3>,
    /// Initial rescaled momenta.
    pub v0: Vec<Vec3>,
    /// Non-negative quadrature weights, `f0 * cell volume`.
    pub w: Vec<f64>,
    /// Trajectories at the requested output times; empty until propagated.
    pub slices: Vec<TimeSlice>,
}

impl SpeciesEnsemble {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(&self.w)
    }
}

/// Weighted phase-space samples of every species, with cached trajectories.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub species: Vec<SpeciesEnsemble>,
    pub times: Vec<f64>,
}

/// Deterministic tensor-grid discretization of the initial data. Cell centers
/// carry weight `f0(x, v) * cell volume`; empty cells are dropped.
pub fn build_ensemble(data: &InitialData, n_per_dim: usize, budget: usize) -> Result<ParticleEnsemble> {
    let cells = n_per_dim
        .checked_pow(6)
        .ok_or(Error::ResolutionBudget {
            requested: usize::MAX,
            budget,
        })?;
    if cells > budget {
        return Err(Error::ResolutionBudget {
            requested: cells,
            budget,
        });
    }
    if n_per_dim == 0 {
        return Err(Error::InvalidParameter("ensemble resolution must be >= 1".into()));
    }
    let mut species = Vec::with_capacity(data.species.len());
    for sp in &data.species {
        let kx = sp.profile.x_radius;
        let kv = sp.profile.v_radius;
        let hx = 2.0 * kx / n_per_dim as f64;
        let hv = 2.0 * kv / n_per_dim as f64;
        let cell_volume = hx.powi(3) * hv.powi(3);
        let centers_x: Vec<f64> = (0..n_per_dim)
            .map(|i| -kx + hx * (i as f64 + 0.5))
            .collect();
        let centers_v: Vec<f64> = (0..n_per_dim)
            .map(|i| -kv + hv * (i as f64 + 0.5))
            .collect();
        let mut x0 = Vec::new();
        let mut v0 = Vec::new();
        let mut w = Vec::new();
        for &ax in &centers_x {
            for &bx in &centers_x {
                for &cx in &centers_x {
                    let pos = Vec3::new(ax, bx, cx);
                    if pos.norm() > kx {
                        continue;
                    }
                    for &av in &centers_v {
                        for &bv in &centers_v {
                            for &cv in &centers_v {
                                let mom = Vec3::new(av, bv, cv);
                                let f = sp.profile.eval(pos, mom);
                                if f > 0.0 {
                                    x0.push(pos);
                                    v0.push(sp.params.unscale_momentum(mom));
                                    w.push(f * cell_volume);
                                }
                            }
                        }
                    }
                }
            }
        }
        species.push(SpeciesEnsemble {
            data: sp.clone(),
            x0,
            v0,
            w,
            slices: Vec::new(),
        });
    }
    Ok(ParticleEnsemble {
        species,
        times: Vec::new(),
    })
}

impl ParticleEnsemble {
    /// Signed total charge `sum_a e_a sum_i w_i`.
    pub fn total_charge(&self) -> f64 {
        let per: Vec<f64> = self
            .species
            .iter()
            .map(|s| s.data.params.charge * s.total_weight())
            .collect();
        compensated_sum(&per)
    }

    /// Integrate every particle forward through the sorted `times` and cache
    /// the slices. Particles are independent; the map is order-preserving.
    pub fn propagate(&mut self, field: &dyn FieldEvaluator, times: &[f64], tol: f64) -> Result<()> {
        if times.is_empty() || times.windows(2).any(|p| p[1] <= p[0]) || times[0] < 0.0 {
            return Err(Error::InvalidParameter(
                "output times must be non-negative and strictly increasing".into(),
            ));
        }
        self.times = times.to_vec();
        for sp in &mut self.species {
            let flow = CharacteristicFlow::new(field, &sp.data, tol);
            let n = sp.len();
            let trajectories: Vec<Result<Vec<CharState>>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut state = CharState::new(sp.x0[i], sp.v0[i], 0.0);
                    let mut states = Vec::with_capacity(times.len());
                    for &t in times {
                        state = flow.integrate(state, t)?;
                        states.push(state);
                    }
                    Ok(states)
                })
                .collect();
            let mut slices: Vec<TimeSlice> = times
                .iter()
                .map(|&s| TimeSlice {
                    s,
                    x: Vec::with_capacity(n),
                    v: Vec::with_capacity(n),
                })
                .collect();
            for states in trajectories {
                let states = states?;
                for (ti, st) in states.into_iter().enumerate() {
                    slices[ti].x.push(st.x);
                    slices[ti].v.push(st.v);
                }
            }
            sp.slices = slices;
        }
        Ok(())
    }

    /// Largest rescaled momentum over every stored slice of one species,
    /// including the initial condition.
    pub fn measured_momentum_bound(&self, species: usize) -> f64 {
        let sp = &self.species[species];
        let init = sp.v0.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        sp.slices
            .iter()
            .flat_map(|sl| sl.v.iter())
            .fold(init, |m, v| m.max(v.norm()))
    }

    /// Largest measured velocity over all species and slices.
    pub fn measured_velocity_bound(&self) -> f64 {
        let mut out = 0.0f64;
        for si in 0..self.species.len() {
            let b = self.measured_momentum_bound(si);
            out = out.max(b / (1.0 + b * b).sqrt());
        }
        out
    }

    /// Build a retarded-source view from the cached slices, in physical
    /// coordinates.
    pub fn retarded_source(&self, cell_half_width: f64) -> Result<EnsembleSource> {
        if self.times.is_empty() {
            return Err(Error::Precondition(
                "ensemble has no cached trajectories; call propagate first".into(),
            ));
        }
        let species: Vec<SpeciesParams> =
            self.species.iter().map(|s| s.data.params.clone()).collect();
        let mut positions = Vec::with_capacity(self.times.len());
        let mut momenta = Vec::with_capacity(self.times.len());
        for ti in 0..self.times.len() {
            let mut pos_t = Vec::with_capacity(self.species.len());
            let mut mom_t = Vec::with_capacity(self.species.len());
            for sp in &self.species {
                let slice = &sp.slices[ti];
                let mass = sp.data.params.mass;
                let lab: Vec<Vec3> = slice
                    .x
                    .iter()
                    .zip(&slice.v)
                    .map(|(x, v)| *x + velocity(*v) * slice.s)
                    .collect();
                let phys: Vec<Vec3> = slice.v.iter().map(|v| *v * mass).collect();
                pos_t.push(lab);
                mom_t.push(phys);
            }
            positions.push(pos_t);
            momenta.push(mom_t);
        }
        let weights = self.species.iter().map(|s| s.w.clone()).collect();
        EnsembleSource::new(
            species,
            self.times.clone(),
            positions,
            momenta,
            weights,
            cell_half_width,
        )
    }
}

/// Support measurements of one species at one stored time.
#[derive(Clone, Debug)]
pub struct SupportDiagnostics {
    pub t: f64,
    /// Max comoving position over the ensemble.
    pub max_comoving: f64,
    /// Max rescaled momentum.
    pub max_momentum: f64,
    /// Max lab-frame position.
    pub max_lab: f64,
    /// `max_comoving / log(2 + t)`.
    pub log_ratio: f64,
    /// Min over particles of `(t - |X_lab| + 2k) / (t (1 - vhat_max))`;
    /// must stay at or above 1. `NaN` at `t = 0`.
    pub light_cone_margin: f64,
}

/// Measure support radii of one species at stored time index `ti`.
pub fn support_diagnostics(
    ensemble: &ParticleEnsemble,
    species: usize,
    ti: usize,
) -> SupportDiagnostics {
    let sp = &ensemble.species[species];
    let slice = &sp.slices[ti];
    let t = slice.s;
    let k = sp.data.profile.x_radius;
    let vhat_max = ensemble.measured_velocity_bound();
    let mut max_comoving = 0.0f64;
    let mut max_momentum = 0.0f64;
    let mut max_lab = 0.0f64;
    let mut margin = f64::INFINITY;
    for (x, v) in slice.x.iter().zip(&slice.v) {
        let lab = *x + velocity(*v) * t;
        max_comoving = max_comoving.max(x.norm());
        max_momentum = max_momentum.max(v.norm());
        max_lab = max_lab.max(lab.norm());
        if t > 0.0 {
            margin = margin.min((t - lab.norm() + 2.0 * k) / (t * (1.0 - vhat_max)));
        }
    }
    SupportDiagnostics {
        t,
        max_comoving,
        max_momentum,
        max_lab,
        log_ratio: max_comoving / (2.0 + t).ln(),
        light_cone_margin: if t > 0.0 { margin } else { f64::NAN },
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"RVMENS01";

/// In-memory mirror of an ensemble snapshot file.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSnapshot {
    pub times: Vec<f64>,
    pub species: Vec<SnapshotSpecies>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSpecies {
    pub label: String,
    pub mass: f64,
    pub charge: f64,
    pub support_radius: f64,
    pub weights: Vec<f64>,
    /// Lab positions per time, flattened `[x0 y0 z0 x1 y1 z1 ...]`.
    pub positions: Vec<Vec<f64>>,
    /// Physical momenta per time, same layout.
    pub momenta: Vec<Vec<f64>>,
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Serialize cached trajectories: magic, times, then per species the
/// parameters, weights and per-time flat `(x, v)` arrays in little-endian
/// doubles. Lab-frame positions and physical momenta.
pub fn write_ensemble_snapshot(ensemble: &ParticleEnsemble, path: &Path) -> Result<()> {
    if ensemble.times.is_empty() {
        return Err(Error::Precondition(
            "cannot snapshot an unpropagated ensemble".into(),
        ));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(ensemble.species.len() as u32).to_le_bytes())?;
    w.write_all(&(ensemble.times.len() as u32).to_le_bytes())?;
    write_f64s(&mut w, &ensemble.times)?;
    for sp in &ensemble.species {
        let label = sp.data.params.label.as_bytes();
        w.write_all(&(label.len() as u32).to_le_bytes())?;
        w.write_all(label)?;
        write_f64s(
            &mut w,
            &[
                sp.data.params.mass,
                sp.data.params.charge,
                sp.data.params.support_radius,
            ],
        )?;
        w.write_all(&(sp.len() as u64).to_le_bytes())?;
        write_f64s(&mut w, &sp.w)?;
        for slice in &sp.slices {
            let mass = sp.data.params.mass;
            let mut flat_x = Vec::with_capacity(3 * sp.len());
            let mut flat_v = Vec::with_capacity(3 * sp.len());
            for (x, v) in slice.x.iter().zip(&slice.v) {
                let lab = *x + velocity(*v) * slice.s;
                flat_x.extend_from_slice(&lab.as_array());
                flat_v.extend_from_slice(&(*v * mass).as_array());
            }
            write_f64s(&mut w, &flat_x)?;
            write_f64s(&mut w, &flat_v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read back a snapshot written by [`write_ensemble_snapshot`].
pub fn read_ensemble_snapshot(path: &Path) -> Result<EnsembleSnapshot> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic bytes".into()));
    }
    let n_species = read_u32(&mut r)? as usize;
    let n_times = read_u32(&mut r)? as usize;
    let times = read_f64s(&mut r, n_times)?;
    let mut species = Vec::with_capacity(n_species);
    for _ in 0..n_species {
        let label_len = read_u32(&mut r)? as usize;
        let mut label_bytes = vec![0u8; label_len];
        r.read_exact(&mut label_bytes)?;
        let label = String::from_utf8(label_bytes)
            .map_err(|_| Error::Snapshot("label is not valid UTF-8".into()))?;
        let params = read_f64s(&mut r, 3)?;
        let n = read_u64(&mut r)? as usize;
        let weights = read_f64s(&mut r, n)?;
        let mut positions = Vec::with_capacity(n_times);
        let mut momenta = Vec::with_capacity(n_times);
        for _ in 0..n_times {
            positions.push(read_f64s(&mut r, 3 * n)?);
            momenta.push(read_f64s(&mut r, 3 * n)?);
        }
        species.push(SnapshotSpecies {
            label,
            mass: params[0],
            charge: params[1],
            support_radius: params[2],
            weights,
            positions,
            momenta,
        });
    }
    Ok(EnsembleSnapshot { times, species })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::ZeroField;
    use crate::flow::BumpProfile;

    #[test]
    fn empty_profile_gives_empty_ensemble() {
        let mut data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        for sp in &mut data.species {
            sp.profile = BumpProfile::new(0.0, 1.0, 1.0).unwrap();
        }
        let ens = build_ensemble(&data, 5, 1 << 30).unwrap();
        assert!(ens.species.iter().all(|s| s.is_empty()));
        assert_eq!(ens.total_charge(), 0.0);
    }

    #[test]
    fn neutral_pair_cancels_exactly() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let ens = build_ensemble(&data, 6, 1 << 30).unwrap();
        assert!(ens.species[0].len() > 0);
        assert_eq!(ens.species[0].len(), ens.species[1].len());
        assert!(ens.total_charge().abs() < 1e-12);
    }

    #[test]
    fn total_weight_converges_to_profile_integral() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let exact = data.species[0].profile.integral();
        let errs: Vec<f64> = [6usize, 12, 24]
            .iter()
            .map(|&n| {
                let ens = build_ensemble(&data, n, 1 << 31).unwrap();
                (ens.species[0].total_weight() - exact).abs() / exact
            })
            .collect();
        // observed order >= 2 per refinement step
        assert!(errs[1] < errs[0] / 3.0, "{errs:?}");
        assert!(errs[2] < errs[1] / 3.0, "{errs:?}");
    }

    #[test]
    fn resolution_budget_is_enforced() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            build_ensemble(&data, 16, 1000),
            Err(Error::ResolutionBudget { .. })
        ));
    }

    #[test]
    fn zero_field_trajectories_are_static_in_comoving_frame() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let mut ens = build_ensemble(&data, 4, 1 << 30).unwrap();
        let field = ZeroField::new(1.0);
        ens.propagate(&field, &[1.0, 10.0, 100.0], 1e-10).unwrap();
        let d0 = support_diagnostics(&ens, 0, 0);
        let d2 = support_diagnostics(&ens, 0, 2);
        assert!((d0.max_comoving - d2.max_comoving).abs() < 1e-12);
        assert!(d2.light_cone_margin >= 1.0);
        assert!(d0.max_momentum <= 1.0 + 1e-12);
    }

    #[test]
    fn snapshot_round_trip() {
        let data = InitialData::neutral_pair(1.0, 1.0, 1.0).unwrap();
        let mut ens = build_ensemble(&data, 3, 1 << 30).unwrap();
        let field = ZeroField::new(1.0);
        ens.propagate(&field, &[2.0, 5.0], 1e-9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ens.bin");
        write_ensemble_snapshot(&ens, &path).unwrap();
        let snap = read_ensemble_snapshot(&path).unwrap();
        assert_eq!(snap.times, vec![2.0, 5.0]);
        assert_eq!(snap.species.len(), 2);
        assert_eq!(snap.species[0].label, "plus");
        assert_eq!(snap.species[0].weights, ens.species[0].w);
        let lab0 = ens.species[0].slices[0].x[0]
            + velocity(ens.species[0].slices[0].v[0]) * ens.species[0].slices[0].s;
        assert_eq!(snap.species[0].positions[0][0], lab0.x);
    }
}
