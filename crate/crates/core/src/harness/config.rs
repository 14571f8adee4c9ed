//! Run configuration: a flat key = value file with sections, parsed as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relkin::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScenarioKind {
    FreeTransport,
    PrescribedBump,
    SelfConsistent,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "free_transport" => Ok(ScenarioKind::FreeTransport),
            "prescribed_bump" => Ok(ScenarioKind::PrescribedBump),
            "self_consistent" => Ok(ScenarioKind::SelfConsistent),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::FreeTransport => "free_transport",
            ScenarioKind::PrescribedBump => "prescribed_bump",
            ScenarioKind::SelfConsistent => "self_consistent",
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct ScenarioSection {
    pub name: String,
    pub seed: u64,
    /// Dyadic output times of the dynamics stage.
    pub output_times: Vec<f64>,
    /// Times at which the spatial charge average is tabulated.
    pub charge_times: Vec<f64>,
    /// Times at which the corrected-state support radius is measured.
    pub support_times: Vec<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            name: "free_transport".into(),
            seed: 7,
            output_times: vec![25.0, 50.0, 100.0, 200.0],
            charge_times: vec![25.0, 50.0, 100.0, 200.0, 400.0],
            support_times: vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 200.0],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct SpeciesSection {
    pub labels: Vec<String>,
    pub masses: Vec<f64>,
    pub charges: Vec<f64>,
    pub support_radius: f64,
    pub peak_density: f64,
}

impl Default for SpeciesSection {
    fn default() -> Self {
        SpeciesSection {
            labels: vec!["plus".into(), "minus".into()],
            masses: vec![1.0, 1.0],
            charges: vec![1.0, -1.0],
            support_radius: 1.0,
            peak_density: 1.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct FieldSection {
    /// `zero` or `bump`.
    pub preset: String,
    pub amplitude: f64,
    pub direction: [f64; 3],
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            preset: "zero".into(),
            amplitude: 0.1,
            direction: [1.0, 0.0, 0.0],
        }
    }
}

impl FieldSection {
    pub fn direction_vec(&self) -> Vec3 {
        Vec3::new(self.direction[0], self.direction[1], self.direction[2])
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct ResolutionSection {
    pub ensemble_n: usize,
    pub ensemble_budget: usize,
    pub momentum_grid_n: usize,
    pub charge_quad_n: usize,
    pub charge_refine_levels: usize,
    pub kernel_radial_n: usize,
    pub kernel_polar_n: usize,
    pub kernel_azimuth_n: usize,
    pub kernel_refine_levels: usize,
    pub retarded_radial_panels: usize,
    pub retarded_polar_n: usize,
    pub retarded_azimuth_n: usize,
    pub retarded_momentum_n: usize,
    pub retarded_refine_levels: usize,
    pub sample_points: usize,
    pub gradient_points: usize,
    pub moment_grid_n: usize,
}

impl Default for ResolutionSection {
    fn default() -> Self {
        ResolutionSection {
            ensemble_n: 6,
            ensemble_budget: 1 << 28,
            momentum_grid_n: 7,
            charge_quad_n: 12,
            charge_refine_levels: 1,
            kernel_radial_n: 48,
            kernel_polar_n: 12,
            kernel_azimuth_n: 24,
            kernel_refine_levels: 2,
            retarded_radial_panels: 10,
            retarded_polar_n: 10,
            retarded_azimuth_n: 20,
            retarded_momentum_n: 6,
            retarded_refine_levels: 1,
            sample_points: 120,
            gradient_points: 24,
            moment_grid_n: 8,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct ToleranceSection {
    pub ode_tol: f64,
    pub charge_rel_tol: f64,
    pub retarded_rel_tol: f64,
    pub kernel_rel_tol: f64,
    pub neutrality_tol: f64,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        ToleranceSection {
            ode_tol: 1e-9,
            charge_rel_tol: 1e-6,
            retarded_rel_tol: 5e-3,
            kernel_rel_tol: 1e-3,
            neutrality_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct AsymptoticsSection {
    /// Reference time for the ray-limit extraction of the field profiles.
    pub t_ref: f64,
    /// Cone fraction of the transport-route limit check.
    pub gamma: f64,
    /// Momentum nodes of the two-path agreement check.
    pub two_path_nodes: usize,
    pub two_path_times: Vec<f64>,
}

impl Default for AsymptoticsSection {
    fn default() -> Self {
        AsymptoticsSection {
            t_ref: 400.0,
            gamma: 0.5,
            two_path_nodes: 10,
            two_path_times: vec![50.0, 100.0, 200.0],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default)]
pub struct PicardSection {
    pub t_end: f64,
    pub n_times: usize,
    pub n_spatial: usize,
    pub ensemble_n: usize,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        PicardSection {
            t_end: 2.0,
            n_times: 5,
            n_spatial: 7,
            ensemble_n: 4,
            tol: 1e-8,
            max_iterations: 12,
        }
    }
}

/// Full configuration of one scenario run.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub species: SpeciesSection,
    pub field: FieldSection,
    pub resolution: ResolutionSection,
    pub tolerances: ToleranceSection,
    pub asymptotics: AsymptoticsSection,
    pub picard: PicardSection,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn kind(&self) -> Result<ScenarioKind> {
        ScenarioKind::parse(&self.scenario.name)
    }

    pub fn validate(&self) -> Result<()> {
        self.kind()?;
        let sp = &self.species;
        if sp.labels.is_empty()
            || sp.labels.len() != sp.masses.len()
            || sp.labels.len() != sp.charges.len()
        {
            return Err(Error::Config(
                "species labels, masses and charges must be non-empty and aligned".into(),
            ));
        }
        for times in [
            &self.scenario.output_times,
            &self.scenario.charge_times,
            &self.scenario.support_times,
        ] {
            if times.is_empty() || times.windows(2).any(|w| w[1] <= w[0]) || times[0] <= 0.0 {
                return Err(Error::Config(
                    "time lists must be positive and strictly increasing".into(),
                ));
            }
        }
        if self.resolution.ensemble_n == 0 || self.resolution.momentum_grid_n == 0 {
            return Err(Error::Config("resolutions must be positive".into()));
        }
        if self.resolution.sample_points < 1 {
            return Err(Error::Config("sample_points must be positive".into()));
        }
        match self.field.preset.as_str() {
            "zero" | "bump" => {}
            other => return Err(Error::Config(format!("unknown field preset `{other}`"))),
        }
        Ok(())
    }

    /// Drop configured times beyond `t_max` (keeping at least the first).
    pub fn truncate_times(&mut self, t_max: f64) {
        let clip = |v: &mut Vec<f64>| {
            let kept: Vec<f64> = v.iter().copied().filter(|&t| t <= t_max).collect();
            if !kept.is_empty() {
                *v = kept;
            }
        };
        clip(&mut self.scenario.output_times);
        clip(&mut self.scenario.charge_times);
        clip(&mut self.scenario.support_times);
        self.asymptotics.t_ref = self.asymptotics.t_ref.min(t_max.max(1.0) * 2.0);
    }

    /// Stable digest of the canonical serialized form (FNV-1a).
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let mut hash: u64 = 0xcbf29ce484222325;
        for b in text.as_bytes() {
            hash ^= *b as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        let c = ScenarioConfig::default();
        assert!(c.validate().is_ok());
        assert_eq!(c.kind().unwrap(), ScenarioKind::FreeTransport);
    }

    #[test]
    fn toml_round_trip_preserves_digest() {
        let c = ScenarioConfig::default();
        let text = toml::to_string(&c).unwrap();
        let back = ScenarioConfig::from_toml_str(&text).unwrap();
        assert_eq!(c.digest(), back.digest());
    }

    #[test]
    fn minimal_toml_with_defaults() {
        let text = r#"
[scenario]
name = "prescribed_bump"

[field]
preset = "bump"
amplitude = 0.25
"#;
        let c = ScenarioConfig::from_toml_str(text).unwrap();
        assert_eq!(c.kind().unwrap(), ScenarioKind::PrescribedBump);
        assert_eq!(c.field.amplitude, 0.25);
        assert_eq!(c.scenario.seed, 7);
    }

    #[test]
    fn bad_scenario_name_rejected() {
        let text = "[scenario]\nname = \"warp_drive\"\n";
        assert!(ScenarioConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn decreasing_times_rejected() {
        let text = "[scenario]\nname = \"free_transport\"\noutput_times = [50.0, 25.0]\n";
        assert!(ScenarioConfig::from_toml_str(text).is_err());
    }

    #[test]
    fn truncate_times_clips_tails() {
        let mut c = ScenarioConfig::default();
        c.truncate_times(100.0);
        assert_eq!(c.scenario.output_times, vec![25.0, 50.0, 100.0]);
        assert!(c.scenario.charge_times.iter().all(|&t| t <= 100.0));
    }
}
