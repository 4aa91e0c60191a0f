//! Campaign configuration: a JSON document naming the material, datasets,
//! and per-command options. Relative paths resolve against the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    ehm_problem, initial_guess, CyclicOptions, Dataset, DatasetMode, FitProblem,
};
use crate::classical::ClassicalModel;
use crate::drivers::SweepMode;
use crate::error::{Error, Result};
use crate::hyperelastic::{EhmParams, Material};
use crate::io::parse_dataset;
use crate::visco::{LoadProgram, ViscoParams};

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub path: PathBuf,
    pub mode: DatasetMode,
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_strain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub frequencies: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

/// Bounds on the seven equilibrium parameters, in the usual order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lower: [f64; 7],
    pub upper: [f64; 7],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub material: String,
    /// JSON file with equilibrium parameters; the published set of
    /// `material` is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visco_params: Option<ViscoParams>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<EhmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsConfig>,
    #[serde(default = "yes")]
    pub snap_m: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweeps: Vec<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_program: Option<LoadProgram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipation_map: Option<MapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical_models: Option<Vec<ClassicalModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visco_initial: Option<ViscoParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cyclic: Option<CyclicOptions>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl CampaignConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: CampaignConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut files: Vec<&Path> = self.datasets.iter().map(|d| d.path.as_path()).collect();
        if let Some(p) = &self.params {
            files.push(p);
        }
        for f in files {
            let full = self.resolve(f);
            if !full.is_file() {
                return Err(Error::Input(format!(
                    "referenced file not found: {}",
                    full.display()
                )));
            }
        }
        if self.params.is_none() && self.material.parse::<Material>().is_err() {
            return Err(Error::Input(format!(
                "material '{}' has no published parameters; give a params file",
                self.material
            )));
        }
        if let Some(b) = &self.bounds {
            if b.lower.iter().zip(&b.upper).any(|(l, u)| !(l <= u)) {
                return Err(Error::Input("bounds: lower exceeds upper".into()));
            }
        }
        if let Some(lp) = &self.load_program {
            lp.validate()?;
        }
        if let Some(vp) = &self.visco_params {
            vp.validate()?;
        }
        Ok(())
    }

    /// Equilibrium parameters used by `simulate`, `sweep`, and `fit-grid`.
    pub fn eq_params(&self) -> Result<EhmParams> {
        match &self.params {
            Some(p) => load_params(&self.resolve(p)),
            None => Ok(self.material.parse::<Material>()?.params()),
        }
    }

    /// Starting point of the equilibrium fit.
    pub fn initial_guess(&self) -> Result<EhmParams> {
        if let Some(p) = self.initial {
            return Ok(p);
        }
        Ok(initial_guess(self.material.parse::<Material>()?))
    }

    pub fn fit_problem(&self) -> FitProblem {
        let mut pb = ehm_problem();
        if let Some(b) = &self.bounds {
            pb.lower = b.lower.to_vec();
            pb.upper = b.upper.to_vec();
        }
        pb
    }

    pub fn cyclic_options(&self) -> CyclicOptions {
        self.cyclic.unwrap_or_default()
    }

    pub fn datasets(&self) -> Result<Vec<Dataset>> {
        self.datasets
            .iter()
            .map(|e| {
                let mut d = parse_dataset(&self.resolve(&e.path), e.mode)?;
                d.weight = e.weight;
                if let Some(n) = &e.name {
                    d.name = n.clone();
                }
                d.meta.frequency = e.frequency.or(d.meta.frequency);
                d.meta.amplitude = e.amplitude.or(d.meta.amplitude);
                d.meta.pre_strain = e.pre_strain.or(d.meta.pre_strain);
                if d.meta.density.is_none() {
                    d.meta.density = Some(self.material.clone());
                }
                d.validate()?;
                Ok(d)
            })
            .collect()
    }
}

pub fn load_params(path: &Path) -> Result<EhmParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let p: EhmParams = serde_json::from_str(&text)?;
    p.validate(false)?;
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_published_parameters() {
        let cfg = CampaignConfig::parse(r#"{"material": "TDM600"}"#, Path::new(".")).unwrap();
        assert_eq!(cfg.eq_params().unwrap(), EhmParams::TDM600);
        assert_eq!(cfg.initial_guess().unwrap().mu, 0.31);
        assert!(cfg.snap_m);
    }

    #[test]
    fn missing_files_and_unknown_keys_are_rejected() {
        let r = CampaignConfig::parse(
            r#"{"material": "TDM500", "datasets": [{"path": "nope.csv", "mode": "shear_eq"}]}"#,
            Path::new("/nonexistent"),
        );
        assert!(r.unwrap_err().to_string().contains("nope.csv"));
        assert!(
            CampaignConfig::parse(r#"{"material": "TDM500", "extra": 1}"#, Path::new(".")).is_err()
        );
        assert!(CampaignConfig::parse(r#"{"material": "rubber"}"#, Path::new(".")).is_err());
    }

    #[test]
    fn load_program_defaults_apply() {
        let cfg = CampaignConfig::parse(
            r#"{"material": "TDM500", "load_program": {"mode": "shear", "amplitude": 1.0, "frequency": 1.0}}"#,
            Path::new("."),
        )
        .unwrap();
        let lp = cfg.load_program.unwrap();
        assert_eq!((lp.cycles, lp.steps_per_cycle), (5, 200));
    }
}
