//! Synthetic test campaigns generated from known parameters.
//!
//! Noise is multiplicative and Gaussian on the stress column only, drawn from
//! a ChaCha stream so a seed reproduces the campaign bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{Dataset, DatasetMeta, DatasetMode};
use crate::drivers::{linspace, pseudo_hydro, shear_kirchhoff, uniaxial_solve};
use crate::error::{Error, Result};
use crate::hyperelastic::EhmParams;
use crate::visco::{simulate_cyclic, LoadProgram, ViscoParams};

/// Strain grids of the equilibrium campaign: `(start, stop, points)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CampaignGrids {
    pub shear: (f64, f64, usize),
    pub uniaxial: (f64, f64, usize),
    pub pseudo_hydro: (f64, f64, usize),
}

impl Default for CampaignGrids {
    fn default() -> Self {
        Self {
            shear: (0.05, 1.0, 20),
            uniaxial: (-0.02, -0.7, 20),
            pseudo_hydro: (-0.01, -0.4, 25),
        }
    }
}

struct Noise {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    level: f64,
}

impl Noise {
    fn new(level: f64, seed: u64) -> Result<Self> {
        if !(level >= 0.0) || !level.is_finite() {
            return Err(Error::Input(format!(
                "noise level must be >= 0, got {level}"
            )));
        }
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, 1.0).expect("unit normal"),
            level,
        })
    }

    fn apply(&mut self, v: &mut [f64]) {
        for x in v {
            // draw even at zero noise so the stream position does not depend on it
            let z = self.normal.sample(&mut self.rng);
            *x *= 1.0 + self.level * z;
        }
    }
}

fn dataset(name: &str, mode: DatasetMode, strain: Vec<f64>, stress: Vec<f64>) -> Dataset {
    Dataset {
        name: name.to_string(),
        mode,
        strain,
        lateral: None,
        stress,
        time: None,
        weight: 1.0,
        meta: DatasetMeta::default(),
    }
}

/// Shear, uniaxial (model-consistent lateral strain) and confined series.
pub fn equilibrium_campaign(
    p: &EhmParams,
    grids: &CampaignGrids,
    noise: f64,
    seed: u64,
) -> Result<Vec<Dataset>> {
    let mut rng = Noise::new(noise, seed)?;

    let g = linspace(grids.shear.0, grids.shear.1, grids.shear.2);
    let mut t: Vec<f64> = g.iter().map(|&x| shear_kirchhoff(x, p)).collect();
    rng.apply(&mut t);
    let shear = dataset("shear", DatasetMode::ShearEq, g, t);

    let l1 = linspace(grids.uniaxial.0, grids.uniaxial.1, grids.uniaxial.2);
    let sols = l1
        .iter()
        .map(|&l| uniaxial_solve(l, p))
        .collect::<Result<Vec<_>>>()?;
    let mut s: Vec<f64> = sols.iter().map(|s| s.stress).collect();
    rng.apply(&mut s);
    let mut uniaxial = dataset("uniaxial", DatasetMode::UniaxialEq, l1, s);
    uniaxial.lateral = Some(sols.iter().map(|s| s.state.log_lambda2).collect());

    let h = linspace(
        grids.pseudo_hydro.0,
        grids.pseudo_hydro.1,
        grids.pseudo_hydro.2,
    );
    let mut ph: Vec<f64> = h.iter().map(|&l| pseudo_hydro(l, p).sigma11).collect();
    rng.apply(&mut ph);
    let confined = dataset("pseudo_hydro", DatasetMode::PseudoHydroEq, h, ph);

    Ok(vec![shear, uniaxial, confined])
}

/// Final steady cycle of each program, sampled at the simulation steps
/// (the closing sample, which repeats phase zero, is dropped).
pub fn cyclic_campaign(
    eq: &EhmParams,
    vp: &ViscoParams,
    programs: &[LoadProgram],
    noise: f64,
    seed: u64,
) -> Result<Vec<Dataset>> {
    let mut rng = Noise::new(noise, seed)?;
    programs
        .iter()
        .map(|lp| {
            let series = simulate_cyclic(lp, eq, vp)?;
            let cycle = series.last_cycle()?;
            let cycle = &cycle[..cycle.len() - 1];
            let mut stress: Vec<f64> = cycle.iter().map(|s| s.stress).collect();
            rng.apply(&mut stress);
            let mode = match lp.mode {
                crate::visco::LoadMode::Shear => DatasetMode::CyclicShear,
                crate::visco::LoadMode::Uniaxial => DatasetMode::CyclicUniaxial,
            };
            let name = format!("{}_f{}_a{}", mode.name(), lp.frequency, lp.amplitude);
            Ok(Dataset {
                name,
                mode,
                strain: cycle.iter().map(|s| s.strain).collect(),
                lateral: None,
                stress,
                time: Some(cycle.iter().map(|s| s.t).collect()),
                weight: 1.0,
                meta: DatasetMeta {
                    density: None,
                    frequency: Some(lp.frequency),
                    amplitude: Some(lp.amplitude),
                    pre_strain: Some(lp.pre_strain),
                },
            })
        })
        .collect()
}
