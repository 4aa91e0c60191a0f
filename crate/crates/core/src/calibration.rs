//! Parameter identification: joint equilibrium fits of the modified Hencky
//! energy, per-cell fits of the Maxwell branches, and classical-model fits.
//!
//! Every dataset contributes `√w · (model − measured) / rms(measured)`, so
//! sub-MPa shear data and tens-of-MPa confined data pull with comparable
//! strength. Positive parameters are fitted through their logarithm.

use serde::{Deserialize, Serialize};

use crate::classical::{cauchy_classical, ClassicalModel, ClassicalParams};
use crate::drivers::{pseudo_hydro, shear_kirchhoff, uniaxial_stress_measured, UniaxialState};
use crate::error::{Error, Result};
use crate::hyperelastic::{EhmParams, Material};
use crate::lm::{levenberg_marquardt, LmOptions, LmReport, Scaling};
use crate::tensor::{DefGrad, SymTensor3};
use crate::visco::{
    simulate_cyclic, LoadMode, LoadProgram, ViscoParams, DEFAULT_CYCLES, DEFAULT_STEPS_PER_CYCLE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetMode {
    ShearEq,
    UniaxialEq,
    PseudoHydroEq,
    CyclicShear,
    CyclicUniaxial,
}

impl DatasetMode {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetMode::ShearEq => "shear_eq",
            DatasetMode::UniaxialEq => "uniaxial_eq",
            DatasetMode::PseudoHydroEq => "pseudo_hydro_eq",
            DatasetMode::CyclicShear => "cyclic_shear",
            DatasetMode::CyclicUniaxial => "cyclic_uniaxial",
        }
    }

    pub fn is_cyclic(&self) -> bool {
        matches!(self, DatasetMode::CyclicShear | DatasetMode::CyclicUniaxial)
    }

    pub fn load_mode(&self) -> Option<LoadMode> {
        match self {
            DatasetMode::CyclicShear => Some(LoadMode::Shear),
            DatasetMode::CyclicUniaxial => Some(LoadMode::Uniaxial),
            _ => None,
        }
    }
}

impl std::str::FromStr for DatasetMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shear_eq" => Ok(DatasetMode::ShearEq),
            "uniaxial_eq" => Ok(DatasetMode::UniaxialEq),
            "pseudo_hydro_eq" => Ok(DatasetMode::PseudoHydroEq),
            "cyclic_shear" => Ok(DatasetMode::CyclicShear),
            "cyclic_uniaxial" => Ok(DatasetMode::CyclicUniaxial),
            other => Err(Error::Input(format!("unknown dataset mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pre_strain: Option<f64>,
}

/// A measured series. Stresses are tension positive.
///
/// `strain` is `γ` for shear, the axial log strain for uniaxial and confined
/// tests. Cyclic series also carry their sample times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub mode: DatasetMode,
    pub strain: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lateral: Option<Vec<f64>>,
    pub stress: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<Vec<f64>>,
    pub weight: f64,
    #[serde(default)]
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.strain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strain.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.strain.len();
        let err = |m: String| Err(Error::Input(format!("dataset '{}': {m}", self.name)));
        if n == 0 {
            return err("no rows".into());
        }
        if self.stress.len() != n {
            return err("strain and stress lengths differ".into());
        }
        if !(self.weight >= 0.0) || !self.weight.is_finite() {
            return err(format!(
                "weight must be finite and >= 0, got {}",
                self.weight
            ));
        }
        let columns: [(&str, Option<&Vec<f64>>); 4] = [
            ("strain", Some(&self.strain)),
            ("stress", Some(&self.stress)),
            ("lateral", self.lateral.as_ref()),
            ("time", self.time.as_ref()),
        ];
        for (label, col) in columns {
            if let Some(col) = col {
                if col.len() != n {
                    return err(format!(
                        "{label} column has {} rows, expected {n}",
                        col.len()
                    ));
                }
                if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                    return err(format!("non-finite {label} in row {}", i + 1));
                }
            }
        }
        if self.mode == DatasetMode::UniaxialEq && self.lateral.is_none() {
            return err("uniaxial data needs the lateral log strain".into());
        }
        if self.mode.is_cyclic() {
            if self.time.is_none() {
                return err("cyclic data needs sample times".into());
            }
            if self.meta.frequency.is_none_or(|f| !(f > 0.0)) {
                return err("cyclic data needs a positive frequency".into());
            }
            if self.meta.amplitude.is_none() {
                return err("cyclic data needs the strain amplitude".into());
            }
        } else if n > 1 {
            let up = self.strain[1] > self.strain[0];
            if let Some(i) =
                self.strain
                    .windows(2)
                    .position(|w| if up { w[1] <= w[0] } else { w[1] >= w[0] })
            {
                return err(format!("strain is not strictly monotone at row {}", i + 2));
            }
        }
        Ok(())
    }

    /// Load program that reproduces a cyclic dataset.
    pub fn load_program(&self, cycles: usize, steps_per_cycle: usize) -> Result<LoadProgram> {
        let mode = self
            .mode
            .load_mode()
            .ok_or_else(|| Error::Input(format!("dataset '{}' is not cyclic", self.name)))?;
        Ok(LoadProgram {
            mode,
            amplitude: self.meta.amplitude.unwrap_or(0.0),
            frequency: self.meta.frequency.unwrap_or(0.0),
            pre_strain: self.meta.pre_strain.unwrap_or(0.0),
            cycles,
            steps_per_cycle,
        })
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn active(datasets: &[Dataset]) -> Result<Vec<&Dataset>> {
    if datasets.is_empty() {
        return Err(Error::Input("no datasets".into()));
    }
    for d in datasets {
        d.validate()?;
    }
    let used: Vec<&Dataset> = datasets.iter().filter(|d| d.weight > 0.0).collect();
    if used.is_empty() {
        return Err(Error::Input(
            "all dataset weights are zero: nothing to fit".into(),
        ));
    }
    Ok(used)
}

/// Model predictions for an equilibrium dataset, one vector per residual block.
///
/// Uniaxial data yields two blocks (deviatoric and spherical projections).
pub fn predict_eq(p: &EhmParams, d: &Dataset) -> Result<Vec<Vec<f64>>> {
    match d.mode {
        DatasetMode::ShearEq => Ok(vec![d
            .strain
            .iter()
            .map(|&g| shear_kirchhoff(g, p))
            .collect()]),
        DatasetMode::UniaxialEq => {
            let lat = d.lateral.as_ref().ok_or_else(|| {
                Error::Input(format!("dataset '{}' lacks the lateral column", d.name))
            })?;
            let (dev, sph) = d
                .strain
                .iter()
                .zip(lat)
                .map(|(&a, &l)| {
                    let s = uniaxial_stress_measured(&UniaxialState::new(a, l), p);
                    (s.s_dev, s.s_sph)
                })
                .unzip();
            Ok(vec![dev, sph])
        }
        DatasetMode::PseudoHydroEq => Ok(vec![d
            .strain
            .iter()
            .map(|&l| pseudo_hydro(l, p).sigma11)
            .collect()]),
        _ => Err(Error::Input(format!(
            "dataset '{}' is cyclic, not an equilibrium series",
            d.name
        ))),
    }
}

/// Same as [`predict_eq`] for any Cauchy-stress response.
pub fn predict_eq_with<F>(cauchy: &F, d: &Dataset) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&DefGrad) -> Result<SymTensor3>,
{
    match d.mode {
        DatasetMode::ShearEq => {
            let v = d
                .strain
                .iter()
                .map(|&g| cauchy(&DefGrad::simple_shear(g)).map(|s| s.get(0, 1)))
                .collect::<Result<_>>()?;
            Ok(vec![v])
        }
        DatasetMode::UniaxialEq => {
            let lat = d.lateral.as_ref().ok_or_else(|| {
                Error::Input(format!("dataset '{}' lacks the lateral column", d.name))
            })?;
            let mut dev = Vec::with_capacity(d.len());
            let mut sph = Vec::with_capacity(d.len());
            for (&a, &l) in d.strain.iter().zip(lat) {
                let s = cauchy(&DefGrad::from_log_stretches(a, l, l))?;
                dev.push(s.get(0, 0) - s.get(1, 1));
                sph.push(s.trace());
            }
            Ok(vec![dev, sph])
        }
        DatasetMode::PseudoHydroEq => {
            let v = d
                .strain
                .iter()
                .map(|&l| cauchy(&DefGrad::from_log_stretches(l, 0.0, 0.0)).map(|s| s.get(0, 0)))
                .collect::<Result<_>>()?;
            Ok(vec![v])
        }
        _ => Err(Error::Input(format!(
            "dataset '{}' is cyclic, not an equilibrium series",
            d.name
        ))),
    }
}

fn push_blocks(out: &mut Vec<f64>, d: &Dataset, blocks: &[Vec<f64>]) -> Result<()> {
    let scale = rms(&d.stress);
    if scale == 0.0 {
        return Err(Error::Input(format!(
            "dataset '{}' has all-zero stress",
            d.name
        )));
    }
    let w = d.weight.sqrt() / scale;
    for block in blocks {
        out.extend(block.iter().zip(&d.stress).map(|(m, y)| w * (m - y)));
    }
    Ok(())
}

/// Concatenated normalized residuals of all weighted equilibrium datasets.
pub fn residuals_eq(p: &EhmParams, datasets: &[Dataset]) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for d in active(datasets)? {
        push_blocks(&mut out, d, &predict_eq(p, d)?)?;
    }
    if out.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("equilibrium residuals"));
    }
    Ok(out)
}

/// Raw RMS misfit (MPa) of one dataset over all its residual blocks.
fn block_rms(d: &Dataset, blocks: &[Vec<f64>]) -> f64 {
    let diffs: Vec<f64> = blocks
        .iter()
        .flat_map(|b| b.iter().zip(&d.stress).map(|(m, y)| m - y))
        .collect();
    rms(&diffs)
}

/// Parameter layout, bounds, and transform of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProblem {
    pub names: Vec<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Fitted through `ln θ` (requires a positive lower bound).
    pub log_scale: Vec<bool>,
    /// Held at the given value when set.
    pub fixed: Vec<Option<f64>>,
}

impl FitProblem {
    pub fn new(names: &[&str], lower: &[f64], upper: &[f64], log_scale: &[bool]) -> Self {
        Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            log_scale: log_scale.to_vec(),
            fixed: vec![None; names.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        if [
            self.lower.len(),
            self.upper.len(),
            self.log_scale.len(),
            self.fixed.len(),
        ]
        .iter()
        .any(|&l| l != n)
        {
            return Err(Error::Input(
                "fit problem vectors have different lengths".into(),
            ));
        }
        for i in 0..n {
            if !(self.lower[i] <= self.upper[i]) {
                return Err(Error::Input(format!(
                    "bounds of '{}' are inverted",
                    self.names[i]
                )));
            }
            if self.log_scale[i] && !(self.lower[i] > 0.0) {
                return Err(Error::Input(format!(
                    "'{}' is log-scaled and needs a positive lower bound",
                    self.names[i]
                )));
            }
        }
        Ok(())
    }

    fn free(&self) -> Vec<usize> {
        (0..self.names.len())
            .filter(|&i| self.fixed[i].is_none())
            .collect()
    }

    fn to_internal(&self, i: usize, v: f64) -> f64 {
        if self.log_scale[i] {
            v.ln()
        } else {
            v
        }
    }

    fn to_physical(&self, i: usize, v: f64) -> f64 {
        if self.log_scale[i] {
            // exp∘ln can land one ulp outside a bound
            v.exp().clamp(self.lower[i], self.upper[i])
        } else {
            v
        }
    }

    fn assemble(&self, free: &[usize], theta: &[f64], base: &[f64]) -> Vec<f64> {
        let mut full = base.to_vec();
        for (k, &i) in free.iter().enumerate() {
            full[i] = self.to_physical(i, theta[k]);
        }
        for (i, f) in self.fixed.iter().enumerate() {
            if let Some(v) = f {
                full[i] = *v;
            }
        }
        full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFit {
    pub name: String,
    pub mode: DatasetMode,
    pub points: usize,
    pub rms_mpa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    /// `‖r‖` of the normalized residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop_reason: String,
    /// Gauss–Newton covariance in physical parameters (fixed ones get zero rows).
    pub covariance: Option<Vec<Vec<f64>>>,
    pub per_dataset: Vec<DatasetFit>,
}

impl FitResult {
    pub fn param(&self, name: &str) -> Option<f64> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.params[i])
    }

    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance
            .as_ref()
            .map(|c| (0..c.len()).map(|i| c[i][i].max(0.0).sqrt()).collect())
    }
}

/// Runs LM on a problem whose residuals are given in physical parameters.
pub fn lm_fit<F>(
    problem: &FitProblem,
    initial: &[f64],
    mut residuals: F,
    opts: &LmOptions,
) -> Result<FitResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    problem.validate()?;
    let n = problem.names.len();
    if initial.len() != n {
        return Err(Error::Input(format!(
            "initial vector has {} entries, expected {n}",
            initial.len()
        )));
    }
    for (i, &v) in initial.iter().enumerate() {
        if !(v >= problem.lower[i] && v <= problem.upper[i]) {
            return Err(Error::Input(format!(
                "initial '{}' = {v} is outside [{}, {}]",
                problem.names[i], problem.lower[i], problem.upper[i]
            )));
        }
    }
    let free = problem.free();
    let theta0: Vec<f64> = free
        .iter()
        .map(|&i| problem.to_internal(i, initial[i]))
        .collect();
    let lo: Vec<f64> = free
        .iter()
        .map(|&i| problem.to_internal(i, problem.lower[i]))
        .collect();
    let hi: Vec<f64> = free
        .iter()
        .map(|&i| problem.to_internal(i, problem.upper[i]))
        .collect();
    let report: LmReport = levenberg_marquardt(
        |theta| residuals(&problem.assemble(&free, theta, initial)),
        &theta0,
        &lo,
        &hi,
        opts,
    )?;
    let params = problem.assemble(&free, &report.x, initial);

    // Covariance of θ mapped through dθ_phys = diag(∂phys/∂θ).
    let covariance = report.covariance().map(|cov| {
        let mut full = vec![vec![0.0; n]; n];
        let jac_diag: Vec<f64> = free
            .iter()
            .map(|&i| if problem.log_scale[i] { params[i] } else { 1.0 })
            .collect();
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                full[i][j] = jac_diag[a] * cov[(a, b)] * jac_diag[b];
            }
        }
        full
    });

    Ok(FitResult {
        names: problem.names.clone(),
        params,
        residual_norm: report.cost.sqrt(),
        iterations: report.iterations,
        evaluations: report.evaluations,
        converged: report.reason.converged(),
        stop_reason: format!("{:?}", report.reason),
        covariance,
        per_dataset: Vec::new(),
    })
}

/// LM settings for fits whose parameters are all logarithms: identity
/// damping and at most one e-fold per parameter and step.
pub fn log_space_lm_options() -> LmOptions {
    LmOptions {
        scaling: Scaling::Identity,
        max_step: 1.0,
        ..LmOptions::default()
    }
}

/// Starting values for `k`, `k̂`, `k̃` in place of zero, which the log
/// reparameterization cannot represent.
pub const NONLINEAR_START: f64 = 1e-3;

/// Initial guesses for the equilibrium fit of each density: `(μ, κ, κ₁)`
/// from the published starting table, `k = k̂ = k̃ = 10⁻³` and `m = 2`.
pub fn initial_guess(material: Material) -> EhmParams {
    let (mu, kappa, kappa1) = match material {
        Material::Tdm500 => (0.22, 2.40, 297.0),
        Material::Tdm600 => (0.31, 2.70, 315.0),
        Material::Tdm800 => (0.63, 4.50, 281.0),
    };
    EhmParams {
        mu,
        k: NONLINEAR_START,
        kappa,
        k_hat: NONLINEAR_START,
        kappa1,
        k_tilde: NONLINEAR_START,
        m: 2.0,
    }
}

/// Default equilibrium problem: all positive parameters log-scaled, `m ∈ [2, 20]`.
pub fn ehm_problem() -> FitProblem {
    FitProblem::new(
        &EhmParams::PARAM_NAMES,
        &[1e-6, 1e-8, 1e-6, 1e-8, 1e-6, 1e-8, 2.0],
        &[1e3, 1e3, 1e4, 1e3, 1e6, 1e6, 20.0],
        &[true, true, true, true, true, true, false],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqFit {
    pub params: EhmParams,
    pub result: FitResult,
    /// Refit with `m` rounded to the nearest integer ≥ 2 and held fixed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapped: Option<Box<EqFit>>,
}

impl EqFit {
    /// The snapped fit when available, the continuous one otherwise.
    pub fn preferred(&self) -> &EqFit {
        self.snapped.as_deref().unwrap_or(self)
    }
}

fn eq_dataset_fits(p: &EhmParams, datasets: &[Dataset]) -> Result<Vec<DatasetFit>> {
    datasets
        .iter()
        .filter(|d| !d.mode.is_cyclic())
        .map(|d| {
            Ok(DatasetFit {
                name: d.name.clone(),
                mode: d.mode,
                points: d.len(),
                rms_mpa: block_rms(d, &predict_eq(p, d)?),
            })
        })
        .collect()
}

/// Joint equilibrium fit over all non-cyclic datasets.
pub fn fit_equilibrium(
    datasets: &[Dataset],
    initial: &EhmParams,
    problem: &FitProblem,
    snap_m: bool,
    opts: &LmOptions,
) -> Result<EqFit> {
    let eq: Vec<Dataset> = datasets
        .iter()
        .filter(|d| !d.mode.is_cyclic())
        .cloned()
        .collect();
    active(&eq)?;
    let run = |problem: &FitProblem, start: &[f64]| -> Result<EqFit> {
        let mut result = lm_fit(
            problem,
            start,
            |v| {
                residuals_eq(
                    &EhmParams::from_array(v.try_into().expect("seven parameters")),
                    &eq,
                )
            },
            opts,
        )?;
        let params =
            EhmParams::from_array(result.params.clone().try_into().expect("seven parameters"));
        result.per_dataset = eq_dataset_fits(&params, &eq)?;
        Ok(EqFit {
            params,
            result,
            snapped: None,
        })
    };
    let mut fit = run(problem, &initial.to_array())?;
    if snap_m {
        let m = fit.params.m.round().max(2.0);
        let mut fixed = problem.clone();
        fixed.fixed[6] = Some(m);
        let mut start = fit.params.to_array();
        start[6] = m;
        fit.snapped = Some(Box::new(run(&fixed, &start)?));
    }
    Ok(fit)
}

/// Small-strain shear and bulk moduli estimated from the first points of the data.
pub fn moduli_estimate(datasets: &[Dataset]) -> (f64, f64) {
    let mut g = None;
    let mut k = None;
    for d in datasets {
        let first = d
            .strain
            .iter()
            .zip(&d.stress)
            .filter(|(e, _)| **e != 0.0)
            .min_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
        let Some((&e, &s)) = first else { continue };
        match d.mode {
            DatasetMode::ShearEq => g = g.or(Some(s / e)),
            DatasetMode::PseudoHydroEq => k = k.or(Some(s / e)),
            _ => {}
        }
    }
    let g = g.filter(|v| *v > 0.0).unwrap_or(0.1);
    // confined modulus K + 4G/3
    let k = k
        .map(|m| m - 4.0 * g / 3.0)
        .filter(|v| *v > 0.0)
        .unwrap_or(20.0 * g);
    (g, k)
}

/// Default bounds and a starting point for a classical model.
pub fn classical_problem(model: ClassicalModel, g: f64, k: f64) -> (FitProblem, Vec<f64>) {
    match model {
        ClassicalModel::ArrudaBoyce => (
            FitProblem::new(
                model.param_names(),
                &[1e-8, 1.01, 1e-6],
                &[1e4, 1e3, 1e6],
                &[true, true, true],
            ),
            vec![g, 3.0, k],
        ),
        ClassicalModel::MooneyRivlin => (
            FitProblem::new(
                model.param_names(),
                &[-1e3, -1e3, 1e-6],
                &[1e3, 1e3, 1e6],
                &[false, false, true],
            ),
            vec![0.4 * g, 0.1 * g, k],
        ),
        ClassicalModel::Ogden3 => (
            FitProblem::new(
                model.param_names(),
                &[-1e3, -1e3, -1e3, -20.0, -20.0, -20.0, 1e-6],
                &[1e3, 1e3, 1e3, 20.0, 20.0, 20.0, 1e6],
                &[false, false, false, false, false, false, true],
            ),
            vec![1.6 * g / 1.5, 0.04 * g, -0.1 * g, 1.5, 5.0, -2.0, k],
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalFit {
    pub params: ClassicalParams,
    pub result: FitResult,
}

/// Joint fit of a classical model over the equilibrium datasets.
pub fn fit_classical(
    model: ClassicalModel,
    datasets: &[Dataset],
    opts: &LmOptions,
) -> Result<ClassicalFit> {
    let eq: Vec<Dataset> = datasets
        .iter()
        .filter(|d| !d.mode.is_cyclic())
        .cloned()
        .collect();
    let used = active(&eq)?;
    let (g, k) = moduli_estimate(&eq);
    let (problem, start) = classical_problem(model, g, k);
    let residuals = |v: &[f64]| -> Result<Vec<f64>> {
        let p = model.params_from_slice(v);
        p.validate()?;
        let mut out = Vec::new();
        for d in &used {
            push_blocks(
                &mut out,
                d,
                &predict_eq_with(&|f: &DefGrad| cauchy_classical(f, &p), d)?,
            )?;
        }
        if out.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("classical residuals"));
        }
        Ok(out)
    };
    let mut result = lm_fit(&problem, &start, residuals, opts)?;
    let params = model.params_from_slice(&result.params);
    result.per_dataset = eq
        .iter()
        .map(|d| {
            let blocks = predict_eq_with(&|f: &DefGrad| cauchy_classical(f, &params), d)?;
            Ok(DatasetFit {
                name: d.name.clone(),
                mode: d.mode,
                points: d.len(),
                rms_mpa: block_rms(d, &blocks),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ClassicalFit { params, result })
}

/// Simulation settings for cyclic residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclicOptions {
    pub cycles: usize,
    pub steps_per_cycle: usize,
}

impl Default for CyclicOptions {
    fn default() -> Self {
        Self {
            cycles: DEFAULT_CYCLES,
            steps_per_cycle: DEFAULT_STEPS_PER_CYCLE,
        }
    }
}

/// Simulated stress of the final cycle at the dataset's sample phases.
///
/// Each sample time is reduced to its phase within the period and the final
/// simulated cycle is interpolated linearly at that phase.
pub fn predict_cyclic(
    eq: &EhmParams,
    vp: &ViscoParams,
    d: &Dataset,
    copts: &CyclicOptions,
) -> Result<Vec<f64>> {
    let lp = d.load_program(copts.cycles, copts.steps_per_cycle)?;
    let series = simulate_cyclic(&lp, eq, vp)?;
    let cycle = series.last_cycle()?;
    let n = lp.steps_per_cycle;
    let times = d
        .time
        .as_ref()
        .ok_or_else(|| Error::Input(format!("dataset '{}' lacks sample times", d.name)))?;
    Ok(times
        .iter()
        .map(|&t| {
            let mut phase = (t * lp.frequency).rem_euclid(1.0) * n as f64;
            if (phase - phase.round()).abs() < 1e-9 {
                phase = phase.round() % n as f64;
            }
            let i = (phase.floor() as usize).min(n - 1);
            let w = phase - i as f64;
            (1.0 - w) * cycle[i].stress + w * cycle[i + 1].stress
        })
        .collect())
}

/// Branch parameters fitted in log space; `η` is taken from `base`.
pub fn visco_problem() -> FitProblem {
    FitProblem::new(
        &["mu_a", "k_a", "mu_b"],
        &[1e-6, 1e-6, 1e-6],
        &[1e3, 1e2, 1e3],
        &[true, true, true],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViscoFit {
    pub params: ViscoParams,
    pub result: FitResult,
}

/// Fits `(μ_A, k_A, μ_B)` of one cyclic dataset with the equilibrium frozen.
pub fn fit_visco_cell(
    d: &Dataset,
    eq: &EhmParams,
    initial: &ViscoParams,
    copts: &CyclicOptions,
    opts: &LmOptions,
) -> Result<ViscoFit> {
    d.validate()?;
    if !d.mode.is_cyclic() {
        return Err(Error::Input(format!("dataset '{}' is not cyclic", d.name)));
    }
    let scale = rms(&d.stress);
    if scale == 0.0 {
        return Err(Error::Input(format!(
            "dataset '{}' has all-zero stress",
            d.name
        )));
    }
    let problem = visco_problem();
    let build = |v: &[f64]| ViscoParams {
        mu_a: v[0],
        k_a: v[1],
        mu_b: v[2],
        ..*initial
    };
    let start: Vec<f64> = [initial.mu_a, initial.k_a, initial.mu_b]
        .iter()
        .zip(problem.lower.iter().zip(&problem.upper))
        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
        .collect();
    let mut result = lm_fit(
        &problem,
        &start,
        |v| {
            let pred = predict_cyclic(eq, &build(v), d, copts)?;
            Ok(pred
                .iter()
                .zip(&d.stress)
                .map(|(m, y)| (m - y) / scale)
                .collect())
        },
        opts,
    )?;
    let params = build(&result.params);
    let pred = predict_cyclic(eq, &params, d, copts)?;
    result.per_dataset = vec![DatasetFit {
        name: d.name.clone(),
        mode: d.mode,
        points: d.len(),
        rms_mpa: block_rms(d, &[pred]),
    }];
    Ok(ViscoFit { params, result })
}

/// One row of the parameter surface over (frequency, amplitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub dataset: String,
    pub frequency: f64,
    pub amplitude: f64,
    pub fit: Option<ViscoFit>,
    pub error: Option<String>,
}

impl GridCell {
    pub const COLUMNS: [&'static str; 8] = [
        "frequency_Hz",
        "amplitude",
        "mu_A_MPa",
        "k_A",
        "mu_B_MPa",
        "rms_MPa",
        "converged",
        "status",
    ];
}

/// Fits every cyclic dataset independently. A failing cell is flagged and
/// the remaining cells are still fitted.
pub fn fit_visco_grid(
    datasets: &[Dataset],
    eq: &EhmParams,
    initial: &ViscoParams,
    copts: &CyclicOptions,
    opts: &LmOptions,
) -> Vec<GridCell> {
    let cells: Vec<&Dataset> = datasets.iter().filter(|d| d.mode.is_cyclic()).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .iter()
            .map(|d| scope.spawn(move || fit_visco_cell(d, eq, initial, copts, opts)))
            .collect();
        cells
            .iter()
            .zip(handles)
            .map(|(d, h)| {
                let outcome = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Invariant("grid worker panicked".into())));
                let (fit, error) = match outcome {
                    Ok(f) => (Some(f), None),
                    Err(e) => (None, Some(e.to_string())),
                };
                GridCell {
                    dataset: d.name.clone(),
                    frequency: d.meta.frequency.unwrap_or(f64::NAN),
                    amplitude: d.meta.amplitude.unwrap_or(f64::NAN),
                    fit,
                    error,
                }
            })
            .collect()
    })
}
