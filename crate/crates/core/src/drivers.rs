//! Homogeneous deformation protocols: simple shear, uniaxial compression and
//! confined (pseudo-hydrostatic) compression.
//!
//! Each protocol has a closed-form evaluation and can also be pushed through
//! the general `log U → τ` path of [`crate::hyperelastic`]; the two agree to
//! rounding and the tests hold them to that.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperelastic::{cauchy_ehm, volumetric_kirchhoff, volumetric_stiffness, EhmParams};
use crate::tensor::{DefGrad, SymTensor3};

/// Largest accepted shear strain magnitude.
pub const SHEAR_LIMIT: f64 = 10.0;

/// Simple shear `F = 1 + γ e₁⊗e₂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShearState {
    gamma: f64,
}

impl ShearState {
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::NonFinite("shear strain"));
        }
        if gamma.abs() >= SHEAR_LIMIT {
            return Err(Error::Domain(format!(
                "|gamma| must stay below {SHEAR_LIMIT}, got {gamma}"
            )));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Largest principal stretch `λ₁ = ½(√(γ²+4) + γ)`.
    pub fn lambda1(&self) -> f64 {
        0.5 * ((self.gamma * self.gamma + 4.0).sqrt() + self.gamma)
    }

    pub fn def_grad(&self) -> DefGrad {
        DefGrad::simple_shear(self.gamma)
    }

    /// Closed-form right stretch tensor.
    pub fn stretch(&self) -> SymTensor3 {
        let g = self.gamma;
        let s = 1.0 / (g * g + 4.0).sqrt();
        SymTensor3::new(2.0 * s, (g * g + 2.0) * s, 1.0, g * s, 0.0, 0.0)
    }

    /// Closed-form Hencky strain `log U`.
    pub fn log_stretch(&self) -> SymTensor3 {
        let g = self.gamma;
        let s = 1.0 / (g * g + 4.0).sqrt();
        let l = self.lambda1().ln();
        SymTensor3::new(-g * l * s, g * l * s, 0.0, 2.0 * l * s, 0.0, 0.0)
    }
}

/// Shear Kirchhoff stress `τ₁₂` in closed form.
pub fn shear_kirchhoff(gamma: f64, p: &EhmParams) -> f64 {
    let root = (gamma * gamma + 4.0).sqrt();
    let l = (0.5 * (root + gamma)).ln();
    4.0 * p.mu * (2.0 * p.k * l * l).exp() * l / root
}

/// Axial and lateral logarithmic strains of a uniaxial test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniaxialState {
    pub log_lambda1: f64,
    pub log_lambda2: f64,
}

impl UniaxialState {
    pub fn new(log_lambda1: f64, log_lambda2: f64) -> Self {
        Self {
            log_lambda1,
            log_lambda2,
        }
    }

    /// Deviatoric amplitude `a = ⅔(log λ₁ − log λ₂)`.
    pub fn a(&self) -> f64 {
        2.0 / 3.0 * (self.log_lambda1 - self.log_lambda2)
    }

    /// Volumetric strain `x = log λ₁ + 2 log λ₂`.
    pub fn x(&self) -> f64 {
        self.log_lambda1 + 2.0 * self.log_lambda2
    }

    pub fn log_stretch(&self) -> SymTensor3 {
        SymTensor3::diag(self.log_lambda1, self.log_lambda2, self.log_lambda2)
    }
}

/// The two projections of the uniaxial stress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniaxialStress {
    /// From the trace-free part of σ.
    pub s_dev: f64,
    /// From the spherical part of σ.
    pub s_sph: f64,
}

/// Uniaxial stress predicted from measured axial and lateral strains.
///
/// Both projections are returned. They coincide only when the lateral strain
/// is the one the model itself would produce.
pub fn uniaxial_stress_measured(st: &UniaxialState, p: &EhmParams) -> UniaxialStress {
    let a = st.a();
    let x = st.x();
    let s_dev = 3.0 * p.mu * (1.5 * p.k * a * a - x).exp() * a;
    let s_sph = 3.0 * volumetric_kirchhoff(x, p) * (-x).exp();
    UniaxialStress { s_dev, s_sph }
}

/// Model-consistent uniaxial response at a prescribed axial strain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniaxialSolution {
    pub state: UniaxialState,
    /// Axial Cauchy stress σ₁₁.
    pub stress: f64,
    /// Remaining transverse Cauchy stress σ₂₂.
    pub residual: f64,
    pub iterations: usize,
}

const UNIAXIAL_MAX_ITER: usize = 100;

/// Transverse Kirchhoff stress `τ₂₂` and its derivative in `log λ₂`.
fn transverse_kirchhoff(l1: f64, l2: f64, p: &EhmParams) -> (f64, f64) {
    let diff = l1 - l2;
    let x = l1 + 2.0 * l2;
    let dev_sq = 2.0 / 3.0 * diff * diff;
    let d2 = -diff / 3.0;
    let e = (p.k * dev_sq).exp();
    let tau = 2.0 * p.mu * e * d2 + volumetric_kirchhoff(x, p);
    let dev_sq_prime = -4.0 / 3.0 * diff;
    let dtau =
        2.0 * p.mu * e * (1.0 / 3.0 + p.k * dev_sq_prime * d2) + 2.0 * volumetric_stiffness(x, p);
    (tau, dtau)
}

/// Finds the lateral strain that leaves the transverse faces traction free.
///
/// Newton steps on `τ₂₂(log λ₂)` inside a bisection bracket that starts at
/// `[−|log λ₁|, |log λ₁|]`.
pub fn uniaxial_solve(log_lambda1: f64, p: &EhmParams) -> Result<UniaxialSolution> {
    if !log_lambda1.is_finite() {
        return Err(Error::NonFinite("uniaxial_solve"));
    }
    if log_lambda1 == 0.0 {
        return Ok(UniaxialSolution {
            state: UniaxialState::new(0.0, 0.0),
            stress: 0.0,
            residual: 0.0,
            iterations: 0,
        });
    }
    let width = log_lambda1.abs();
    let (mut lo, mut hi) = (-width, width);
    let mut f_lo = transverse_kirchhoff(log_lambda1, lo, p).0;
    let mut f_hi = transverse_kirchhoff(log_lambda1, hi, p).0;
    let mut widen = 0;
    while f_lo.signum() == f_hi.signum() {
        widen += 1;
        if widen > 20 || !f_lo.is_finite() || !f_hi.is_finite() {
            return Err(Error::NonConvergence(format!(
                "uniaxial_solve: no sign change of the transverse stress in [{lo}, {hi}] \
                 (tau22 = {f_lo:e}, {f_hi:e})"
            )));
        }
        lo -= width;
        hi += width;
        f_lo = transverse_kirchhoff(log_lambda1, lo, p).0;
        f_hi = transverse_kirchhoff(log_lambda1, hi, p).0;
    }
    let increasing = f_hi > f_lo;

    // Start from the isochoric guess and fall back to bisection whenever a
    // Newton step would leave the bracket or fails to halve the previous step.
    let mut l2 = (-0.5 * log_lambda1).clamp(lo, hi);
    let mut step_old = hi - lo;
    let mut step = step_old;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let (f, df) = transverse_kirchhoff(log_lambda1, l2, p);
        let sigma22 = f * (-(log_lambda1 + 2.0 * l2)).exp();
        if sigma22.abs() <= 1e-13 || step.abs() <= 4.0 * f64::EPSILON * l2.abs().max(1e-300) {
            let state = UniaxialState::new(log_lambda1, l2);
            let sigma = cauchy_ehm(&state.log_stretch(), p);
            let residual = sigma.get(1, 1);
            if residual.abs() > 1e-10 {
                return Err(Error::NonConvergence(format!(
                    "uniaxial_solve at log_lambda1 = {log_lambda1}: stalled with sigma22 = {residual:e}"
                )));
            }
            return Ok(UniaxialSolution {
                state,
                stress: sigma.get(0, 0),
                residual,
                iterations,
            });
        }
        if iterations >= UNIAXIAL_MAX_ITER {
            return Err(Error::NonConvergence(format!(
                "uniaxial_solve at log_lambda1 = {log_lambda1}: {iterations} iterations, \
                 sigma22 = {sigma22:e}"
            )));
        }
        if (f > 0.0) == increasing {
            hi = l2;
        } else {
            lo = l2;
        }
        let newton = l2 - f / df;
        let newton_ok =
            df != 0.0 && newton > lo && newton < hi && (2.0 * f).abs() <= (step_old * df).abs();
        step_old = step;
        if newton_ok {
            step = newton - l2;
            l2 = newton;
        } else {
            let mid = 0.5 * (lo + hi);
            step = mid - l2;
            l2 = mid;
        }
    }
}

/// Nonlinear Poisson coefficient `ν̂ = −log λ₂ / log λ₁`.
pub fn poisson_hat(st: &UniaxialState) -> Result<f64> {
    if st.log_lambda1 == 0.0 {
        return Err(Error::Domain(
            "poisson_hat needs nonzero axial strain".into(),
        ));
    }
    Ok(-st.log_lambda2 / st.log_lambda1)
}

/// Confined compression response along `log U = diag(log λ₁, 0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PseudoHydro {
    /// Axial Cauchy stress σ₁₁ (tension positive).
    pub sigma11: f64,
    /// Mean Cauchy stress `tr σ / 3` (tension positive).
    pub pressure: f64,
    /// Deviatoric-to-pressure quotient; `None` where the pressure vanishes.
    pub ratio: Option<f64>,
}

/// Closed-form deviatoric-to-pressure quotient of the confined test.
///
/// Numerator and denominator are the axial deviatoric and the spherical
/// stress terms; the common factor `e^{−log λ₁}` cancels.
pub fn pseudo_hydro_ratio(log_lambda1: f64, p: &EhmParams) -> Option<f64> {
    let l = log_lambda1;
    let num = 2.0 * p.mu * (p.k * 2.0 / 3.0 * l * l - l).exp() * l;
    let large = if p.kappa1 == 0.0 || l == 0.0 {
        0.0
    } else {
        p.kappa1 * (p.k_tilde * l.abs().powf(p.m) - l).exp() * l.signum() * l.abs().powf(p.m - 1.0)
    };
    let den = p.kappa * (p.k_hat * l * l - l).exp() * l + large;
    if den == 0.0 {
        None
    } else {
        Some(num / den)
    }
}

pub fn pseudo_hydro(log_lambda1: f64, p: &EhmParams) -> PseudoHydro {
    let sigma = cauchy_ehm(&SymTensor3::diag(log_lambda1, 0.0, 0.0), p);
    PseudoHydro {
        sigma11: sigma.get(0, 0),
        pressure: sigma.trace() / 3.0,
        ratio: pseudo_hydro_ratio(log_lambda1, p),
    }
}

/// Interval of `det F = λ₁` around the reference state on which the confined
/// test is *not* a valid pressure–volume test, i.e. where `|ratio| ≥ threshold`.
///
/// Returns `(lower, upper)` with `lower < 1 < upper`; either side is `None`
/// when the ratio never drops below the threshold within `|log λ₁| ≤ 3`.
pub fn pseudo_hydro_invalid_window(p: &EhmParams, threshold: f64) -> (Option<f64>, Option<f64>) {
    let excess = |l: f64| pseudo_hydro_ratio(l, p).map_or(-threshold, |r| r.abs() - threshold);
    let boundary = |sign: f64| -> Option<f64> {
        let step = 1e-3;
        let mut inner = sign * 1e-9;
        if excess(inner) <= 0.0 {
            return Some(1.0);
        }
        let mut outer = inner;
        loop {
            outer += sign * step;
            if outer.abs() > 3.0 {
                return None;
            }
            if excess(outer) < 0.0 {
                break;
            }
            inner = outer;
        }
        for _ in 0..200 {
            let mid = 0.5 * (inner + outer);
            if excess(mid) >= 0.0 {
                inner = mid;
            } else {
                outer = mid;
            }
        }
        Some((0.5 * (inner + outer)).exp())
    };
    (boundary(-1.0), boundary(1.0))
}

/// Deformation modes a sweep can drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Shear,
    Uniaxial,
    PseudoHydro,
}

impl std::str::FromStr for SweepMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shear" => Ok(SweepMode::Shear),
            "uniaxial" => Ok(SweepMode::Uniaxial),
            "pseudo_hydro" | "pseudo-hydro" => Ok(SweepMode::PseudoHydro),
            other => Err(Error::Input(format!("unknown sweep mode '{other}'"))),
        }
    }
}

impl SweepMode {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMode::Shear => "shear",
            SweepMode::Uniaxial => "uniaxial",
            SweepMode::PseudoHydro => "pseudo_hydro",
        }
    }

    /// Column names of the curve this mode produces.
    pub fn columns(&self) -> &'static [&'static str] {
        match self {
            SweepMode::Shear => &["strain", "stress_MPa"],
            SweepMode::Uniaxial => &[
                "strain_log_axial",
                "strain_log_lateral",
                "stress_MPa",
                "s_dev_MPa",
                "s_sph_MPa",
                "nu_hat",
            ],
            SweepMode::PseudoHydro => &["strain", "det_F", "stress_MPa", "pressure_MPa", "ratio"],
        }
    }
}

/// A tabulated curve with fixed, named columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSeries {
    pub mode: SweepMode,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CurveSeries {
    pub fn new(mode: SweepMode) -> Self {
        Self {
            mode,
            columns: mode.columns().iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }
}

fn check_monotone(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("strain grid"));
    }
    let increasing = grid.windows(2).all(|w| w[1] > w[0]);
    let decreasing = grid.windows(2).all(|w| w[1] < w[0]);
    if increasing || decreasing {
        Ok(())
    } else {
        Err(Error::Input("strain grid must be strictly monotone".into()))
    }
}

/// Evaluates a deformation mode over a strain grid.
///
/// The grid holds `γ` for shear and `log λ₁` otherwise. Stresses are tension positive.
pub fn sweep(mode: SweepMode, grid: &[f64], p: &EhmParams) -> Result<CurveSeries> {
    check_monotone(grid)?;
    let mut out = CurveSeries::new(mode);
    for &e in grid {
        let row = match mode {
            SweepMode::Shear => {
                let st = ShearState::new(e)?;
                vec![st.gamma(), shear_kirchhoff(st.gamma(), p)]
            }
            SweepMode::Uniaxial => {
                let sol = uniaxial_solve(e, p)?;
                let proj = uniaxial_stress_measured(&sol.state, p);
                let nu = poisson_hat(&sol.state).unwrap_or(p.poisson_ratio());
                vec![
                    sol.state.log_lambda1,
                    sol.state.log_lambda2,
                    sol.stress,
                    proj.s_dev,
                    proj.s_sph,
                    nu,
                ]
            }
            SweepMode::PseudoHydro => {
                let ph = pseudo_hydro(e, p);
                let ratio = ph.ratio.unwrap_or(2.0 * p.mu / p.kappa);
                vec![e, e.exp(), ph.sigma11, ph.pressure, ratio]
            }
        };
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite {} response at strain {e}",
                mode.name()
            )));
        }
        out.rows.push(row);
    }
    Ok(out)
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n)
            .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}
