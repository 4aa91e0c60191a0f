//! Finite-strain viscoelasticity with two Maxwell branches in parallel to the
//! equilibrium spring.
//!
//! Branch A carries an exponentiated Hencky spring, branch B a quadratic one.
//! Each branch stores its elastic Finger tensor `b_e`. A time step is an
//! exponential-map predictor (`b_trial = f_rel b_e f_relᵀ`) followed by a
//! backward-Euler corrector in principal logarithmic elastic strains
//! `ε_e = ½ log b_e`:
//!
//! ```text
//! ε_e = ε_trial − Δt/(2η_D) · dev τ(ε_e)
//! ```
//!
//! The flow rule is written with the dissipative sign: the branch stress drives
//! the elastic strain back toward zero. Flow is purely deviatoric, so the
//! volumetric part of `b_e` rides along unchanged and never produces stress.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperelastic::{energy_ehm, kirchhoff_ehm, EhmParams};
use crate::tensor::{eig_sym, log_sym, DefGrad, SymTensor3, SPD_TOL};

const CORRECTOR_TOL: f64 = 1e-12;
const CORRECTOR_MAX_ITER: usize = 50;

/// Maxwell-branch moduli (MPa) and deviatoric viscosities (MPa·s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscoParams {
    pub mu_a: f64,
    pub k_a: f64,
    #[serde(default = "default_eta_a")]
    pub eta_d_a: f64,
    pub mu_b: f64,
    #[serde(default = "default_eta_b")]
    pub eta_d_b: f64,
}

/// Viscosity of the nonlinear branch, shared by all densities and test modes.
pub const ETA_D_A: f64 = 12.0;
/// Viscosity of the linear branch, shared by all densities and test modes.
pub const ETA_D_B: f64 = 1.0;

fn default_eta_a() -> f64 {
    ETA_D_A
}

fn default_eta_b() -> f64 {
    ETA_D_B
}

impl Default for ViscoParams {
    /// Illustrative branch moduli with the fixed viscosities.
    fn default() -> Self {
        Self {
            mu_a: 0.02,
            k_a: 0.5,
            eta_d_a: ETA_D_A,
            mu_b: 0.25,
            eta_d_b: ETA_D_B,
        }
    }
}

impl ViscoParams {
    /// Branch moduli may be zero (branch switched off); viscosities must be positive.
    pub fn validate(&self) -> Result<()> {
        let all = [self.mu_a, self.k_a, self.eta_d_a, self.mu_b, self.eta_d_b];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite viscous parameter".into(),
            ));
        }
        if self.mu_a < 0.0 || self.mu_b < 0.0 || self.k_a < 0.0 {
            return Err(Error::InvalidParameter(
                "mu_a, mu_b and k_a must be >= 0".into(),
            ));
        }
        if self.eta_d_a <= 0.0 || self.eta_d_b <= 0.0 {
            return Err(Error::InvalidParameter("viscosities must be > 0".into()));
        }
        Ok(())
    }

    /// Small-strain relaxation time `η_D / (4μ)` of a branch.
    pub fn relaxation_time(&self, branch: Branch) -> f64 {
        match branch {
            Branch::A => self.eta_d_a / (4.0 * self.mu_a),
            Branch::B => self.eta_d_b / (4.0 * self.mu_b),
        }
    }

    fn branch(&self, branch: Branch) -> (f64, f64, f64) {
        match branch {
            Branch::A => (self.mu_a, self.k_a, self.eta_d_a),
            Branch::B => (self.mu_b, 0.0, self.eta_d_b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    /// Exponentiated Hencky spring.
    A,
    /// Quadratic Hencky spring.
    B,
}

/// Principal-space stress factor: `τ = 2 ∂W/∂(log b) = 4μ e^{k‖dev log b‖²} dev log b`.
fn branch_factor(mu: f64, k: f64, dev_log_b_sq: f64) -> f64 {
    4.0 * mu * (k * dev_log_b_sq).exp()
}

/// Kirchhoff stress `2 (∂W/∂b_e) b_e` of one Maxwell branch. Always deviatoric.
pub fn branch_stress(b_e: &SymTensor3, branch: Branch, vp: &ViscoParams) -> Result<SymTensor3> {
    let d = log_sym(b_e)
        .map_err(|e| Error::Domain(format!("branch state is not SPD: {e}")))?
        .dev();
    let (mu, k, _) = vp.branch(branch);
    Ok(d * branch_factor(mu, k, d.norm_squared()))
}

/// Stored energy of one branch, shifted so that it vanishes at `b_e = 1`.
///
/// Branch A uses `μ_A/k_A (e^{k_A‖dev log b_e‖²} − 1)`, which tends to
/// `μ_A ‖dev log b_e‖²` as `k_A → 0`; branch B is `μ_B ‖dev log b_e‖²`.
pub fn branch_energy(b_e: &SymTensor3, branch: Branch, vp: &ViscoParams) -> Result<f64> {
    let d2 = log_sym(b_e)?.dev().norm_squared();
    let (mu, k, _) = vp.branch(branch);
    Ok(if k == 0.0 {
        mu * d2
    } else {
        mu / k * (k * d2).exp_m1()
    })
}

/// Internal state of a material point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViscoState {
    pub b_e_a: SymTensor3,
    pub b_e_b: SymTensor3,
    pub f_prev: DefGrad,
    pub t: f64,
}

impl Default for ViscoState {
    fn default() -> Self {
        Self::virgin()
    }
}

impl ViscoState {
    /// Undeformed state with relaxed branches.
    pub fn virgin() -> Self {
        Self {
            b_e_a: SymTensor3::identity(),
            b_e_b: SymTensor3::identity(),
            f_prev: DefGrad::identity(),
            t: 0.0,
        }
    }

    /// `C_i = Fᵀ b_e⁻¹ F` of a branch, recovered from the stored state.
    pub fn inelastic_right_cauchy_green(&self, branch: Branch) -> Result<SymTensor3> {
        let b = match branch {
            Branch::A => self.b_e_a,
            Branch::B => self.b_e_b,
        };
        let inv = b
            .to_matrix()
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular branch state".into()))?;
        let f = self.f_prev.matrix();
        Ok(SymTensor3::from_matrix(&(f.transpose() * inv * f)))
    }
}

/// How the branch corrector is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Corrector {
    /// Scalar Newton on the deviatoric strain norm (closed form for branch B).
    #[default]
    Reduced,
    /// Newton on all three principal strains; used to verify `Reduced`.
    Full,
}

/// Result of one constitutive update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Total Kirchhoff stress.
    pub tau: SymTensor3,
    pub tau_eq: SymTensor3,
    pub tau_a: SymTensor3,
    pub tau_b: SymTensor3,
}

fn reduced_scale(s_trial: f64, c: f64, k: f64, dt: f64) -> Result<f64> {
    // Solve s (1 + c e^{4k s²}) = s_trial for s in [0, s_trial]; g is convex
    // and increasing, and Newton from the right converges monotonically.
    if s_trial == 0.0 || c == 0.0 {
        return Ok(s_trial);
    }
    if k == 0.0 {
        return Ok(s_trial / (1.0 + c));
    }
    let mut s = s_trial / (1.0 + c);
    for _ in 0..CORRECTOR_MAX_ITER {
        let e = (4.0 * k * s * s).exp();
        let g = s * (1.0 + c * e) - s_trial;
        let dg = 1.0 + c * e * (1.0 + 8.0 * k * s * s);
        let ds = g / dg;
        s -= ds;
        if ds.abs() <= CORRECTOR_TOL * s_trial {
            return Ok(s);
        }
    }
    Err(Error::NonConvergence(format!(
        "branch A corrector: no convergence in {CORRECTOR_MAX_ITER} iterations \
         (trial deviatoric norm {s_trial:e}, dt {dt:e})"
    )))
}

fn full_newton(eps_trial: [f64; 3], c: f64, k: f64, dt: f64) -> Result<[f64; 3]> {
    // r(ε) = ε − ε_trial + c·E·e,  e = dev ε,  E = exp(4k‖e‖²),  c = Δt·4μ/η
    let proj = Matrix3::<f64>::identity() - Matrix3::from_element(1.0 / 3.0);
    let trial = Vector3::from(eps_trial);
    let mut eps = trial;
    for _ in 0..CORRECTOR_MAX_ITER {
        let e = proj * eps;
        let big_e = (4.0 * k * e.norm_squared()).exp();
        let r = eps - trial + e * (c * big_e);
        let jac = Matrix3::identity() + (proj + e * e.transpose() * (8.0 * k)) * (c * big_e);
        let delta = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::NonConvergence("singular corrector Jacobian".into()))?;
        eps -= delta;
        if delta.amax() <= 1e-14 * (1.0 + trial.amax()) {
            return Ok([eps[0], eps[1], eps[2]]);
        }
    }
    Err(Error::NonConvergence(format!(
        "full corrector: no convergence in {CORRECTOR_MAX_ITER} iterations (dt {dt:e})"
    )))
}

/// Predictor–corrector update of one branch; returns the new `b_e` and its stress.
fn update_branch(
    b_e: &SymTensor3,
    f_rel: &Matrix3<f64>,
    dt: f64,
    mu: f64,
    k: f64,
    eta: f64,
    corrector: Corrector,
) -> Result<(SymTensor3, SymTensor3)> {
    let trial = b_e.push_forward(f_rel);
    let sp = eig_sym(&trial)?;
    if sp.values.iter().any(|&v| v <= SPD_TOL) {
        return Err(Error::Domain(format!(
            "non-SPD trial Finger tensor (eigenvalues {:?})",
            sp.values
        )));
    }
    let eps_trial = sp.values.map(|v| 0.5 * v.ln());
    let mean = eps_trial.iter().sum::<f64>() / 3.0;
    let c = 4.0 * mu * dt / eta;

    let eps = match corrector {
        Corrector::Reduced => {
            let dev = eps_trial.map(|e| e - mean);
            let s_trial = dev.iter().map(|e| e * e).sum::<f64>().sqrt();
            let s = reduced_scale(s_trial, c, k, dt)?;
            let ratio = if s_trial > 0.0 { s / s_trial } else { 1.0 };
            dev.map(|e| mean + e * ratio)
        }
        Corrector::Full => full_newton(eps_trial, c, k, dt)?,
    };
    let b_new = sp.compose(eps.map(|e| (2.0 * e).exp()));
    // dev log b = 2 dev ε in the shared principal frame
    let mean_new = eps.iter().sum::<f64>() / 3.0;
    let dev_log_b = eps.map(|e| 2.0 * (e - mean_new));
    let norm_sq: f64 = dev_log_b.iter().map(|d| d * d).sum();
    let factor = branch_factor(mu, k, norm_sq);
    let tau = sp.compose(dev_log_b.map(|d| factor * d));
    Ok((b_new, tau))
}

fn advance(
    st: &ViscoState,
    f_new: &DefGrad,
    dt: f64,
    eq: &EhmParams,
    vp: &ViscoParams,
    corrector: Corrector,
) -> Result<(ViscoState, StepOutput)> {
    let f_rel = f_new.matrix() * st.f_prev.inverse();
    let (b_a, tau_a) = update_branch(
        &st.b_e_a, &f_rel, dt, vp.mu_a, vp.k_a, vp.eta_d_a, corrector,
    )?;
    let (b_b, tau_b) = update_branch(&st.b_e_b, &f_rel, dt, vp.mu_b, 0.0, vp.eta_d_b, corrector)?;
    let tau_eq = kirchhoff_ehm(&f_new.log_left_stretch()?, eq);
    let next = ViscoState {
        b_e_a: b_a,
        b_e_b: b_b,
        f_prev: *f_new,
        t: st.t + dt,
    };
    Ok((
        next,
        StepOutput {
            tau: tau_eq + tau_a + tau_b,
            tau_eq,
            tau_a,
            tau_b,
        },
    ))
}

/// Advances the state to `f_new` over `dt > 0` and returns the new state with
/// the total Kirchhoff stress (equilibrium plus both branches, spatial frame).
pub fn update_state(
    st: &ViscoState,
    f_new: &DefGrad,
    dt: f64,
    eq: &EhmParams,
    vp: &ViscoParams,
) -> Result<(ViscoState, SymTensor3)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("time step must be > 0, got {dt}")));
    }
    let (next, out) = advance(st, f_new, dt, eq, vp, Corrector::Reduced)?;
    Ok((next, out.tau))
}

/// A material point that threads its state through successive updates.
#[derive(Debug, Clone, Copy)]
pub struct MaterialPoint {
    pub eq: EhmParams,
    pub vp: ViscoParams,
    pub state: ViscoState,
    pub corrector: Corrector,
}

impl MaterialPoint {
    pub fn new(eq: EhmParams, vp: ViscoParams) -> Self {
        Self {
            eq,
            vp,
            state: ViscoState::virgin(),
            corrector: Corrector::Reduced,
        }
    }

    /// Advances to `f_new`. `dt = 0` is an instantaneous elastic jump.
    pub fn step(&mut self, f_new: &DefGrad, dt: f64) -> Result<StepOutput> {
        if !(dt >= 0.0) || !dt.is_finite() {
            return Err(Error::Domain(format!("time step must be >= 0, got {dt}")));
        }
        let (next, out) = advance(&self.state, f_new, dt, &self.eq, &self.vp, self.corrector)?;
        self.state = next;
        Ok(out)
    }

    /// Evaluates a step without committing it.
    pub fn trial(&self, f_new: &DefGrad, dt: f64) -> Result<(ViscoState, StepOutput)> {
        advance(&self.state, f_new, dt, &self.eq, &self.vp, self.corrector)
    }

    /// Free energy of the current state, equilibrium plus branches.
    ///
    /// The equilibrium term needs nonzero nonlinearity parameters.
    pub fn free_energy(&self) -> Result<f64> {
        let log_v = self.state.f_prev.log_left_stretch()?;
        Ok(energy_ehm(&log_v, &self.eq)?
            + branch_energy(&self.state.b_e_a, Branch::A, &self.vp)?
            + branch_energy(&self.state.b_e_b, Branch::B, &self.vp)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadMode {
    /// Drives `γ(t)`, reports τ₁₂.
    Shear,
    /// Drives `log λ₁(t)` with traction-free lateral faces, reports σ₁₁.
    Uniaxial,
}

/// Strain-controlled sinusoid `strain(t) = pre_strain + amplitude · sin(2π f t)`.
///
/// For shear the strain is `γ`; for uniaxial loading it is the signed axial
/// logarithmic strain (compression negative).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadProgram {
    pub mode: LoadMode,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub pre_strain: f64,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_steps")]
    pub steps_per_cycle: usize,
}

pub const DEFAULT_CYCLES: usize = 5;
pub const DEFAULT_STEPS_PER_CYCLE: usize = 200;
pub const MIN_STEPS_PER_CYCLE: usize = 40;

fn default_cycles() -> usize {
    DEFAULT_CYCLES
}

fn default_steps() -> usize {
    DEFAULT_STEPS_PER_CYCLE
}

impl Default for LoadProgram {
    fn default() -> Self {
        Self {
            mode: LoadMode::Shear,
            amplitude: 1.0,
            frequency: 1.0,
            pre_strain: 0.0,
            cycles: DEFAULT_CYCLES,
            steps_per_cycle: DEFAULT_STEPS_PER_CYCLE,
        }
    }
}

impl LoadProgram {
    pub fn validate(&self) -> Result<()> {
        if !self.amplitude.is_finite() || !self.pre_strain.is_finite() {
            return Err(Error::InvalidParameter("non-finite load program".into()));
        }
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(Error::InvalidParameter("frequency must be > 0".into()));
        }
        if self.steps_per_cycle < MIN_STEPS_PER_CYCLE {
            return Err(Error::InvalidParameter(format!(
                "steps_per_cycle must be >= {MIN_STEPS_PER_CYCLE}"
            )));
        }
        if self.cycles < 1 {
            return Err(Error::InvalidParameter("cycles must be >= 1".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn dt(&self) -> f64 {
        self.period() / self.steps_per_cycle as f64
    }

    pub fn strain_at(&self, t: f64) -> f64 {
        self.pre_strain + self.amplitude * (2.0 * PI * self.frequency * t).sin()
    }
}

/// One sample of a cyclic simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeSample {
    pub t: f64,
    pub strain: f64,
    /// τ₁₂ in shear, σ₁₁ in uniaxial loading.
    pub stress: f64,
    pub branch_a_norm: f64,
    pub branch_b_norm: f64,
    /// Lateral log strain (uniaxial only, zero in shear).
    pub lateral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub program: LoadProgram,
    pub samples: Vec<TimeSample>,
}

impl TimeSeries {
    pub const COLUMNS: [&'static str; 5] = [
        "t_s",
        "strain",
        "stress_MPa",
        "branchA_norm",
        "branchB_norm",
    ];

    /// Samples of the final complete cycle, endpoints included.
    pub fn last_cycle(&self) -> Result<&[TimeSample]> {
        let n = self.program.steps_per_cycle;
        if self.samples.len() < n + 1 {
            return Err(Error::Input(format!(
                "series has {} samples, a full cycle needs {}",
                self.samples.len(),
                n + 1
            )));
        }
        Ok(&self.samples[self.samples.len() - n - 1..])
    }

    /// Samples of cycle `c` (zero based), endpoints included.
    pub fn cycle(&self, c: usize) -> Option<&[TimeSample]> {
        let n = self.program.steps_per_cycle;
        self.samples.get(c * n..=(c + 1) * n)
    }
}

/// Finds the lateral strain of a traction-free uniaxial step, branches included.
fn uniaxial_step(
    point: &MaterialPoint,
    l1: f64,
    l2_guess: f64,
    dt: f64,
) -> Result<(f64, ViscoState, StepOutput)> {
    let eval = |l2: f64| -> Result<(f64, ViscoState, StepOutput)> {
        let f = DefGrad::from_log_stretches(l1, l2, l2);
        let (st, out) = point.trial(&f, dt)?;
        Ok((out.tau.get(1, 1), st, out))
    };
    let (f0, st0, out0) = eval(l2_guess)?;
    if f0 == 0.0 {
        return Ok((l2_guess, st0, out0));
    }
    // τ₂₂ increases with the lateral strain; walk outward to a sign change.
    let mut width = 1e-6_f64.max(1e-3 * l1.abs());
    let (mut lo, mut hi, mut f_lo, mut f_hi);
    if f0 > 0.0 {
        hi = l2_guess;
        f_hi = f0;
        loop {
            lo = hi - width;
            f_lo = eval(lo)?.0;
            if f_lo <= 0.0 {
                break;
            }
            hi = lo;
            f_hi = f_lo;
            width *= 2.0;
            if width > 10.0 {
                return Err(Error::NonConvergence("uniaxial lateral bracket".into()));
            }
        }
    } else {
        lo = l2_guess;
        f_lo = f0;
        loop {
            hi = lo + width;
            f_hi = eval(hi)?.0;
            if f_hi >= 0.0 {
                break;
            }
            lo = hi;
            f_lo = f_hi;
            width *= 2.0;
            if width > 10.0 {
                return Err(Error::NonConvergence("uniaxial lateral bracket".into()));
            }
        }
    }
    // Illinois regula falsi.
    let mut side = 0i8;
    for _ in 0..200 {
        let x = if f_hi != f_lo {
            (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        } else {
            0.5 * (lo + hi)
        };
        let (fx, st, out) = eval(x)?;
        if fx.abs() <= 1e-12 || (hi - lo) <= 1e-15 {
            return Ok((x, st, out));
        }
        if fx > 0.0 {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
    }
    Err(Error::NonConvergence(format!(
        "uniaxial lateral solve at log_lambda1 = {l1}"
    )))
}

/// Runs a strain-controlled cyclic test from the virgin state.
///
/// The first sample is the instantaneous response to the pre-strain at `t = 0`.
pub fn simulate_cyclic(lp: &LoadProgram, eq: &EhmParams, vp: &ViscoParams) -> Result<TimeSeries> {
    lp.validate()?;
    vp.validate()?;
    let mut point = MaterialPoint::new(*eq, *vp);
    simulate_with(&mut point, lp)
}

/// Same as [`simulate_cyclic`] for a caller-provided material point.
pub fn simulate_with(point: &mut MaterialPoint, lp: &LoadProgram) -> Result<TimeSeries> {
    lp.validate()?;
    let dt = lp.dt();
    let total = lp.cycles * lp.steps_per_cycle;
    let mut samples = Vec::with_capacity(total + 1);
    let mut lateral = 0.0;
    for n in 0..=total {
        let t = n as f64 * dt;
        let step_dt = if n == 0 { 0.0 } else { dt };
        let strain = lp.strain_at(t);
        let wrap = |e: Error| match e {
            Error::NonConvergence(m) => Error::NonConvergence(format!("step {n}: {m}")),
            Error::Domain(m) => Error::Domain(format!("step {n}: {m}")),
            other => other,
        };
        let (stress, out) = match lp.mode {
            LoadMode::Shear => {
                let out = point
                    .step(&DefGrad::simple_shear(strain), step_dt)
                    .map_err(wrap)?;
                (out.tau.get(0, 1), out)
            }
            LoadMode::Uniaxial => {
                let guess = if n == 0 {
                    -strain * point.eq.poisson_ratio()
                } else {
                    lateral
                };
                let (l2, st, out) = uniaxial_step(point, strain, guess, step_dt).map_err(wrap)?;
                point.state = st;
                lateral = l2;
                let j = (strain + 2.0 * l2).exp();
                (out.tau.get(0, 0) / j, out)
            }
        };
        samples.push(TimeSample {
            t,
            strain,
            stress,
            branch_a_norm: out.tau_a.norm(),
            branch_b_norm: out.tau_b.norm(),
            lateral,
        });
    }
    Ok(TimeSeries {
        program: *lp,
        samples,
    })
}

/// Energy dissipated per cycle over the final cycle of a series.
///
/// Shear: `∮ τ₁₂ dγ`. Uniaxial: `∮ σ₁₁ dλ₁` with `λ₁ = exp(strain)`.
/// Trapezoidal quadrature over the recorded samples.
pub fn dissipation_per_cycle(series: &TimeSeries) -> Result<f64> {
    let cycle = series.last_cycle()?;
    let coord = |s: &TimeSample| match series.program.mode {
        LoadMode::Shear => s.strain,
        LoadMode::Uniaxial => s.strain.exp(),
    };
    Ok(cycle
        .windows(2)
        .map(|w| 0.5 * (w[0].stress + w[1].stress) * (coord(&w[1]) - coord(&w[0])))
        .sum())
}

/// One cell of a dissipation map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MapCell {
    pub frequency: f64,
    pub amplitude: f64,
    pub dissipation: f64,
}

/// Steady-cycle dissipation over a (frequency × amplitude) grid; the other
/// program fields come from `base`. Cells run on scoped threads.
pub fn dissipation_map(
    base: &LoadProgram,
    frequencies: &[f64],
    amplitudes: &[f64],
    eq: &EhmParams,
    vp: &ViscoParams,
) -> Result<Vec<MapCell>> {
    let programs: Vec<LoadProgram> = frequencies
        .iter()
        .flat_map(|&frequency| {
            amplitudes.iter().map(move |&amplitude| LoadProgram {
                frequency,
                amplitude,
                ..*base
            })
        })
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = programs
            .iter()
            .map(|lp| {
                scope.spawn(move || {
                    simulate_cyclic(lp, eq, vp).and_then(|s| dissipation_per_cycle(&s))
                })
            })
            .collect();
        programs
            .iter()
            .zip(handles)
            .map(|(lp, h)| {
                let d = h
                    .join()
                    .unwrap_or_else(|_| Err(Error::Invariant("map worker panicked".into())))?;
                Ok(MapCell {
                    frequency: lp.frequency,
                    amplitude: lp.amplitude,
                    dissipation: d,
                })
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn no_branches() -> ViscoParams {
        ViscoParams {
            mu_a: 0.0,
            mu_b: 0.0,
            ..ViscoParams::default()
        }
    }

    #[test]
    fn branch_stress_trivial_states() {
        let vp = ViscoParams::default();
        for br in [Branch::A, Branch::B] {
            assert_eq!(
                branch_stress(&SymTensor3::identity(), br, &vp)
                    .unwrap()
                    .norm(),
                0.0
            );
            let s = branch_stress(&SymTensor3::spherical(1.7), br, &vp).unwrap();
            assert!(s.norm() < 1e-15);
        }
        assert!(branch_stress(&SymTensor3::diag(1.0, -1.0, 1.0), Branch::A, &vp).is_err());
    }

    #[test]
    fn branch_stress_is_energy_gradient() {
        // Finite differences of W in principal space: τᵢ = 2 bᵢ ∂W/∂bᵢ.
        let vp = ViscoParams {
            mu_a: 0.3,
            k_a: 2.0,
            mu_b: 0.7,
            ..ViscoParams::default()
        };
        let mut seed = 7u64;
        let mut rnd = || {
            seed = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..50 {
            let b = [0.6 + rnd(), 1.0 + rnd(), 1.2 + 0.5 * rnd()];
            let q: Matrix3<f64> =
                Rotation3::from_euler_angles(3.0 * rnd(), 3.0 * rnd(), 3.0 * rnd()).into();
            let sp_b = SymTensor3::diag(b[0], b[1], b[2]).rotate(&q);
            for br in [Branch::A, Branch::B] {
                let tau = branch_stress(&sp_b, br, &vp)
                    .unwrap()
                    .rotate(&q.transpose());
                for i in 0..3 {
                    let h = 1e-6 * b[i];
                    let mut bp = b;
                    let mut bm = b;
                    bp[i] += h;
                    bm[i] -= h;
                    let w = |v: [f64; 3]| {
                        branch_energy(&SymTensor3::diag(v[0], v[1], v[2]), br, &vp).unwrap()
                    };
                    let fd = 2.0 * b[i] * (w(bp) - w(bm)) / (2.0 * h);
                    assert!((fd - tau.get(i, i)).abs() <= 1e-6 * tau.norm().max(1e-8));
                }
            }
        }
    }

    #[test]
    fn branch_stresses_are_deviatoric() {
        let vp = ViscoParams::default();
        let b = SymTensor3::new(1.3, 0.8, 1.1, 0.2, -0.1, 0.05);
        for br in [Branch::A, Branch::B] {
            let s = branch_stress(&b, br, &vp).unwrap();
            assert!(s.dev().max_abs_diff(&s) < 1e-15);
        }
    }

    #[test]
    fn holding_relaxes_monotonically() {
        let vp = ViscoParams::default();
        let eq = EhmParams::TDM500;
        let mut point = MaterialPoint::new(eq, vp);
        let f = DefGrad::simple_shear(0.8);
        point.step(&f, 0.0).unwrap();
        let mut prev_norm = f64::INFINITY;
        let mut prev_dev = f64::INFINITY;
        for _ in 0..200 {
            let out = point.step(&f, 0.5).unwrap();
            let neq = (out.tau_a + out.tau_b).norm();
            assert!(neq <= prev_norm + 1e-15);
            prev_norm = neq;
            let dev_b = log_sym(&point.state.b_e_b).unwrap().dev().norm();
            assert!(dev_b <= prev_dev + 1e-15);
            prev_dev = dev_b;
        }
        // After ≥ 20 relaxation times of the slow branch the stress is back to equilibrium.
        let t_slow = vp.relaxation_time(Branch::A);
        let mut t = 100.0;
        let mut out = point.step(&f, 1.0).unwrap();
        while t < 20.0 * t_slow + 100.0 {
            out = point.step(&f, 1.0).unwrap();
            t += 1.0;
        }
        assert!((out.tau - out.tau_eq).norm() < 1e-6);
    }

    #[test]
    fn update_rejects_bad_dt() {
        let st = ViscoState::virgin();
        let f = DefGrad::identity();
        let vp = ViscoParams::default();
        assert!(update_state(&st, &f, 0.0, &EhmParams::TDM500, &vp).is_err());
        assert!(update_state(&st, &f, -1.0, &EhmParams::TDM500, &vp).is_err());
        let (next, tau) = update_state(&st, &f, 0.1, &EhmParams::TDM500, &vp).unwrap();
        assert_eq!(tau.norm(), 0.0);
        assert!((next.t - 0.1).abs() < 1e-15);
    }

    #[test]
    fn reduced_and_full_correctors_agree() {
        let vp = ViscoParams {
            mu_a: 0.4,
            k_a: 3.0,
            mu_b: 0.2,
            ..ViscoParams::default()
        };
        let path = [
            nalgebra::Matrix3::new(1.2, 0.3, 0.0, 0.1, 0.9, 0.05, 0.0, -0.2, 1.05),
            nalgebra::Matrix3::new(1.3, 0.5, 0.1, 0.1, 0.8, 0.05, 0.0, -0.3, 1.0),
            nalgebra::Matrix3::new(0.9, -0.2, 0.1, 0.0, 1.1, 0.0, 0.2, 0.0, 0.95),
        ];
        let mut reduced = MaterialPoint::new(EhmParams::TDM600, vp);
        let mut full = MaterialPoint::new(EhmParams::TDM600, vp);
        full.corrector = Corrector::Full;
        for m in path {
            let f = DefGrad::new(m).unwrap();
            for dt in [0.05, 0.7] {
                let a = reduced.step(&f, dt).unwrap();
                let b = full.step(&f, dt).unwrap();
                assert!(a.tau.max_abs_diff(&b.tau) < 1e-10);
                assert!(reduced.state.b_e_a.max_abs_diff(&full.state.b_e_a) < 1e-10);
            }
        }
    }

    #[test]
    fn volumetric_part_of_branch_state_is_preserved() {
        let vp = ViscoParams::default();
        let mut point = MaterialPoint::new(EhmParams::TDM500, vp);
        let f = DefGrad::new(nalgebra::Matrix3::new(
            0.8, 0.2, 0.0, 0.0, 1.1, 0.0, 0.0, 0.0, 0.95,
        ))
        .unwrap();
        point.step(&f, 0.3).unwrap();
        let det_b = point.state.b_e_a.to_matrix().determinant();
        assert!((det_b - f.det().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn rotating_the_program_rotates_the_response() {
        let vp = ViscoParams {
            mu_a: 0.3,
            k_a: 1.0,
            mu_b: 0.2,
            ..ViscoParams::default()
        };
        let q: Matrix3<f64> = Rotation3::from_euler_angles(0.3, -1.1, 2.0).into();
        let mut plain = MaterialPoint::new(EhmParams::TDM800, vp);
        let mut turned = MaterialPoint::new(EhmParams::TDM800, vp);
        for n in 1..=60 {
            let t = n as f64 * 0.02;
            let m = nalgebra::Matrix3::new(
                1.0 + 0.2 * t.sin(),
                0.5 * t,
                0.0,
                0.1 * t,
                1.0 - 0.1 * t,
                0.0,
                0.0,
                0.05 * t.cos(),
                1.0,
            );
            let f = DefGrad::new(m).unwrap();
            let a = plain.step(&f, 0.02).unwrap();
            let b = turned.step(&f.rotated(&q), 0.02).unwrap();
            assert!(a.tau.rotate(&q).max_abs_diff(&b.tau) < 1e-10);
        }
    }

    #[test]
    fn step_relaxation_of_linear_branch() {
        let vp = ViscoParams {
            mu_a: 0.0,
            mu_b: 0.25,
            ..ViscoParams::default()
        };
        let t_rel = vp.relaxation_time(Branch::B);
        let mut point = MaterialPoint::new(EhmParams::TDM500, vp);
        let f = DefGrad::simple_shear(1e-3);
        let s0 = point.step(&f, 0.0).unwrap().tau_b.get(0, 1);
        let dt = t_rel / 2000.0;
        for n in 1..=6000 {
            let s = point.step(&f, dt).unwrap().tau_b.get(0, 1);
            if n % 1000 == 0 {
                let exact = s0 * (-(n as f64) * dt / t_rel).exp();
                assert!((s / exact - 1.0).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn no_branches_means_equilibrium_response() {
        let lp = LoadProgram {
            amplitude: 0.5,
            steps_per_cycle: 80,
            cycles: 2,
            ..LoadProgram::default()
        };
        let eq = EhmParams::TDM600;
        let series = simulate_cyclic(&lp, &eq, &no_branches()).unwrap();
        for s in &series.samples {
            assert!((s.stress - crate::drivers::shear_kirchhoff(s.strain, &eq)).abs() < 1e-15);
        }
        assert!(dissipation_per_cycle(&series).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn uniaxial_cyclic_without_branches_matches_driver() {
        let lp = LoadProgram {
            mode: LoadMode::Uniaxial,
            amplitude: 0.05,
            pre_strain: -0.1,
            steps_per_cycle: 40,
            cycles: 1,
            ..LoadProgram::default()
        };
        let eq = EhmParams::TDM500;
        let series = simulate_cyclic(&lp, &eq, &no_branches()).unwrap();
        for s in &series.samples {
            let sol = crate::drivers::uniaxial_solve(s.strain, &eq).unwrap();
            assert!((s.stress - sol.stress).abs() < 1e-9);
            assert!((s.lateral - sol.state.log_lambda2).abs() < 1e-9);
        }
        assert!(dissipation_per_cycle(&series).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn uniaxial_cycles_are_traction_free_and_dissipative() {
        let lp = LoadProgram {
            mode: LoadMode::Uniaxial,
            amplitude: 0.1,
            pre_strain: -0.1,
            cycles: 3,
            ..LoadProgram::default()
        };
        let vp = ViscoParams::default();
        let eq = EhmParams::TDM600;
        let mut point = MaterialPoint::new(eq, vp);
        let series = simulate_with(&mut point, &lp).unwrap();
        let last = series.samples.last().unwrap();
        let f = DefGrad::from_log_stretches(last.strain, last.lateral, last.lateral);
        let (_, out) = point.trial(&f, 0.0).unwrap();
        assert!(out.tau.get(1, 1).abs() < 1e-10);
        assert!(dissipation_per_cycle(&series).unwrap() > 0.0);
    }

    #[test]
    fn amplitude_zero_relaxes_to_equilibrium() {
        let lp = LoadProgram {
            amplitude: 0.0,
            pre_strain: 0.4,
            frequency: 1e-4,
            cycles: 1,
            steps_per_cycle: 400,
            ..LoadProgram::default()
        };
        let eq = EhmParams::TDM500;
        let vp = ViscoParams::default();
        let series = simulate_cyclic(&lp, &eq, &vp).unwrap();
        let first = series.samples[0].stress;
        let last = series.samples.last().unwrap().stress;
        let equilibrium = crate::drivers::shear_kirchhoff(0.4, &eq);
        assert!(first > last);
        assert!((last - equilibrium).abs() < 1e-6);
        assert!(series
            .samples
            .windows(2)
            .all(|w| w[1].stress <= w[0].stress + 1e-15));
    }

    #[test]
    fn program_validation() {
        let mut lp = LoadProgram {
            steps_per_cycle: 39,
            ..LoadProgram::default()
        };
        assert!(lp.validate().is_err());
        lp.steps_per_cycle = 40;
        lp.frequency = 0.0;
        assert!(lp.validate().is_err());
        lp.frequency = 1.0;
        lp.cycles = 0;
        assert!(lp.validate().is_err());
        assert!(ViscoParams {
            eta_d_a: 0.0,
            ..ViscoParams::default()
        }
        .validate()
        .is_err());
        assert!(ViscoParams {
            mu_b: -1.0,
            ..ViscoParams::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn dissipation_needs_a_full_cycle() {
        let lp = LoadProgram {
            steps_per_cycle: 40,
            cycles: 1,
            ..LoadProgram::default()
        };
        let mut series = simulate_cyclic(&lp, &EhmParams::TDM500, &ViscoParams::default()).unwrap();
        series.samples.truncate(30);
        assert!(dissipation_per_cycle(&series).is_err());
    }

    #[test]
    fn viscosity_defaults_in_json() {
        let vp: ViscoParams = serde_json::from_str(r#"{"mu_a":0.2,"k_a":1.0,"mu_b":0.3}"#).unwrap();
        assert_eq!(vp.eta_d_a, 12.0);
        assert_eq!(vp.eta_d_b, 1.0);
        let lp: LoadProgram =
            serde_json::from_str(r#"{"mode":"uniaxial","amplitude":0.1,"frequency":2.0}"#).unwrap();
        assert_eq!(lp.cycles, 5);
        assert_eq!(lp.steps_per_cycle, 200);
    }

    #[test]
    fn map_matches_single_runs() {
        let eq = EhmParams::TDM500;
        let vp = ViscoParams::default();
        let base = LoadProgram {
            cycles: 3,
            steps_per_cycle: 60,
            ..LoadProgram::default()
        };
        let map = dissipation_map(&base, &[0.5, 2.0], &[0.3], &eq, &vp).unwrap();
        assert_eq!(map.len(), 2);
        for c in &map {
            let lp = LoadProgram {
                frequency: c.frequency,
                amplitude: c.amplitude,
                ..base
            };
            let d = dissipation_per_cycle(&simulate_cyclic(&lp, &eq, &vp).unwrap()).unwrap();
            assert_eq!(c.dissipation, d);
            assert!(d > 0.0);
        }
    }
}
