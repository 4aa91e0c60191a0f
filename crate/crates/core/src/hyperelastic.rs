//! Hencky-type strain energies and their stresses.
//!
//! All energies here are isotropic functions of the logarithmic strain
//! `h = log U`, so the Kirchhoff stress is simply the gradient `D_h W`.
//! The modified exponentiated Hencky energy is
//!
//! ```text
//! W = μ/k · exp(k‖dev h‖²) + κ/(2k̂) · exp(k̂ x²) + κ₁/(m k̃) · exp(k̃ |x|^m),   x = tr h
//! ```
//!
//! The first two terms carry the infinitesimal shear and bulk moduli; the third
//! only switches on at finite volumetric strain when `m > 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SymTensor3;

/// Parameters of the modified exponentiated Hencky energy.
///
/// Moduli are in MPa, everything else is dimensionless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EhmParams {
    pub mu: f64,
    pub k: f64,
    pub kappa: f64,
    pub k_hat: f64,
    pub kappa1: f64,
    pub k_tilde: f64,
    pub m: f64,
}

/// Non-fatal remarks attached to a parameter set by [`EhmParams::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ParamWarning {
    /// With `m = 2` the κ₁ term adds to the infinitesimal bulk modulus.
    QuadraticLargeStrainBulk,
}

impl std::fmt::Display for ParamWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParamWarning::QuadraticLargeStrainBulk => write!(
                f,
                "m = 2: the kappa1 term stiffens the infinitesimal bulk modulus to kappa + kappa1"
            ),
        }
    }
}

impl EhmParams {
    pub const PARAM_NAMES: [&'static str; 7] =
        ["mu", "k", "kappa", "k_hat", "kappa1", "k_tilde", "m"];

    /// Fitted equilibrium parameters for the 500 kg/m³ material.
    pub const TDM500: Self = Self {
        mu: 0.12,
        k: 0.59,
        kappa: 1.40,
        k_hat: 0.13,
        kappa1: 116.0,
        k_tilde: 268.0,
        m: 4.0,
    };

    /// Fitted equilibrium parameters for the 600 kg/m³ material.
    pub const TDM600: Self = Self {
        mu: 0.19,
        k: 0.39,
        kappa: 2.80,
        k_hat: 0.13,
        kappa1: 647.0,
        k_tilde: 1989.0,
        m: 6.0,
    };

    /// Fitted equilibrium parameters for the 800 kg/m³ material.
    pub const TDM800: Self = Self {
        mu: 0.50,
        k: 0.27,
        kappa: 4.40,
        k_hat: 0.13,
        kappa1: 404.0,
        k_tilde: 1353.0,
        m: 6.0,
    };

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.mu,
            self.k,
            self.kappa,
            self.k_hat,
            self.kappa1,
            self.k_tilde,
            self.m,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            mu: a[0],
            k: a[1],
            kappa: a[2],
            k_hat: a[3],
            kappa1: a[4],
            k_tilde: a[5],
            m: a[6],
        }
    }

    /// Checks admissibility. `strict` additionally enforces the planar
    /// rank-one convexity bounds `k ≥ 1/4`, `k̂ ≥ 1/8` from the literature.
    pub fn validate(&self, strict: bool) -> Result<Vec<ParamWarning>> {
        let a = self.to_array();
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if self.mu <= 0.0 {
            return bad("mu must be > 0");
        }
        if self.kappa <= 0.0 {
            return bad("kappa must be > 0");
        }
        if self.kappa1 < 0.0 {
            return bad("kappa1 must be >= 0");
        }
        if self.k < 0.0 || self.k_hat < 0.0 || self.k_tilde < 0.0 {
            return bad("k, k_hat and k_tilde must be >= 0");
        }
        if self.m < 2.0 {
            return bad("m must be >= 2");
        }
        if strict && (self.k < 0.25 || self.k_hat < 0.125) {
            return bad("strict mode requires k >= 1/4 and k_hat >= 1/8");
        }
        let mut warnings = Vec::new();
        if self.m == 2.0 && self.kappa1 > 0.0 {
            warnings.push(ParamWarning::QuadraticLargeStrainBulk);
        }
        Ok(warnings)
    }

    /// First Lamé constant implied by `κ = (2μ + 3λ)/3`.
    pub fn lame_lambda(&self) -> f64 {
        self.kappa - 2.0 * self.mu / 3.0
    }

    /// Linear-elastic Poisson ratio implied by `(μ, κ)`.
    pub fn poisson_ratio(&self) -> f64 {
        (3.0 * self.kappa - 2.0 * self.mu) / (2.0 * (3.0 * self.kappa + self.mu))
    }
}

/// The three densities with published parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Material {
    #[serde(rename = "TDM500")]
    Tdm500,
    #[serde(rename = "TDM600")]
    Tdm600,
    #[serde(rename = "TDM800")]
    Tdm800,
}

impl Material {
    pub const ALL: [Material; 3] = [Material::Tdm500, Material::Tdm600, Material::Tdm800];

    pub fn label(&self) -> &'static str {
        match self {
            Material::Tdm500 => "TDM500",
            Material::Tdm600 => "TDM600",
            Material::Tdm800 => "TDM800",
        }
    }

    pub fn params(&self) -> EhmParams {
        match self {
            Material::Tdm500 => EhmParams::TDM500,
            Material::Tdm600 => EhmParams::TDM600,
            Material::Tdm800 => EhmParams::TDM800,
        }
    }
}

impl std::str::FromStr for Material {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match t.to_ascii_lowercase().as_str() {
            "tdm500" | "500" => Ok(Material::Tdm500),
            "tdm600" | "600" => Ok(Material::Tdm600),
            "tdm800" | "800" => Ok(Material::Tdm800),
            _ => Err(Error::Input(format!("unknown material '{s}'"))),
        }
    }
}

impl std::fmt::Display for Material {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `|x|^m / x`, continued by its limit 0 at `x = 0`.
pub(crate) fn signed_pow_ratio(x: f64, m: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(m - 1.0)
    }
}

/// Coefficient of the identity in the Kirchhoff stress, a function of `x = tr log U`:
/// `κ e^{k̂x²} x + κ₁ e^{k̃|x|^m} |x|^m/x`.
pub fn volumetric_kirchhoff(x: f64, p: &EhmParams) -> f64 {
    let ax = x.abs();
    let large = if p.kappa1 == 0.0 {
        0.0
    } else {
        p.kappa1 * (p.k_tilde * ax.powf(p.m)).exp() * signed_pow_ratio(x, p.m)
    };
    p.kappa * (p.k_hat * x * x).exp() * x + large
}

/// Derivative of [`volumetric_kirchhoff`] with respect to `x`.
pub fn volumetric_stiffness(x: f64, p: &EhmParams) -> f64 {
    let ax = x.abs();
    let small = p.kappa * (p.k_hat * x * x).exp() * (1.0 + 2.0 * p.k_hat * x * x);
    if p.kappa1 == 0.0 {
        return small;
    }
    let e = (p.k_tilde * ax.powf(p.m)).exp();
    let large = if ax == 0.0 {
        if p.m == 2.0 {
            p.kappa1
        } else {
            0.0
        }
    } else {
        p.kappa1
            * e
            * ((p.m - 1.0) * ax.powf(p.m - 2.0) + p.k_tilde * p.m * ax.powf(2.0 * p.m - 2.0))
    };
    small + large
}

/// Modified exponentiated Hencky energy (MPa).
///
/// Undefined when any of `k`, `k̂`, `k̃` is zero (the additive constants
/// `μ/k`, … blow up); the stresses stay well defined in that limit.
pub fn energy_ehm(log_u: &SymTensor3, p: &EhmParams) -> Result<f64> {
    if p.k == 0.0 || p.k_hat == 0.0 || (p.k_tilde == 0.0 && p.kappa1 != 0.0) {
        return Err(Error::InvalidParameter(
            "energy undefined for a zero nonlinearity parameter (stress is defined)".into(),
        ));
    }
    let x = log_u.trace();
    let dev2 = log_u.dev().norm_squared();
    let large = if p.kappa1 == 0.0 {
        0.0
    } else {
        p.kappa1 / (p.m * p.k_tilde) * (p.k_tilde * x.abs().powf(p.m)).exp()
    };
    Ok(p.mu / p.k * (p.k * dev2).exp()
        + p.kappa / (2.0 * p.k_hat) * (p.k_hat * x * x).exp()
        + large)
}

/// Kirchhoff stress of the modified exponentiated Hencky energy.
pub fn kirchhoff_ehm(log_u: &SymTensor3, p: &EhmParams) -> SymTensor3 {
    let d = log_u.dev();
    let shear = 2.0 * p.mu * (p.k * d.norm_squared()).exp();
    d * shear + SymTensor3::spherical(volumetric_kirchhoff(log_u.trace(), p))
}

/// Cauchy stress `σ = e^{−tr log U} τ`.
pub fn cauchy_ehm(log_u: &SymTensor3, p: &EhmParams) -> SymTensor3 {
    kirchhoff_ehm(log_u, p) * (-log_u.trace()).exp()
}

/// Quadratic Hencky energy `μ‖dev h‖² + κ/2 (tr h)²`.
pub fn energy_hencky(log_u: &SymTensor3, mu: f64, kappa: f64) -> f64 {
    let x = log_u.trace();
    mu * log_u.dev().norm_squared() + 0.5 * kappa * x * x
}

pub fn kirchhoff_hencky(log_u: &SymTensor3, mu: f64, kappa: f64) -> SymTensor3 {
    log_u.dev() * (2.0 * mu) + SymTensor3::spherical(kappa * log_u.trace())
}

/// Exponentiated Hencky energy (no large-strain bulk term).
pub fn energy_eh(log_u: &SymTensor3, mu: f64, k: f64, kappa: f64, k_hat: f64) -> f64 {
    let x = log_u.trace();
    mu / k * (k * log_u.dev().norm_squared()).exp() + kappa / (2.0 * k_hat) * (k_hat * x * x).exp()
}

pub fn kirchhoff_eh(log_u: &SymTensor3, mu: f64, k: f64, kappa: f64, k_hat: f64) -> SymTensor3 {
    let d = log_u.dev();
    let x = log_u.trace();
    d * (2.0 * mu * (k * d.norm_squared()).exp())
        + SymTensor3::spherical(kappa * (k_hat * x * x).exp() * x)
}

/// Tangent shear and bulk moduli at the reference state by central differences
/// of the stress with step `h`.
pub fn reference_moduli(p: &EhmParams, h: f64) -> (f64, f64) {
    let shear = SymTensor3::new(0.0, 0.0, 0.0, h, 0.0, 0.0);
    let g =
        (kirchhoff_ehm(&shear, p).get(0, 1) - kirchhoff_ehm(&(-shear), p).get(0, 1)) / (4.0 * h);
    let vol = SymTensor3::spherical(h / 3.0);
    let pressure = |t: &SymTensor3| kirchhoff_ehm(t, p).trace() / 3.0;
    let bulk = (pressure(&vol) - pressure(&(-vol))) / (2.0 * h);
    (g, bulk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Rotation3, Vector3};
    use proptest::prelude::*;

    const ROWS: [EhmParams; 3] = [EhmParams::TDM500, EhmParams::TDM600, EhmParams::TDM800];

    fn fd_gradient(log_u: &SymTensor3, dir: &SymTensor3, p: &EhmParams, h: f64) -> f64 {
        let plus = energy_ehm(&(*log_u + *dir * h), p).unwrap();
        let minus = energy_ehm(&(*log_u - *dir * h), p).unwrap();
        (plus - minus) / (2.0 * h)
    }

    #[test]
    fn reference_energy_is_sum_of_constants() {
        let w = energy_ehm(&SymTensor3::zero(), &EhmParams::TDM500).unwrap();
        // μ/k + κ/(2k̂) + κ₁/(m k̃) evaluated at 30 digits
        assert!((w - 5.69621417034773978867072719843).abs() < 1e-13);
    }

    #[test]
    fn reference_state_is_energy_minimum() {
        let p = EhmParams::TDM500;
        let w0 = energy_ehm(&SymTensor3::zero(), &p).unwrap();
        let steps = [-0.02, -0.01, 0.01, 0.02];
        for a in steps {
            for b in steps {
                for c in steps {
                    for s in [0.0, 0.01] {
                        let t = SymTensor3::new(a, b, c, s, -s, s);
                        assert!(energy_ehm(&t, &p).unwrap() > w0);
                    }
                }
            }
        }
    }

    #[test]
    fn dilatation_leaves_deviatoric_energy_constant() {
        let p = EhmParams::TDM600;
        for x in [-0.3, -0.1, 0.05, 0.2] {
            let t = SymTensor3::spherical(x / 3.0);
            let vol_only = EhmParams { mu: 1e-300, ..p };
            let diff = energy_ehm(&t, &p).unwrap() - energy_ehm(&t, &vol_only).unwrap();
            assert!((diff - (p.mu / p.k - 1e-300 / p.k)).abs() < 1e-12);
        }
    }

    #[test]
    fn stress_free_reference() {
        for p in ROWS {
            assert_eq!(kirchhoff_ehm(&SymTensor3::zero(), &p), SymTensor3::zero());
        }
    }

    #[test]
    fn shear_stress_at_unit_shear() {
        let log_u = SymTensor3::new(
            -0.215204470482002019444716616475,
            0.215204470482002019444716616475,
            0.0,
            0.430408940964004038889433232951,
            0.0,
            0.0,
        );
        let tau = kirchhoff_ehm(&log_u, &EhmParams::TDM500);
        assert!((tau.get(0, 1) - 0.135756917463281407061303466121).abs() < 1e-14);
    }

    #[test]
    fn cauchy_scaling() {
        let p = EhmParams::TDM500;
        let traceless = SymTensor3::new(0.1, -0.3, 0.2, 0.05, 0.0, -0.1);
        assert_eq!(
            cauchy_ehm(&traceless, &p),
            kirchhoff_ehm(&traceless, &p) * (-traceless.trace()).exp()
        );
        assert!(cauchy_ehm(&traceless, &p).max_abs_diff(&kirchhoff_ehm(&traceless, &p)) < 1e-15);
        let h = SymTensor3::diag(-0.3, 0.0, 0.0);
        let ratio = cauchy_ehm(&h, &p).get(0, 0) / kirchhoff_ehm(&h, &p).get(0, 0);
        assert!((ratio - 0.3_f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn uniaxial_deviatoric_projection_shape() {
        let p = EhmParams::TDM800;
        let (a, x) = (-0.4, -0.05);
        let h = SymTensor3::diag(a + x / 3.0, -0.5 * a + x / 3.0, -0.5 * a + x / 3.0);
        let s_dev = cauchy_ehm(&h, &p).dev();
        let s = 1.5 * s_dev.get(0, 0);
        let expected = SymTensor3::diag(2.0 * s / 3.0, -s / 3.0, -s / 3.0);
        assert!(s_dev.max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn zero_large_strain_modulus_reduces_to_eh() {
        let p = EhmParams {
            kappa1: 0.0,
            ..EhmParams::TDM600
        };
        let h = SymTensor3::new(-0.2, 0.1, 0.05, 0.1, 0.02, -0.03);
        let w_ehm = energy_ehm(&h, &p).unwrap();
        let w_eh = energy_eh(&h, p.mu, p.k, p.kappa, p.k_hat);
        assert!((w_ehm - w_eh).abs() < 1e-14);
        let t_ehm = kirchhoff_ehm(&h, &p);
        let t_eh = kirchhoff_eh(&h, p.mu, p.k, p.kappa, p.k_hat);
        assert!(t_ehm.max_abs_diff(&t_eh) < 1e-15);
    }

    #[test]
    fn hencky_reference_and_small_nonlinearity_limit() {
        assert_eq!(energy_hencky(&SymTensor3::zero(), 1.0, 2.0), 0.0);
        let (mu, kappa) = (0.3, 2.0);
        let grid = [-0.17, -0.05, 0.0, 0.08, 0.17];
        for a in grid {
            for b in grid {
                for s in [0.0, 0.05] {
                    let h = SymTensor3::new(a, b, -0.5 * a, s, 0.0, s);
                    if h.norm() > 0.3 {
                        continue;
                    }
                    let eh = kirchhoff_eh(&h, mu, 1e-6, kappa, 1e-6);
                    let qh = kirchhoff_hencky(&h, mu, kappa);
                    assert!((eh - qh).norm() <= 1e-4 * qh.norm().max(1e-300) + 1e-300);
                    let dw = energy_eh(&h, mu, 1e-6, kappa, 1e-6) - energy_hencky(&h, mu, kappa);
                    let c = mu / 1e-6 + kappa / 2e-6;
                    assert!((dw - c).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn zero_nonlinearity_energy_is_undefined_but_stress_is_not() {
        let p = EhmParams {
            k: 0.0,
            k_hat: 0.0,
            k_tilde: 0.0,
            m: 2.0,
            ..EhmParams::TDM500
        };
        assert!(energy_ehm(&SymTensor3::zero(), &p).is_err());
        let tau = kirchhoff_ehm(&SymTensor3::spherical(0.01), &p);
        assert!(tau.is_finite());
        assert!((tau.trace() / 3.0 - (p.kappa + p.kappa1) * 0.03).abs() < 1e-12);
    }

    #[test]
    fn parameter_validation() {
        for p in ROWS {
            assert!(p.validate(false).unwrap().is_empty());
            assert!(p.validate(true).unwrap().is_empty());
        }
        let m2 = EhmParams {
            m: 2.0,
            ..EhmParams::TDM500
        };
        assert_eq!(
            m2.validate(false).unwrap(),
            vec![ParamWarning::QuadraticLargeStrainBulk]
        );
        assert!(EhmParams {
            m: 1.5,
            ..EhmParams::TDM500
        }
        .validate(false)
        .is_err());
        assert!(EhmParams {
            mu: 0.0,
            ..EhmParams::TDM500
        }
        .validate(false)
        .is_err());
        assert!(EhmParams {
            k: 0.1,
            ..EhmParams::TDM500
        }
        .validate(true)
        .is_err());
        assert!(EhmParams {
            k: 0.1,
            ..EhmParams::TDM500
        }
        .validate(false)
        .is_ok());
        assert!(EhmParams {
            kappa1: -1.0,
            ..EhmParams::TDM500
        }
        .validate(false)
        .is_err());
    }

    #[test]
    fn json_keys() {
        let json = serde_json::to_value(EhmParams::TDM500).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        for name in EhmParams::PARAM_NAMES {
            assert!(keys.contains(&name.to_string()));
        }
        let back: EhmParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, EhmParams::TDM500);
    }

    #[test]
    fn lame_and_poisson() {
        let p = EhmParams::TDM500;
        assert!(((2.0 * p.mu + 3.0 * p.lame_lambda()) / 3.0 - p.kappa).abs() < 1e-15);
        let nu = p.poisson_ratio();
        let e = 9.0 * p.kappa * p.mu / (3.0 * p.kappa + p.mu);
        assert!((e / (2.0 * (1.0 + nu)) - p.mu).abs() < 1e-14);
    }

    #[test]
    fn volumetric_stiffness_matches_difference_quotient() {
        for p in ROWS {
            for x in [-0.3, -0.1, -0.01, 0.02, 0.15] {
                let h = 1e-6;
                let fd =
                    (volumetric_kirchhoff(x + h, &p) - volumetric_kirchhoff(x - h, &p)) / (2.0 * h);
                let an = volumetric_stiffness(x, &p);
                assert!((fd - an).abs() <= 1e-6 * an.abs());
            }
        }
    }

    #[test]
    fn infinitesimal_moduli() {
        for p in ROWS {
            let (g, k) = reference_moduli(&p, 1e-6);
            assert!((g / p.mu - 1.0).abs() < 1e-3);
            assert!((k / p.kappa - 1.0).abs() < 1e-3);
        }
    }

    fn random_state() -> impl Strategy<Value = SymTensor3> {
        proptest::array::uniform6(-0.25..0.25f64).prop_map(SymTensor3)
    }

    proptest! {
        #[test]
        fn stress_is_energy_gradient(
            h in random_state(),
            dir in proptest::array::uniform6(-1.0..1.0f64),
            row in 0usize..3,
        ) {
            let p = ROWS[row];
            let dir = SymTensor3(dir);
            let dir = dir * (1.0 / dir.norm().max(1e-12));
            let x = h.trace().abs();
            let stiff = 2.0 * p.k * h.dev().norm() + 2.0 * p.k_hat * x + p.k_tilde * p.m * x.powf(p.m - 1.0);
            let fd = fd_gradient(&h, &dir, &p, 1e-5 / (1.0 + stiff));
            let an = kirchhoff_ehm(&h, &p).ddot(&dir);
            let scale = kirchhoff_ehm(&h, &p).norm().max(1e-3);
            prop_assert!((fd - an).abs() <= 1e-6 * scale, "fd {fd} an {an}");
        }

        #[test]
        fn stress_is_isotropic(
            h in random_state(),
            axis in proptest::array::uniform3(-1.0..1.0f64),
            angle in -3.0..3.0f64,
        ) {
            let axis = Vector3::from(axis);
            prop_assume!(axis.norm() > 1e-3);
            let q: Matrix3<f64> = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).into();
            let p = EhmParams::TDM600;
            let lhs = kirchhoff_ehm(&h.rotate(&q), &p);
            let rhs = kirchhoff_ehm(&h, &p).rotate(&q);
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * rhs.norm().max(1.0));
        }

        #[test]
        fn cauchy_kirchhoff_relation(h in random_state()) {
            let p = EhmParams::TDM800;
            let back = cauchy_ehm(&h, &p) * h.trace().exp();
            prop_assert!(back.max_abs_diff(&kirchhoff_ehm(&h, &p)) <= 1e-12 * kirchhoff_ehm(&h, &p).norm().max(1.0));
        }
    }
}
