//! Classical rubber models used as a comparison baseline: Arruda–Boyce,
//! Mooney–Rivlin and a three-term Ogden model.
//!
//! Each model acts on the unimodular part of the deformation and is extended to
//! compressibility with the decoupled volumetric energy `κ_vol/2 · (ln J)²`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{eig_sym, DefGrad, SymTensor3};

/// Inverse Langevin series coefficients of the eight-chain model.
const ARRUDA_BOYCE_C: [f64; 5] = [
    0.5,
    1.0 / 20.0,
    11.0 / 1050.0,
    19.0 / 7000.0,
    519.0 / 673750.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ClassicalParams {
    ArrudaBoyce {
        mu: f64,
        lambda_lock: f64,
        kappa_vol: f64,
    },
    MooneyRivlin {
        c10: f64,
        c01: f64,
        kappa_vol: f64,
    },
    Ogden3 {
        mu_p: [f64; 3],
        alpha_p: [f64; 3],
        kappa_vol: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassicalModel {
    ArrudaBoyce,
    MooneyRivlin,
    Ogden3,
}

impl ClassicalModel {
    pub const ALL: [ClassicalModel; 3] = [
        ClassicalModel::ArrudaBoyce,
        ClassicalModel::MooneyRivlin,
        ClassicalModel::Ogden3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ClassicalModel::ArrudaBoyce => "arruda_boyce",
            ClassicalModel::MooneyRivlin => "mooney_rivlin",
            ClassicalModel::Ogden3 => "ogden3",
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            ClassicalModel::ArrudaBoyce => &["mu", "lambda_lock", "kappa_vol"],
            ClassicalModel::MooneyRivlin => &["c10", "c01", "kappa_vol"],
            ClassicalModel::Ogden3 => &[
                "mu_1",
                "mu_2",
                "mu_3",
                "alpha_1",
                "alpha_2",
                "alpha_3",
                "kappa_vol",
            ],
        }
    }

    /// Rebuilds a parameter record from a flat vector in `param_names` order.
    pub fn params_from_slice(&self, v: &[f64]) -> ClassicalParams {
        match self {
            ClassicalModel::ArrudaBoyce => ClassicalParams::ArrudaBoyce {
                mu: v[0],
                lambda_lock: v[1],
                kappa_vol: v[2],
            },
            ClassicalModel::MooneyRivlin => ClassicalParams::MooneyRivlin {
                c10: v[0],
                c01: v[1],
                kappa_vol: v[2],
            },
            ClassicalModel::Ogden3 => ClassicalParams::Ogden3 {
                mu_p: [v[0], v[1], v[2]],
                alpha_p: [v[3], v[4], v[5]],
                kappa_vol: v[6],
            },
        }
    }
}

impl std::str::FromStr for ClassicalModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arruda_boyce" | "arruda-boyce" | "ab" => Ok(ClassicalModel::ArrudaBoyce),
            "mooney_rivlin" | "mooney-rivlin" | "mr" => Ok(ClassicalModel::MooneyRivlin),
            "ogden3" | "ogden" => Ok(ClassicalModel::Ogden3),
            other => Err(Error::Input(format!("unknown classical model '{other}'"))),
        }
    }
}

impl ClassicalParams {
    pub fn model(&self) -> ClassicalModel {
        match self {
            ClassicalParams::ArrudaBoyce { .. } => ClassicalModel::ArrudaBoyce,
            ClassicalParams::MooneyRivlin { .. } => ClassicalModel::MooneyRivlin,
            ClassicalParams::Ogden3 { .. } => ClassicalModel::Ogden3,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        match *self {
            ClassicalParams::ArrudaBoyce {
                mu,
                lambda_lock,
                kappa_vol,
            } => vec![mu, lambda_lock, kappa_vol],
            ClassicalParams::MooneyRivlin {
                c10,
                c01,
                kappa_vol,
            } => vec![c10, c01, kappa_vol],
            ClassicalParams::Ogden3 {
                mu_p,
                alpha_p,
                kappa_vol,
            } => vec![
                mu_p[0], mu_p[1], mu_p[2], alpha_p[0], alpha_p[1], alpha_p[2], kappa_vol,
            ],
        }
    }

    pub fn kappa_vol(&self) -> f64 {
        match *self {
            ClassicalParams::ArrudaBoyce { kappa_vol, .. }
            | ClassicalParams::MooneyRivlin { kappa_vol, .. }
            | ClassicalParams::Ogden3 { kappa_vol, .. } => kappa_vol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite parameter".into()));
        }
        if self.kappa_vol() <= 0.0 {
            return Err(Error::InvalidParameter("kappa_vol must be > 0".into()));
        }
        match *self {
            ClassicalParams::ArrudaBoyce {
                mu, lambda_lock, ..
            } => {
                if mu <= 0.0 || lambda_lock <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "Arruda-Boyce needs mu > 0 and lambda_lock > 0".into(),
                    ));
                }
            }
            ClassicalParams::MooneyRivlin { .. } => {}
            ClassicalParams::Ogden3 { mu_p, alpha_p, .. } => {
                let stability: f64 = mu_p.iter().zip(alpha_p).map(|(m, a)| m * a).sum();
                if stability <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "Ogden stability requires sum(mu_p * alpha_p) > 0".into(),
                    ));
                }
                if mu_p.iter().zip(alpha_p).any(|(&m, a)| m != 0.0 && a == 0.0) {
                    return Err(Error::InvalidParameter(
                        "Ogden exponents must be nonzero".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Small-strain shear modulus.
    pub fn shear_modulus(&self) -> f64 {
        match *self {
            ClassicalParams::ArrudaBoyce {
                mu, lambda_lock, ..
            } => {
                let w1: f64 = ARRUDA_BOYCE_C
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let n = (i + 1) as f64;
                        n * c * 3f64.powi(i as i32) / lambda_lock.powi(2 * i as i32)
                    })
                    .sum();
                2.0 * mu * w1
            }
            ClassicalParams::MooneyRivlin { c10, c01, .. } => 2.0 * (c10 + c01),
            ClassicalParams::Ogden3 { mu_p, alpha_p, .. } => {
                0.5 * mu_p.iter().zip(alpha_p).map(|(m, a)| m * a).sum::<f64>()
            }
        }
    }
}

/// Unimodular left Cauchy–Green tensor `J^{-2/3} F Fᵀ` and `J`.
fn isochoric_finger(f: &DefGrad) -> (SymTensor3, f64) {
    let j = f.det();
    (f.left_cauchy_green() * j.powf(-2.0 / 3.0), j)
}

fn ogden_terms(
    bbar: &SymTensor3,
    mu_p: &[f64; 3],
    alpha_p: &[f64; 3],
) -> Result<(f64, SymTensor3)> {
    let sp = eig_sym(bbar)?;
    let stretches = sp.values.map(|v| v.sqrt());
    let mut energy = 0.0;
    let mut principal = [0.0; 3];
    for (m, a) in mu_p.iter().zip(alpha_p) {
        if *m == 0.0 {
            continue;
        }
        let powers = stretches.map(|l| l.powf(*a));
        let sum: f64 = powers.iter().sum();
        energy += m / a * (sum - 3.0);
        for (pr, pw) in principal.iter_mut().zip(powers) {
            *pr += m * (pw - sum / 3.0);
        }
    }
    Ok((energy, sp.compose(principal)))
}

/// Strain energy (MPa) of a classical model.
pub fn energy_classical(f: &DefGrad, p: &ClassicalParams) -> Result<f64> {
    let (bbar, j) = isochoric_finger(f);
    let vol = 0.5 * p.kappa_vol() * j.ln().powi(2);
    let i1 = bbar.trace();
    let iso = match *p {
        ClassicalParams::ArrudaBoyce {
            mu, lambda_lock, ..
        } => ARRUDA_BOYCE_C
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let n = (i + 1) as i32;
                mu * c / lambda_lock.powi(2 * n - 2) * (i1.powi(n) - 3f64.powi(n))
            })
            .sum(),
        ClassicalParams::MooneyRivlin { c10, c01, .. } => {
            let i2 = 0.5 * (i1 * i1 - bbar.norm_squared());
            c10 * (i1 - 3.0) + c01 * (i2 - 3.0)
        }
        ClassicalParams::Ogden3 { mu_p, alpha_p, .. } => ogden_terms(&bbar, &mu_p, &alpha_p)?.0,
    };
    Ok(iso + vol)
}

/// Kirchhoff stress `τ = ∂W/∂F · Fᵀ` of a classical model.
pub fn kirchhoff_classical(f: &DefGrad, p: &ClassicalParams) -> Result<SymTensor3> {
    let (bbar, j) = isochoric_finger(f);
    let vol = SymTensor3::spherical(p.kappa_vol() * j.ln());
    let i1 = bbar.trace();
    let iso = match *p {
        ClassicalParams::ArrudaBoyce {
            mu, lambda_lock, ..
        } => {
            let w1: f64 = ARRUDA_BOYCE_C
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let n = (i + 1) as i32;
                    mu * c * n as f64 * i1.powi(n - 1) / lambda_lock.powi(2 * n - 2)
                })
                .sum();
            bbar.dev() * (2.0 * w1)
        }
        ClassicalParams::MooneyRivlin { c10, c01, .. } => {
            let bm = bbar.to_matrix();
            let b2 = SymTensor3::from_matrix(&(bm * bm));
            (bbar * (c10 + c01 * i1) - b2 * c01).dev() * 2.0
        }
        ClassicalParams::Ogden3 { mu_p, alpha_p, .. } => ogden_terms(&bbar, &mu_p, &alpha_p)?.1,
    };
    Ok(iso + vol)
}

/// Cauchy stress `σ = τ / J` of a classical model.
pub fn cauchy_classical(f: &DefGrad, p: &ClassicalParams) -> Result<SymTensor3> {
    Ok(kirchhoff_classical(f, p)? * (1.0 / f.det()))
}

/// First Piola–Kirchhoff stress `τ F⁻ᵀ`, handy for gradient checks in `F`.
pub fn piola_classical(f: &DefGrad, p: &ClassicalParams) -> Result<Matrix3<f64>> {
    Ok(kirchhoff_classical(f, p)?.to_matrix() * f.inverse().transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn samples() -> [ClassicalParams; 3] {
        [
            ClassicalParams::ArrudaBoyce {
                mu: 0.2,
                lambda_lock: 2.5,
                kappa_vol: 3.0,
            },
            ClassicalParams::MooneyRivlin {
                c10: 0.08,
                c01: 0.03,
                kappa_vol: 3.0,
            },
            ClassicalParams::Ogden3 {
                mu_p: [0.3, 0.01, -0.02],
                alpha_p: [1.5, 5.0, -2.0],
                kappa_vol: 3.0,
            },
        ]
    }

    #[test]
    fn reference_state_is_stress_free() {
        for p in samples() {
            p.validate().unwrap();
            let s = cauchy_classical(&DefGrad::identity(), &p).unwrap();
            assert!(s.norm() < 1e-14, "{p:?}");
            assert!(energy_classical(&DefGrad::identity(), &p).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn mooney_rivlin_shear_closed_form() {
        let p = ClassicalParams::MooneyRivlin {
            c10: 0.08,
            c01: 0.03,
            kappa_vol: 1e6,
        };
        for gamma in [0.1, 0.5, 1.0] {
            let s = cauchy_classical(&DefGrad::simple_shear(gamma), &p).unwrap();
            assert!((s.get(0, 1) - 2.0 * (0.08 + 0.03) * gamma).abs() < 1e-12);
        }
    }

    #[test]
    fn single_term_ogden_is_neo_hookean() {
        let mu = 0.25;
        let p = ClassicalParams::Ogden3 {
            mu_p: [mu, 0.0, 0.0],
            alpha_p: [2.0, 1.0, 1.0],
            kappa_vol: 1e6,
        };
        for gamma in [0.2, 0.7, 1.3] {
            let s = cauchy_classical(&DefGrad::simple_shear(gamma), &p).unwrap();
            assert!((s.get(0, 1) - mu * gamma).abs() < 1e-12);
            // neo-Hookean normal stress difference σ11 − σ22 = μγ²
            assert!((s.get(0, 0) - s.get(1, 1) - mu * gamma * gamma).abs() < 1e-12);
        }
        let neo = ClassicalParams::MooneyRivlin {
            c10: mu / 2.0,
            c01: 0.0,
            kappa_vol: 1e6,
        };
        let f = DefGrad::new(Matrix3::new(1.1, 0.2, 0.0, 0.0, 0.9, 0.1, 0.05, 0.0, 1.02)).unwrap();
        let a = cauchy_classical(&f, &p).unwrap();
        let b = cauchy_classical(&f, &neo).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-8);
    }

    #[test]
    fn small_strain_shear_modulus() {
        for p in samples() {
            let g = 1e-6;
            let s = cauchy_classical(&DefGrad::simple_shear(g), &p).unwrap();
            assert!((s.get(0, 1) / g / p.shear_modulus() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn validation_rejects_unstable_ogden() {
        let p = ClassicalParams::Ogden3 {
            mu_p: [-0.3, 0.0, 0.0],
            alpha_p: [2.0, 1.0, 1.0],
            kappa_vol: 1.0,
        };
        assert!(p.validate().is_err());
        let p = ClassicalParams::MooneyRivlin {
            c10: 0.1,
            c01: 0.0,
            kappa_vol: 0.0,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn vector_round_trip() {
        for p in samples() {
            assert_eq!(p.model().params_from_slice(&p.to_vec()), p);
        }
        let json = serde_json::to_string(&samples()[1]).unwrap();
        assert!(json.contains("\"model\":\"mooney_rivlin\""));
    }

    proptest! {
        #[test]
        fn stress_is_energy_gradient(
            entries in proptest::array::uniform9(-0.3..0.3f64),
            dir in proptest::array::uniform9(-1.0..1.0f64),
            which in 0usize..3,
        ) {
            let f = Matrix3::from_row_slice(&entries) + Matrix3::identity();
            prop_assume!(f.determinant() > 0.2);
            let f = DefGrad::new(f).unwrap();
            let p = samples()[which];
            let d = Matrix3::from_row_slice(&dir);
            let h = 1e-5;
            let wp = energy_classical(&DefGrad::new(f.matrix() + d * h).unwrap(), &p).unwrap();
            let wm = energy_classical(&DefGrad::new(f.matrix() - d * h).unwrap(), &p).unwrap();
            let fd = (wp - wm) / (2.0 * h);
            let piola = piola_classical(&f, &p).unwrap();
            let an = piola.component_mul(&d).sum();
            prop_assert!((fd - an).abs() <= 1e-6 * piola.norm() * d.norm(), "fd {fd} an {an}");
        }
    }
}
