//! Fleck–Cummings material: spectral opacity, multigroup Planck integrals
//! and a linear material energy law.
//!
//! Units: cm, ns, keV for temperature and photon energy, GJ for energy.

use crate::error::{Result, TrtError};
use crate::gauss::gauss_legendre;
use crate::phase_space::FrequencyGroups;
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Speed of light [cm/ns].
pub const SPEED_OF_LIGHT: f64 = 29.979_245_8;
/// Planck constant times speed of light [keV cm].
pub const HC: f64 = 1.239_841_984e-7;
/// One keV in GJ.
pub const KEV_IN_GJ: f64 = 1.602_176_634e-25;
/// Lowest temperature fed to opacity and Planck evaluations [keV].
pub const TEMPERATURE_FLOOR: f64 = 1.0e-6;

/// Radiation constant `a_R` [GJ / (cm^3 keV^4)].
pub fn radiation_constant() -> f64 {
    8.0 * PI.powi(5) / (15.0 * HC.powi(3)) * KEV_IN_GJ
}

const GL_ORDER: usize = 16;
const PANEL_WIDTH: f64 = 8.0;
/// Natural log of the relative integrand level at which the infinite tail is cut.
const TAIL_LOG_DROP: f64 = 69.077_552_789_821_37; // ln(1e30)

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Frequency dependence of the opacity.
#[derive(Clone, Debug, PartialEq)]
pub enum OpacityLaw {
    /// `amplitude * nu^-3 * (1 - exp(-nu/T))`.
    FleckCummings { amplitude: f64 },
    /// Frequency and temperature independent opacity.
    Constant(f64),
}

impl OpacityLaw {
    fn eval(&self, nu: f64, t: f64) -> f64 {
        match *self {
            OpacityLaw::FleckCummings { amplitude } => {
                amplitude * (-(-nu / t).exp_m1()) / (nu * nu * nu)
            }
            OpacityLaw::Constant(k) => k,
        }
    }
}

/// Material description and constants.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialModel {
    pub opacity: OpacityLaw,
    /// Heat capacity [GJ/(cm^3 keV)].
    pub cv: f64,
    pub c: f64,
    pub a_r: f64,
}

/// Group quantities at a single temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupPlanck {
    pub planck: f64,
    pub dplanck: f64,
    pub opacity: f64,
}

impl MaterialModel {
    /// F-C material with `c_v = cv_coeff * a_R * t_in^3`.
    pub fn fleck_cummings(t_in: f64, cv_coeff: f64) -> Result<Self> {
        if !(t_in > 0.0 && cv_coeff > 0.0) {
            return Err(TrtError::InvalidArgument(format!(
                "heat capacity needs positive t_in and coefficient, got {t_in}, {cv_coeff}"
            )));
        }
        let a_r = radiation_constant();
        Ok(MaterialModel {
            opacity: OpacityLaw::FleckCummings { amplitude: 27.0 },
            cv: cv_coeff * a_r * t_in.powi(3),
            c: SPEED_OF_LIGHT,
            a_r,
        })
    }

    pub fn with_opacity(mut self, law: OpacityLaw) -> Self {
        self.opacity = law;
        self
    }

    pub fn with_cv(mut self, cv: f64) -> Self {
        self.cv = cv;
        self
    }

    pub fn spectral_opacity(&self, nu: f64, t: f64) -> Result<f64> {
        if !(nu > 0.0 && t > 0.0) {
            return Err(TrtError::InvalidArgument(format!(
                "opacity needs positive frequency and temperature, got nu={nu}, T={t}"
            )));
        }
        Ok(self.opacity.eval(nu, t))
    }

    /// `a_R c / (4 pi) * 15 / pi^4`, the factor in front of `T^4 * int f`.
    fn planck_prefactor(&self) -> f64 {
        self.a_r * self.c / (4.0 * PI) * 15.0 / PI.powi(4)
    }

    /// Group Planckian, its temperature derivative and the Planck-mean
    /// opacity, evaluated on one shared set of quadrature nodes.
    pub fn group_planck(&self, groups: &FrequencyGroups, g: usize, t: f64) -> GroupPlanck {
        let t = t.max(TEMPERATURE_FLOOR);
        let (lo, hi) = groups.bounds(g);
        let (xa, xb) = (lo / t, hi / t);
        let xb = xb.min(tail_cut(xa, xb));
        // Integrands are scaled by exp(xa), which cancels in the mean opacity.
        let mut sf = 0.0;
        let mut sg = 0.0;
        let mut sk = 0.0;
        let (nodes, weights) = gl16();
        let panels = ((xb - xa) / PANEL_WIDTH).ceil().max(1.0) as usize;
        let h = (xb - xa) / panels as f64;
        for p in 0..panels {
            let a = xa + p as f64 * h;
            for (xn, wn) in nodes.iter().zip(weights) {
                let x = a + 0.5 * h * (1.0 + xn);
                let w = 0.5 * h * wn;
                let em = -(-x).exp_m1();
                let decay = (xa - x).exp();
                let f = x * x * x * decay / em;
                sf += w * f;
                sg += w * x * f / em;
                sk += w * self.opacity.eval(x * t, t) * f;
            }
        }
        let scale = (-xa).exp();
        let pre = self.planck_prefactor();
        let opacity = sk / sf;
        GroupPlanck {
            planck: pre * t.powi(4) * sf * scale,
            dplanck: pre * t.powi(3) * sg * scale,
            opacity,
        }
    }

    pub fn planck_group(&self, groups: &FrequencyGroups, g: usize, t: f64) -> f64 {
        self.group_planck(groups, g, t).planck
    }

    pub fn planck_group_deriv(&self, groups: &FrequencyGroups, g: usize, t: f64) -> f64 {
        self.group_planck(groups, g, t).dplanck
    }

    pub fn group_opacity(&self, groups: &FrequencyGroups, g: usize, t: f64) -> f64 {
        self.group_planck(groups, g, t).opacity
    }

    pub fn material_energy(&self, t: &[f64]) -> Result<Vec<f64>> {
        t.iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(self.cv * v)
                } else {
                    Err(TrtError::InvalidArgument(format!("non-positive temperature {v}")))
                }
            })
            .collect()
    }

    pub fn inverse_material_energy(&self, eps: &[f64]) -> Result<Vec<f64>> {
        eps.iter()
            .map(|&v| {
                if v > 0.0 {
                    Ok(v / self.cv)
                } else {
                    Err(TrtError::InvalidArgument(format!("non-positive material energy {v}")))
                }
            })
            .collect()
    }

    /// Group opacities and Planckians for every cell, laid out `[g * X + i]`.
    pub fn evaluate(&self, groups: &FrequencyGroups, t: &[f64]) -> CellMaterial {
        let nc = t.len();
        let ng = groups.len();
        let mut kappa = vec![0.0; ng * nc];
        let mut planck = vec![0.0; ng * nc];
        for g in 0..ng {
            for (i, &ti) in t.iter().enumerate() {
                let gp = self.group_planck(groups, g, ti);
                kappa[g * nc + i] = gp.opacity;
                planck[g * nc + i] = gp.planck;
            }
        }
        CellMaterial {
            n_cells: nc,
            kappa,
            planck,
        }
    }
}

/// Per-cell group opacities and Planckians.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMaterial {
    pub n_cells: usize,
    pub kappa: Vec<f64>,
    pub planck: Vec<f64>,
}

impl CellMaterial {
    #[inline]
    pub fn kappa(&self, g: usize, i: usize) -> f64 {
        self.kappa[g * self.n_cells + i]
    }

    #[inline]
    pub fn planck(&self, g: usize, i: usize) -> f64 {
        self.planck[g * self.n_cells + i]
    }
}

/// `ln(x^3 / (e^x - 1))`.
fn log_planck_integrand(x: f64) -> f64 {
    3.0 * x.ln() - x - (-(-x).exp_m1()).ln()
}

/// Upper integration limit beyond which the Planck integrand is below
/// `1e-30` of its maximum on `[xa, xb]`.
fn tail_cut(xa: f64, xb: f64) -> f64 {
    const PEAK: f64 = 2.821_439_372_122_079;
    let xp = PEAK.clamp(xa, xb);
    let target = log_planck_integrand(xp) - TAIL_LOG_DROP;
    if log_planck_integrand(xb) >= target {
        return xb;
    }
    let (mut a, mut b) = (xp, xb);
    // Bracket tightly first so the bisection does not start from 1e13.
    let mut probe = xp.max(1.0);
    while probe < b {
        if log_planck_integrand(probe) < target {
            b = probe;
            break;
        }
        a = probe;
        probe *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if log_planck_integrand(m) >= target {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-12 * b {
            break;
        }
    }
    b
}
