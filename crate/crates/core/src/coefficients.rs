//! Constitutive laws, their declared bounds and the hypothesis sampler.
//!
//! Every temperature-dependent law is one of a handful of named models. The
//! temperature argument is clamped into [`CoefficientSet::theta_range`]
//! before a model is evaluated, so a law declared on the operating range
//! stays inside its bounds for every real argument.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Electrode, Subdomain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicalConstants {
    /// Universal gas constant [J/(mol K)].
    pub gas_constant: f64,
    /// Faraday constant [C/mol].
    pub faraday: f64,
    /// Molar masses of the two transported species [kg/mol].
    pub molar_mass: [f64; 2],
    /// Molar mass of the channel gas used in the ideal-gas law [kg/mol].
    pub molar_mass_gas: f64,
    pub rho_water: f64,
    pub rho_air: f64,
    pub p_atm: f64,
    pub theta_r: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            gas_constant: 8.314,
            faraday: 9.6485e4,
            // Hydronium and water.
            molar_mass: [1e-3, 18e-3],
            molar_mass_gas: 28.97e-3,
            rho_water: 970.0,
            rho_air: 0.995,
            p_atm: 101_325.0,
            theta_r: 357.15,
        }
    }
}

impl PhysicalConstants {
    /// Specific gas constant `R_M = R / M` of the channel gas.
    pub fn r_m(&self) -> f64 {
        self.gas_constant / self.molar_mass_gas
    }

    /// Air density from the ideal-gas law at `p_atm`, `theta_r`.
    pub fn ideal_gas_air_density(&self) -> f64 {
        self.p_atm * self.molar_mass_gas / (self.gas_constant * self.theta_r)
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        let items = [
            ("constants.gas_constant", self.gas_constant),
            ("constants.faraday", self.faraday),
            ("constants.molar_mass[0]", self.molar_mass[0]),
            ("constants.molar_mass[1]", self.molar_mass[1]),
            ("constants.molar_mass_gas", self.molar_mass_gas),
            ("constants.rho_water", self.rho_water),
            ("constants.rho_air", self.rho_air),
            ("constants.p_atm", self.p_atm),
            ("constants.theta_r", self.theta_r),
        ];
        for (k, v) in items {
            if !(v.is_finite() && v > 0.0) {
                errs.push(format!("{k} = {v} must be positive"));
            }
        }
    }
}

/// Temperature law. `theta` is in kelvin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarModel {
    Constant { value: f64 },
    /// `value + slope (theta - theta_ref)`
    Affine { value: f64, slope: f64, theta_ref: f64 },
    /// `scale (theta / theta_ref)^exponent`
    PowerLaw { scale: f64, theta_ref: f64, exponent: f64 },
    /// `scale exp(activation (1/theta_ref - 1/theta))`
    Arrhenius { scale: f64, activation: f64, theta_ref: f64 },
    /// `scale exp(-activation / theta)`
    Exponential { scale: f64, activation: f64 },
}

impl ScalarModel {
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            ScalarModel::Constant { value } => value,
            ScalarModel::Affine { value, slope, theta_ref } => value + slope * (theta - theta_ref),
            ScalarModel::PowerLaw { scale, theta_ref, exponent } => scale * (theta / theta_ref).powf(exponent),
            ScalarModel::Arrhenius { scale, activation, theta_ref } => {
                scale * (activation * (1.0 / theta_ref - 1.0 / theta)).exp()
            }
            ScalarModel::Exponential { scale, activation } => scale * (-activation / theta).exp(),
        }
    }

    fn parameters(&self) -> Vec<(&'static str, f64)> {
        match *self {
            ScalarModel::Constant { value } => vec![("value", value)],
            ScalarModel::Affine { value, slope, theta_ref } => {
                vec![("value", value), ("slope", slope), ("theta_ref", theta_ref)]
            }
            ScalarModel::PowerLaw { scale, theta_ref, exponent } => {
                vec![("scale", scale), ("theta_ref", theta_ref), ("exponent", exponent)]
            }
            ScalarModel::Arrhenius { scale, activation, theta_ref } => {
                vec![("scale", scale), ("activation", activation), ("theta_ref", theta_ref)]
            }
            ScalarModel::Exponential { scale, activation } => vec![("scale", scale), ("activation", activation)],
        }
    }
}

/// A law together with its declared range `[lower, upper]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounded {
    pub model: ScalarModel,
    pub lower: f64,
    pub upper: f64,
}

impl Bounded {
    pub fn constant(value: f64) -> Self {
        Bounded {
            model: ScalarModel::Constant { value },
            lower: value,
            upper: value,
        }
    }

    pub fn new(model: ScalarModel, lower: f64, upper: f64) -> Self {
        Bounded { model, lower, upper }
    }
}

/// A cross-effect law bounded in absolute value by `bound`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Magnitude {
    pub model: ScalarModel,
    pub bound: f64,
}

impl Magnitude {
    pub fn zero(bound: f64) -> Self {
        Magnitude {
            model: ScalarModel::Constant { value: 0.0 },
            bound,
        }
    }

    pub fn constant(value: f64, bound: f64) -> Self {
        Magnitude {
            model: ScalarModel::Constant { value },
            bound,
        }
    }
}

/// Diffusivity of one species: channels and diffusion layers share `bulk`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diffusivity {
    pub bulk: Bounded,
    pub membrane: Bounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalConductivity {
    pub fluid: Bounded,
    pub porous: Bounded,
}

/// Klinkenberg gas permeability, capped at `k_l_max`.
///
/// The pressure unknown is a perturbation with zero mean, so the law is
/// evaluated at `reference_pressure + p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Permeability {
    pub k_l: f64,
    pub k_l_max: f64,
    /// Klinkenberg coefficient in the diffusion layers [Pa]; zero in the membrane.
    pub b_gdl: f64,
    pub reference_pressure: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterfaceLaw {
    /// Saturating Butler-Volmer law with Tafel slope `R theta_ref / F`.
    ButlerVolmer { j0: f64, j_lim: f64, theta_ref: f64 },
    /// `j = slope * eta`; used for verification.
    Linear { slope: f64 },
}

impl InterfaceLaw {
    /// Current density and its derivative with respect to the overpotential.
    pub fn eval(&self, eta: f64, consts: &PhysicalConstants) -> (f64, f64) {
        match *self {
            InterfaceLaw::ButlerVolmer { j0, j_lim, theta_ref } => {
                let b = consts.gas_constant * theta_ref / consts.faraday;
                butler_volmer_with_derivative(eta, j0, j_lim, b)
            }
            InterfaceLaw::Linear { slope } => (slope * eta, slope),
        }
    }

    /// Supremum of `|j|`; infinite for the linear law.
    pub fn saturation(&self) -> f64 {
        match *self {
            InterfaceLaw::ButlerVolmer { j_lim, .. } => j_lim,
            InterfaceLaw::Linear { .. } => f64::INFINITY,
        }
    }
}

/// `j(eta) = j_L s / (j_L + s)` with `s = 2 j0 sinh(eta / B)`, extended oddly.
pub fn butler_volmer(eta: f64, j0: f64, j_lim: f64, tafel: f64) -> f64 {
    butler_volmer_with_derivative(eta, j0, j_lim, tafel).0
}

pub fn butler_volmer_with_derivative(eta: f64, j0: f64, j_lim: f64, tafel: f64) -> (f64, f64) {
    let x = eta.abs() / tafel;
    let s = 2.0 * j0 * x.sinh();
    if !s.is_finite() {
        return (j_lim.copysign(eta), 0.0);
    }
    let t = j_lim / (j_lim + s);
    // Written as j_L * ratio so that rounding never lifts |j| above j_L.
    let j = j_lim * (s / (j_lim + s));
    let dj = t * t * 2.0 * j0 * x.cosh() / tafel;
    let dj = if dj.is_finite() { dj } else { 0.0 };
    (if eta < 0.0 { -j } else { j }, dj)
}

pub fn butler_volmer_for(eta: f64, electrode: Electrode, coeffs: &CoefficientSet, consts: &PhysicalConstants) -> f64 {
    coeffs.interface_law(electrode).eval(eta, consts).0
}

/// Identity on `[0, rho_1m]`, zero elsewhere.
pub fn truncate_psi(z: f64, rho_1m: f64) -> f64 {
    if (0.0..=rho_1m).contains(&z) {
        z
    } else {
        0.0
    }
}

/// `K_l (1 + b / p)`.
pub fn klinkenberg_permeability(p: f64, k_l: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Ok(k_l);
    }
    if !(p > 0.0) {
        return Err(Error::Degenerate(format!(
            "Klinkenberg law needs a positive pressure, got {p}"
        )));
    }
    Ok(k_l * (1.0 + b / p))
}

/// Ionic mobility `|z| F D / (R theta)`.
pub fn nernst_einstein_mobility(theta: f64, d1: f64, z: f64, consts: &PhysicalConstants) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::Degenerate(format!("temperature must be positive, got {theta}")));
    }
    Ok(z.abs() * consts.faraday * d1 / (consts.gas_constant * theta))
}

/// Every constitutive law with its declared bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSet {
    /// Temperatures are clamped into this range before any law is evaluated.
    pub theta_range: [f64; 2],
    pub mu: Bounded,
    /// Second viscosity; `lower` must not undercut `-mu_# / 2`.
    pub lambda: Bounded,
    pub permeability: Permeability,
    pub beta: Bounded,
    pub d1: Diffusivity,
    pub d2: Diffusivity,
    /// Membrane cross diffusion of species 1 driven by species 2.
    pub d12: Magnitude,
    /// Membrane cross diffusion of species 2 driven by species 1 (electro-osmotic drag).
    pub d21: Magnitude,
    /// Soret laws `S_i(theta)`; `bound` limits `|rho_i S_i|`.
    pub soret: [Magnitude; 2],
    /// Dufour laws `D'_i(theta)`; `bound` limits `(R/M_i) theta^2 |D'_i|`.
    pub dufour: [Magnitude; 2],
    pub k: ThermalConductivity,
    /// Electronic conductivity of the diffusion layers.
    pub sigma: Bounded,
    /// Ionic conductivity of the membrane.
    pub sigma_m: Bounded,
    pub peltier: Magnitude,
    pub seebeck: Magnitude,
    /// Derive the Peltier law from the Seebeck law through `Pi = theta alpha_S`.
    pub peltier_from_seebeck: bool,
    pub h_c: Bounded,
    pub anode: InterfaceLaw,
    pub cathode: InterfaceLaw,
    pub phi_ref: f64,
    /// Upper end of the band kept by the truncation `psi`.
    pub rho_1m: f64,
    /// Temperature scale of the membrane diffusivity taper.
    pub t_sharp: f64,
}

/// Pointwise values of the thermo-electro-chemical cross matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CrossCoefficients {
    pub d1: f64,
    pub d2: f64,
    pub d12: f64,
    pub d21: f64,
    pub soret1: f64,
    pub soret2: f64,
    /// `psi(rho_1) kappa / (R xi)`.
    pub psi_kappa: f64,
    /// `(R/M_j) xi^2 D'_j`, clamped to its bound.
    pub dufour1: f64,
    pub dufour2: f64,
    pub k: f64,
    /// `Pi sigma_m` in the membrane.
    pub peltier_sigma: f64,
    /// `kappa / M_1` in the membrane.
    pub kappa_m1: f64,
    /// `alpha_S sigma_m` in the membrane.
    pub seebeck_sigma: f64,
    /// `sigma` in the diffusion layers, `sigma_m` in the membrane.
    pub sigma: f64,
}

impl Default for CoefficientSet {
    fn default() -> Self {
        Self::desk()
    }
}

impl CoefficientSet {
    pub fn clamp_theta(&self, theta: f64) -> f64 {
        if theta.is_nan() {
            return self.theta_range[0];
        }
        theta.clamp(self.theta_range[0], self.theta_range[1])
    }

    fn at(&self, b: &Bounded, theta: f64) -> f64 {
        b.model.eval(self.clamp_theta(theta))
    }

    fn mag(&self, m: &Magnitude, theta: f64) -> f64 {
        m.model.eval(self.clamp_theta(theta))
    }

    pub fn mu(&self, theta: f64) -> f64 {
        self.at(&self.mu, theta)
    }

    pub fn lambda(&self, theta: f64) -> f64 {
        self.at(&self.lambda, theta)
    }

    pub fn beta(&self, theta: f64) -> f64 {
        self.at(&self.beta, theta)
    }

    pub fn h_c(&self, theta: f64) -> f64 {
        self.at(&self.h_c, theta)
    }

    pub fn sigma(&self, theta: f64) -> f64 {
        self.at(&self.sigma, theta)
    }

    pub fn sigma_m(&self, theta: f64) -> f64 {
        self.at(&self.sigma_m, theta)
    }

    pub fn k(&self, sub: Subdomain, theta: f64) -> f64 {
        if sub.is_fluid() {
            self.at(&self.k.fluid, theta)
        } else {
            self.at(&self.k.porous, theta)
        }
    }

    pub fn diffusivity(&self, species: usize, sub: Subdomain, theta: f64) -> f64 {
        let d = if species == 0 { &self.d1 } else { &self.d2 };
        if sub == Subdomain::Membrane {
            self.at(&d.membrane, theta)
        } else {
            self.at(&d.bulk, theta)
        }
    }

    pub fn seebeck(&self, theta: f64) -> f64 {
        self.mag(&self.seebeck, theta)
    }

    pub fn peltier(&self, theta: f64) -> f64 {
        if self.peltier_from_seebeck {
            let t = self.clamp_theta(theta);
            t * self.seebeck.model.eval(t)
        } else {
            self.mag(&self.peltier, theta)
        }
    }

    /// `|Pi(theta) - theta alpha_S(theta)|` at the clamped temperature.
    pub fn kelvin_residual(&self, theta: f64) -> f64 {
        let t = self.clamp_theta(theta);
        (self.peltier(t) - t * self.seebeck(t)).abs()
    }

    /// Gas permeability at perturbation pressure `p`, capped at `k_l_max`.
    pub fn permeability(&self, sub: Subdomain, p: f64) -> f64 {
        let pm = &self.permeability;
        if sub != Subdomain::Anode && sub != Subdomain::Cathode || pm.b_gdl == 0.0 {
            return pm.k_l;
        }
        let abs_p = pm.reference_pressure + p;
        if abs_p <= 0.0 {
            return pm.k_l_max;
        }
        (pm.k_l * (1.0 + pm.b_gdl / abs_p)).min(pm.k_l_max)
    }

    /// Lower and upper membrane diffusivity bounds of species 1.
    pub fn d1m_bounds(&self) -> (f64, f64) {
        (self.d1.membrane.lower, self.d1.membrane.upper)
    }

    /// Electrochemical diffusivity `kappa = F D_1` in the membrane, with
    /// `D_1` tapered to `D_{1,m}^# |xi| / T^#` near zero temperature. The
    /// second value reports whether the taper changed the result.
    pub fn kappa(&self, xi: f64, consts: &PhysicalConstants) -> (f64, bool) {
        let d = self.at(&self.d1.membrane, xi);
        let taper = self.d1.membrane.upper * xi.abs() / self.t_sharp;
        if taper < d {
            (consts.faraday * taper, true)
        } else {
            (consts.faraday * d, false)
        }
    }

    /// `kappa^# = F D_{1,m}^# / (R T^#)` as in the ellipticity conditions.
    pub fn kappa_sharp(&self, consts: &PhysicalConstants) -> f64 {
        consts.faraday * self.d1.membrane.upper / (consts.gas_constant * self.t_sharp)
    }

    /// The alternative `|kappa| <= F D_{1,m}^#` reading.
    pub fn kappa_sharp_alt(&self, consts: &PhysicalConstants) -> f64 {
        consts.faraday * self.d1.membrane.upper
    }

    pub fn interface_law(&self, e: Electrode) -> &InterfaceLaw {
        match e {
            Electrode::Anode => &self.anode,
            Electrode::Cathode => &self.cathode,
        }
    }

    /// Cross matrix at one point of subdomain `sub` for frozen `(rho1, rho2, xi)`.
    pub fn cross(&self, consts: &PhysicalConstants, sub: Subdomain, rho1: f64, rho2: f64, xi: f64) -> CrossCoefficients {
        let clamp = |v: f64, b: f64| v.clamp(-b, b);
        let mem = sub == Subdomain::Membrane;
        let mut c = CrossCoefficients {
            d1: self.diffusivity(0, sub, xi),
            d2: self.diffusivity(1, sub, xi),
            k: self.k(sub, xi),
            ..CrossCoefficients::default()
        };
        c.soret1 = clamp(rho1 * self.mag(&self.soret[0], xi), self.soret[0].bound);
        c.soret2 = clamp(rho2 * self.mag(&self.soret[1], xi), self.soret[1].bound);
        let r = consts.gas_constant;
        c.dufour1 = clamp(
            r / consts.molar_mass[0] * xi * xi * self.mag(&self.dufour[0], xi),
            self.dufour[0].bound,
        );
        c.dufour2 = clamp(
            r / consts.molar_mass[1] * xi * xi * self.mag(&self.dufour[1], xi),
            self.dufour[1].bound,
        );
        if mem {
            c.d12 = clamp(self.mag(&self.d12, xi), self.d12.bound);
            c.d21 = clamp(self.mag(&self.d21, xi), self.d21.bound);
            let (kappa, _) = self.kappa(xi, consts);
            let psi = truncate_psi(rho1, self.rho_1m);
            c.psi_kappa = if xi == 0.0 { 0.0 } else { psi * kappa / (r * xi) };
            let sm = self.sigma_m(xi);
            c.peltier_sigma = clamp(self.peltier(xi), self.peltier.bound) * sm;
            c.kappa_m1 = kappa / consts.molar_mass[0];
            c.seebeck_sigma = clamp(self.seebeck(xi), self.seebeck.bound) * sm;
            c.sigma = sm;
        } else if sub.is_gdl() {
            c.sigma = self.sigma(xi);
        }
        c
    }

    /// Hydrogen cell near 350 K.
    ///
    /// Viscosity, permeability, slip, thermal and electronic conductivity,
    /// Peltier and Seebeck magnitudes, channel diffusivities, heat transfer
    /// and exchange currents take typical literature values. The membrane
    /// transport bounds are chosen so that every ellipticity parameter is
    /// positive.
    pub fn desk() -> Self {
        let theta_range = [320.0, 390.0];
        let affine = |v320: f64, v390: f64| ScalarModel::Affine {
            value: v320,
            slope: (v390 - v320) / 70.0,
            theta_ref: 320.0,
        };
        CoefficientSet {
            theta_range,
            mu: Bounded::new(affine(4.8e-5, 4.2e-5), 4.2e-5, 4.8e-5),
            lambda: Bounded::new(ScalarModel::Constant { value: 0.0 }, 0.0, 1e-6),
            permeability: Permeability {
                k_l: 1.76e-11,
                k_l_max: 1.76e-11 * 1.2,
                b_gdl: 5_000.0,
                reference_pressure: 101_325.0,
            },
            beta: Bounded::new(ScalarModel::Constant { value: 1e5 }, 1.0, 1e5),
            d1: Diffusivity {
                bulk: Bounded::constant(9.15e-5),
                membrane: Bounded::new(ScalarModel::Constant { value: 1e-18 }, 1e-18, 1e-18),
            },
            d2: Diffusivity {
                bulk: Bounded::new(
                    ScalarModel::PowerLaw {
                        scale: 2.56e-5,
                        theta_ref: 307.0,
                        exponent: 2.3,
                    },
                    2.8e-5,
                    4.5e-5,
                ),
                membrane: Bounded::new(
                    ScalarModel::Exponential {
                        scale: 4.1e-7,
                        activation: 2602.0,
                    },
                    1.2e-10,
                    5.3e-10,
                ),
            },
            d12: Magnitude::constant(1e-17, 1e-17),
            d21: Magnitude::constant(1e-17, 1e-17),
            soret: [Magnitude::constant(1e-12, 1e-12), Magnitude::constant(1e-9, 1e-9)],
            dufour: [Magnitude::zero(1e-12), Magnitude::zero(1e-12)],
            k: ThermalConductivity {
                fluid: Bounded::new(affine(0.2, 0.2), 0.2, 0.2),
                porous: Bounded::new(affine(0.2, 0.5), 0.2, 0.5),
            },
            sigma: Bounded::new(affine(100.0, 120.0), 100.0, 120.0),
            sigma_m: Bounded::new(affine(1.0, 1.2), 1.0, 1.2),
            peltier: Magnitude::zero(0.3),
            seebeck: Magnitude::constant(0.3 / 390.0, 0.3 / 320.0),
            peltier_from_seebeck: true,
            h_c: Bounded::new(ScalarModel::Constant { value: 1200.0 }, 824.0, 2672.0),
            anode: InterfaceLaw::ButlerVolmer {
                j0: 1800.0,
                j_lim: 2e4,
                theta_ref: 357.15,
            },
            cathode: InterfaceLaw::ButlerVolmer {
                j0: 0.0132,
                j_lim: 2e4,
                theta_ref: 357.15,
            },
            phi_ref: 0.0,
            rho_1m: 1.0,
            t_sharp: 300.0,
        }
    }

    /// Structural checks on the declared bounds themselves.
    pub fn validate(&self, errs: &mut Vec<String>) {
        let [t0, t1] = self.theta_range;
        if !(t0.is_finite() && t1.is_finite() && t0 > 0.0 && t0 <= t1) {
            errs.push(format!("theta_range [{t0}, {t1}] must be positive and ordered"));
        }
        let pos_pair = |name: &str, b: &Bounded, errs: &mut Vec<String>, hyp: &str| {
            if !(b.lower > 0.0 && b.lower <= b.upper && b.upper.is_finite()) {
                errs.push(format!(
                    "{hyp}: {name} bounds [{}, {}] need 0 < lower <= upper",
                    b.lower, b.upper
                ));
            }
        };
        pos_pair("mu", &self.mu, errs, "(H1)");
        if !(self.lambda.lower <= self.lambda.upper && self.lambda.upper > 0.0) {
            errs.push(format!(
                "(H1): lambda bounds [{}, {}] need lower <= upper and upper > 0",
                self.lambda.lower, self.lambda.upper
            ));
        }
        if self.lambda.lower < -self.mu.lower / 2.0 {
            errs.push(format!(
                "(H1): lambda lower bound {} undercuts -mu_#/2 = {}",
                self.lambda.lower,
                -self.mu.lower / 2.0
            ));
        }
        let pm = &self.permeability;
        if !(pm.k_l > 0.0 && pm.k_l <= pm.k_l_max && pm.b_gdl >= 0.0 && pm.reference_pressure > 0.0) {
            errs.push(format!(
                "(H1): permeability needs 0 < k_l <= k_l_max, b_gdl >= 0 and a positive reference pressure (got {pm:?})"
            ));
        }
        pos_pair("beta", &self.beta, errs, "(H4)");
        pos_pair("d1.bulk", &self.d1.bulk, errs, "(H2)");
        pos_pair("d1.membrane", &self.d1.membrane, errs, "(H2)");
        pos_pair("d2.bulk", &self.d2.bulk, errs, "(H2)");
        pos_pair("d2.membrane", &self.d2.membrane, errs, "(H2)");
        pos_pair("k.fluid", &self.k.fluid, errs, "(H2)");
        pos_pair("k.porous", &self.k.porous, errs, "(H2)");
        pos_pair("sigma", &self.sigma, errs, "(H2)");
        pos_pair("sigma_m", &self.sigma_m, errs, "(H2)");
        pos_pair("h_c", &self.h_c, errs, "(H5)");
        for (name, m) in [
            ("d12", &self.d12),
            ("d21", &self.d21),
            ("soret[0]", &self.soret[0]),
            ("soret[1]", &self.soret[1]),
            ("dufour[0]", &self.dufour[0]),
            ("dufour[1]", &self.dufour[1]),
            ("peltier", &self.peltier),
            ("seebeck", &self.seebeck),
        ] {
            if !(m.bound > 0.0 && m.bound.is_finite()) {
                errs.push(format!("(H3): {name}.bound = {} must be positive", m.bound));
            }
        }
        for (name, law) in [("anode", &self.anode), ("cathode", &self.cathode)] {
            match *law {
                InterfaceLaw::ButlerVolmer { j0, j_lim, theta_ref } => {
                    if !(j0 > 0.0 && j_lim > 0.0 && theta_ref > 0.0) {
                        errs.push(format!("(H6): {name} kinetics need j0, j_lim, theta_ref > 0"));
                    }
                }
                InterfaceLaw::Linear { slope } => {
                    if !(slope >= 0.0) {
                        errs.push(format!("(H6): {name} linear slope must be nonnegative"));
                    }
                }
            }
        }
        if !(self.rho_1m > 0.0) {
            errs.push(format!("(H8): rho_1m = {} must be positive", self.rho_1m));
        }
        if !(self.t_sharp > 0.0) {
            errs.push(format!("(H2): t_sharp = {} must be positive", self.t_sharp));
        }
        for (name, m) in [
            ("mu", self.mu.model),
            ("lambda", self.lambda.model),
            ("beta", self.beta.model),
            ("h_c", self.h_c.model),
            ("sigma", self.sigma.model),
            ("sigma_m", self.sigma_m.model),
        ] {
            for (p, v) in m.parameters() {
                if !v.is_finite() {
                    errs.push(format!("{name}.model.{p} = {v} is not finite"));
                }
            }
        }
    }
}

/// Prescribed inlet, outlet and wall data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryData {
    /// Inlet speed [m/s]; the outlet profile equals the inlet one.
    pub u_in: f64,
    #[serde(default)]
    pub profile: InletProfile,
    pub rho_in: [f64; 2],
    pub rho_out: [f64; 2],
    pub theta_in: f64,
    pub theta_out: f64,
    /// External temperature on the walls [K].
    pub theta_e: f64,
    /// Cell voltage [V].
    pub e_cell: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InletProfile {
    /// Uniform speed, vanishing only at the wall nodes.
    #[default]
    Plug,
    /// Poiseuille profile across the channel.
    Parabolic,
}

impl BoundaryData {
    pub fn zero() -> Self {
        BoundaryData {
            u_in: 0.0,
            profile: InletProfile::Plug,
            rho_in: [0.0; 2],
            rho_out: [0.0; 2],
            theta_in: 0.0,
            theta_out: 0.0,
            theta_e: 0.0,
            e_cell: 0.0,
        }
    }

    /// Multiply every prescribed datum by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        BoundaryData {
            u_in: self.u_in * s,
            profile: self.profile,
            rho_in: self.rho_in.map(|v| v * s),
            rho_out: self.rho_out.map(|v| v * s),
            theta_in: self.theta_in * s,
            theta_out: self.theta_out * s,
            theta_e: self.theta_e * s,
            e_cell: self.e_cell * s,
        }
    }

    pub fn validate(&self, errs: &mut Vec<String>) {
        let vals = [
            ("boundary.u_in", self.u_in),
            ("boundary.rho_in[0]", self.rho_in[0]),
            ("boundary.rho_in[1]", self.rho_in[1]),
            ("boundary.rho_out[0]", self.rho_out[0]),
            ("boundary.rho_out[1]", self.rho_out[1]),
            ("boundary.theta_in", self.theta_in),
            ("boundary.theta_out", self.theta_out),
            ("boundary.theta_e", self.theta_e),
            ("boundary.e_cell", self.e_cell),
        ];
        for (k, v) in vals {
            if !v.is_finite() {
                errs.push(format!("{k} = {v} is not finite"));
            }
        }
    }
}

/// Argument box used by the randomized hypothesis checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingBox {
    pub theta: [f64; 2],
    pub rho: [f64; 2],
    /// Perturbation pressure range [Pa].
    pub pressure: [f64; 2],
}

impl Default for SamplingBox {
    fn default() -> Self {
        SamplingBox {
            theta: [320.0, 390.0],
            rho: [0.0, 1.0],
            pressure: [-5.0e4, 5.0e4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisEntry {
    pub id: String,
    pub check: String,
    pub passed: bool,
    /// Smallest distance to a violated bound over all samples, relative to
    /// the bound magnitude; negative when violated.
    pub worst_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub entries: Vec<HypothesisEntry>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &HypothesisEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn entry(&self, id: &str, check: &str) -> Option<&HypothesisEntry> {
        self.entries.iter().find(|e| e.id == id && e.check == check)
    }
}

struct Tracker {
    entries: Vec<HypothesisEntry>,
}

impl Tracker {
    fn open(&mut self, id: &str, check: &str) -> usize {
        self.entries.push(HypothesisEntry {
            id: id.to_string(),
            check: check.to_string(),
            passed: true,
            worst_margin: f64::INFINITY,
        });
        self.entries.len() - 1
    }

    fn within(&mut self, slot: usize, v: f64, lo: f64, hi: f64) {
        let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
        let m = ((v - lo).min(hi - v)) / scale;
        let m = if m.is_nan() { f64::NEG_INFINITY } else { m };
        let e = &mut self.entries[slot];
        e.worst_margin = e.worst_margin.min(m);
        // Declared bounds are compared with a roundoff allowance.
        if m < -1e-12 {
            e.passed = false;
        }
    }

    fn flag(&mut self, slot: usize, ok: bool, margin: f64) {
        let e = &mut self.entries[slot];
        e.worst_margin = e.worst_margin.min(margin);
        if !ok {
            e.passed = false;
        }
    }
}

/// Randomized verification of the structural hypotheses.
///
/// Each law is sampled uniformly over `bx` and compared with its declared
/// bounds. Positivity of the ellipticity parameters is left to the ledger.
pub fn check_hypotheses(
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    bdata: &BoundaryData,
    samples: usize,
    bx: &SamplingBox,
    seed: u64,
) -> HypothesisReport {
    let samples = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker { entries: Vec::new() };

    let mu = t.open("H1", "mu within [mu_#, mu^#]");
    let mu_order = t.open("H1", "mu_# <= mu^#");
    let lam = t.open("H1", "lambda within [-mu/2, lambda^#]");
    let kg = t.open("H1", "K_g within [K_l, K_l^#]");
    let d_bulk = [t.open("H2", "D_1 bulk bounds"), t.open("H2", "D_2 bulk bounds")];
    let d_mem = [t.open("H2", "D_1 membrane bounds"), t.open("H2", "D_2 membrane bounds")];
    let taper = t.open("H2", "D_1 membrane taper below T^#");
    let kk = [t.open("H2", "k fluid bounds"), t.open("H2", "k porous bounds")];
    let sg = t.open("H2", "sigma bounds");
    let sgm = t.open("H2", "sigma_m bounds");
    let pel = t.open("H3", "|Pi| <= Pi^#");
    let seeb = t.open("H3", "|alpha_S| <= alpha^#");
    let sor = [t.open("H3", "|rho S_1| <= S_1^#"), t.open("H3", "|rho S_2| <= S_2^#")];
    let duf = [
        t.open("H3", "(R/M_1) theta^2 |D'_1| <= D'_1^#"),
        t.open("H3", "(R/M_2) theta^2 |D'_2| <= D'_2^#"),
    ];
    let cross = [t.open("H3", "|D_12| <= D_12^#"), t.open("H3", "|D_21| <= D_21^#")];
    let kelvin = t.open("H3", "Kelvin relation Pi = theta alpha_S");
    let beta = t.open("H4", "beta within [beta_#, beta^#]");
    let hc = t.open("H5", "h_c within [h_#, h^#]");
    let bv = [t.open("H6", "anode kinetics odd, increasing"), t.open("H6", "cathode kinetics odd, increasing")];
    let h7 = t.open("H7", "velocity lifting data finite");
    let h8 = t.open("H8", "0 <= rho_1,0 <= rho_1m in membrane");
    let h9 = t.open("H9", "temperature lifting data finite");

    t.flag(mu_order, coeffs.mu.lower <= coeffs.mu.upper, {
        let s = coeffs.mu.upper.abs().max(coeffs.mu.lower.abs()).max(f64::MIN_POSITIVE);
        (coeffs.mu.upper - coeffs.mu.lower) / s
    });

    let (tlo, thi) = (bx.theta[0], bx.theta[1]);
    let uni = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| if hi > lo { rng.random_range(lo..=hi) } else { lo };
    for _ in 0..samples {
        let th = uni(&mut rng, tlo, thi);
        let rho = [uni(&mut rng, bx.rho[0], bx.rho[1]), uni(&mut rng, bx.rho[0], bx.rho[1])];
        let p = uni(&mut rng, bx.pressure[0], bx.pressure[1]);

        let m = coeffs.mu(th);
        t.within(mu, m, coeffs.mu.lower, coeffs.mu.upper);
        t.within(lam, coeffs.lambda(th), (-m / 2.0).max(coeffs.lambda.lower), coeffs.lambda.upper);
        for sub in [Subdomain::Anode, Subdomain::Membrane, Subdomain::Cathode] {
            t.within(kg, coeffs.permeability(sub, p), coeffs.permeability.k_l, coeffs.permeability.k_l_max);
        }
        for s in 0..2 {
            let d = if s == 0 { &coeffs.d1 } else { &coeffs.d2 };
            t.within(d_bulk[s], coeffs.diffusivity(s, Subdomain::Anode, th), d.bulk.lower, d.bulk.upper);
            t.within(d_mem[s], coeffs.diffusivity(s, Subdomain::Membrane, th), d.membrane.lower, d.membrane.upper);
        }
        if th.abs() <= coeffs.t_sharp {
            let cap = coeffs.d1.membrane.upper * th.abs() / coeffs.t_sharp;
            t.within(taper, coeffs.diffusivity(0, Subdomain::Membrane, th), coeffs.d1.membrane.lower, cap);
        }
        t.within(kk[0], coeffs.k(Subdomain::Fuel, th), coeffs.k.fluid.lower, coeffs.k.fluid.upper);
        t.within(kk[1], coeffs.k(Subdomain::Anode, th), coeffs.k.porous.lower, coeffs.k.porous.upper);
        t.within(sg, coeffs.sigma(th), coeffs.sigma.lower, coeffs.sigma.upper);
        t.within(sgm, coeffs.sigma_m(th), coeffs.sigma_m.lower, coeffs.sigma_m.upper);
        let b = coeffs.peltier.bound;
        t.within(pel, coeffs.peltier(th), -b, b);
        let b = coeffs.seebeck.bound;
        t.within(seeb, coeffs.seebeck(th), -b, b);
        for s in 0..2 {
            let b = coeffs.soret[s].bound;
            t.within(sor[s], rho[s] * coeffs.mag(&coeffs.soret[s], th), -b, b);
            let b = coeffs.dufour[s].bound;
            let tc = coeffs.clamp_theta(th);
            let v = consts.gas_constant / consts.molar_mass[s] * tc * tc * coeffs.mag(&coeffs.dufour[s], th);
            t.within(duf[s], v, -b, b);
        }
        t.within(cross[0], coeffs.mag(&coeffs.d12, th), -coeffs.d12.bound, coeffs.d12.bound);
        t.within(cross[1], coeffs.mag(&coeffs.d21, th), -coeffs.d21.bound, coeffs.d21.bound);
        if coeffs.peltier_from_seebeck {
            let r = coeffs.kelvin_residual(th);
            let scale = coeffs.peltier.bound.max(f64::MIN_POSITIVE);
            t.flag(kelvin, r <= 1e-12 * scale, -r / scale);
        }
        t.within(beta, coeffs.beta(th), coeffs.beta.lower, coeffs.beta.upper);
        t.within(hc, coeffs.h_c(th), coeffs.h_c.lower, coeffs.h_c.upper);
    }
    if !coeffs.peltier_from_seebeck {
        // Two independent laws: the relation is reported, not required.
        let r = (0..samples.min(1000))
            .map(|i| {
                let th = tlo + (thi - tlo) * i as f64 / samples.min(1000).max(1) as f64;
                coeffs.kelvin_residual(th)
            })
            .fold(0.0, f64::max);
        let scale = coeffs.peltier.bound.max(f64::MIN_POSITIVE);
        t.flag(kelvin, true, -r / scale);
    }
    // Kinetics on a symmetric grid.
    for (slot, law) in bv.iter().zip([&coeffs.anode, &coeffs.cathode]) {
        let (scale, sat) = match *law {
            InterfaceLaw::ButlerVolmer { theta_ref, j_lim, .. } => {
                (consts.gas_constant * theta_ref / consts.faraday, j_lim)
            }
            InterfaceLaw::Linear { .. } => (1.0, f64::INFINITY),
        };
        let mut ok = true;
        let mut prev = f64::NEG_INFINITY;
        let mut margin = f64::INFINITY;
        for i in 0..=2000 {
            let eta = scale * (-50.0 + 0.05 * i as f64);
            let (j, _) = law.eval(eta, consts);
            let (jm, _) = law.eval(-eta, consts);
            ok &= j == -jm && j >= prev && j.abs() <= sat;
            if sat.is_finite() {
                margin = margin.min((sat - j.abs()) / sat);
            }
            prev = j;
        }
        if !margin.is_finite() {
            margin = 0.0;
        }
        t.flag(*slot, ok, margin);
    }
    let finite = bdata.u_in.is_finite();
    t.flag(h7, finite, if finite { 0.0 } else { f64::NEG_INFINITY });
    // The lifting interpolates monotonically between inlet and outlet values.
    let (lo, hi) = (
        bdata.rho_in[0].min(bdata.rho_out[0]),
        bdata.rho_in[0].max(bdata.rho_out[0]),
    );
    t.within(h8, lo, 0.0, coeffs.rho_1m);
    t.within(h8, hi, 0.0, coeffs.rho_1m);
    let finite = bdata.theta_in.is_finite() && bdata.theta_out.is_finite() && bdata.theta_e.is_finite();
    t.flag(h9, finite, if finite { 0.0 } else { f64::NEG_INFINITY });

    for e in &mut t.entries {
        if e.worst_margin == f64::INFINITY {
            // Nothing sampled (e.g. the taper range is empty).
            e.worst_margin = 0.0;
        }
    }
    HypothesisReport {
        samples,
        entries: t.entries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn bv_reference_values() {
        assert_eq!(butler_volmer(0.0, 1800.0, 1e4, 0.03), 0.0);
        let eta = (1.0 + 2f64.sqrt()).ln();
        assert_relative_eq!(butler_volmer(eta, 1.0, 2.0, 1.0), 1.0, epsilon = 1e-14);
        let j = butler_volmer(10.0 * 0.0307, 1800.0, 50.0, 0.0307);
        assert!((j - 50.0).abs() < 0.01 * 50.0);
        assert_eq!(butler_volmer(1e6, 1.0, 3.0, 1e-3), 3.0);
        assert_eq!(butler_volmer(-1e6, 1.0, 3.0, 1e-3), -3.0);
    }

    #[test]
    fn bv_derivative_matches_differences() {
        let (j0, jl, b) = (1.3, 4.0, 0.7);
        for k in -40..=40 {
            let eta = 0.1 * k as f64 + 0.013;
            let (_, d) = butler_volmer_with_derivative(eta, j0, jl, b);
            let h = 1e-6;
            let fd = (butler_volmer(eta + h, j0, jl, b) - butler_volmer(eta - h, j0, jl, b)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6 * (1.0 + d.abs()), "eta {eta}: {d} vs {fd}");
        }
    }

    #[test]
    fn psi_band() {
        assert_eq!(truncate_psi(0.5, 1.0), 0.5);
        assert_eq!(truncate_psi(-1.0, 1.0), 0.0);
        assert_eq!(truncate_psi(1.0, 1.0), 1.0);
        assert_eq!(truncate_psi(1.0 + 1e-12, 1.0), 0.0);
    }

    #[test]
    fn klinkenberg() {
        assert_eq!(klinkenberg_permeability(-3.0, 2.0, 0.0).unwrap(), 2.0);
        assert_eq!(klinkenberg_permeability(5.0, 2.0, 5.0).unwrap(), 4.0);
        assert_eq!(klinkenberg_permeability(1e5, 1.76e-11, 0.0).unwrap(), 1.76e-11);
        assert!(klinkenberg_permeability(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn mobility() {
        let c = PhysicalConstants::default();
        assert_eq!(nernst_einstein_mobility(300.0, 1.0, 0.0, &c).unwrap(), 0.0);
        let d = c.gas_constant * 300.0 / c.faraday;
        assert_relative_eq!(nernst_einstein_mobility(300.0, d, -1.0, &c).unwrap(), 1.0, epsilon = 1e-14);
        let u = nernst_einstein_mobility(357.15, 1e-9, 1.0, &c).unwrap();
        assert_relative_eq!(u, 9.6485e4 * 1e-9 / (8.314 * 357.15), epsilon = 1e-14);
        assert!((u - 3.25e-8).abs() < 0.005e-8);
        assert!(nernst_einstein_mobility(0.0, 1.0, 1.0, &c).is_err());
    }

    #[test]
    fn ideal_gas_density_differs_from_stated_value() {
        let c = PhysicalConstants::default();
        let rho = c.ideal_gas_air_density();
        assert!((rho - 0.9886).abs() < 1e-3);
        assert!((c.rho_air - rho).abs() > 5e-3);
    }

    #[test]
    fn desk_dataset_passes_structural_checks() {
        let c = CoefficientSet::desk();
        let mut errs = Vec::new();
        c.validate(&mut errs);
        assert!(errs.is_empty(), "{errs:?}");
        let mut b = BoundaryData::zero();
        b.rho_in = [0.1, 0.0];
        let r = check_hypotheses(&c, &PhysicalConstants::default(), &b, 2000, &SamplingBox::default(), 1);
        let failed: Vec<_> = r.failed().collect();
        assert!(failed.is_empty(), "{failed:?}");
        let h1 = r.entry("H1", "mu within [mu_#, mu^#]").unwrap();
        assert!(h1.passed && h1.worst_margin >= -1e-12);
    }

    #[test]
    fn inverted_viscosity_bounds_fail() {
        let mut c = CoefficientSet::desk();
        c.mu = Bounded::new(ScalarModel::Constant { value: 4.5e-5 }, 4.8e-5, 4.2e-5);
        let r = check_hypotheses(&c, &PhysicalConstants::default(), &BoundaryData::zero(), 100, &SamplingBox::default(), 1);
        let e = r.entry("H1", "mu_# <= mu^#").unwrap();
        assert!(!e.passed);
        assert!(e.worst_margin < 0.0);
        let e = r.entry("H1", "mu within [mu_#, mu^#]").unwrap();
        assert!(!e.passed);
    }

    #[test]
    fn kelvin_residual_vanishes_when_derived() {
        let c = CoefficientSet::desk();
        for th in [300.0, 320.0, 350.0, 400.0] {
            assert_eq!(c.kelvin_residual(th), 0.0);
        }
    }

    #[test]
    fn kappa_taper_flags() {
        let c = CoefficientSet::desk();
        let k = PhysicalConstants::default();
        let (kv, tapered) = c.kappa(350.0, &k);
        assert!(!tapered);
        assert_relative_eq!(kv, k.faraday * c.diffusivity(0, Subdomain::Membrane, 350.0));
        let (kv, tapered) = c.kappa(1e-20, &k);
        assert!(tapered);
        assert!(kv < k.faraday * c.d1.membrane.lower);
    }
}
