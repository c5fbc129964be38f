//! Explicit constants of the existence theory: the ellipticity parameters,
//! the data constants `C_0` and `B_0`, the two polynomial roots, the radii of
//! the invariant set and the smallness verdict.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coefficients::{BoundaryData, CoefficientSet, PhysicalConstants};
use crate::discretization::{Discretization, Liftings};
use crate::error::{Error, Result};
use crate::fem::norms::{self, Field};
use crate::flow::lifting_constant;
use crate::geometry::{FacetTag, GeometrySpec, Subdomain};

/// `epsilon_1 .. epsilon_9`, stored zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpsilonVector(pub [f64; 9]);

impl EpsilonVector {
    pub fn uniform(v: f64) -> Self {
        EpsilonVector([v; 9])
    }

    /// `eps[i]` with the one-based index used in the formulas.
    #[inline]
    pub fn e(&self, i: usize) -> f64 {
        self.0[i - 1]
    }

    pub fn is_admissible(&self) -> bool {
        let e = |i| self.e(i);
        self.0.iter().all(|v| v.is_finite() && *v > 0.0)
            && e(1) + e(2) + e(3) < 1.0
            && e(4) + e(5) < 1.0
            && e(6) + e(7) < 1.0
            && e(8) + e(9) < 2.0
    }

    pub fn check(&self) -> Result<()> {
        if self.is_admissible() {
            Ok(())
        } else {
            Err(Error::EpsilonBox(format!("{:?}", self.0)))
        }
    }
}

impl Default for EpsilonVector {
    fn default() -> Self {
        EpsilonVector([0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.6, 0.1, 0.1])
    }
}

/// Which value of `kappa^#` enters the parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSharp {
    /// `F D_{1,m}^# / (R T^#)`.
    #[default]
    Scaled,
    /// `F D_{1,m}^#`.
    Faraday,
}

/// Index set of `min_i (a_{i,#} - a_{i,m})` in the second polynomial.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapIndices {
    #[default]
    Species,
    SpeciesAndHeat,
}

/// Every scalar bound the parameters are built from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub mu_lower: f64,
    pub mu_upper: f64,
    pub lambda_upper: f64,
    pub beta_lower: f64,
    pub beta_upper: f64,
    pub k_l: f64,
    /// Lower bounds of `D_i` in channels and diffusion layers.
    pub d_sharp: [f64; 2],
    /// Lower bounds of `D_i` in the membrane.
    pub d_m: [f64; 2],
    /// Upper bounds of `D_i` over the whole cell.
    pub d_upper: [f64; 2],
    pub d1m_upper: f64,
    pub d12: f64,
    pub d21: f64,
    pub soret: [f64; 2],
    pub dufour: [f64; 2],
    pub k_lower: f64,
    pub k_upper: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
    pub sigma_m_lower: f64,
    pub sigma_m_upper: f64,
    pub peltier: f64,
    pub seebeck: f64,
    pub h_lower: f64,
    pub h_upper: f64,
    pub kappa_sharp: f64,
    pub rho_1m: f64,
    /// Largest limiting current of the two electrodes.
    pub j_lim: f64,
    pub faraday: f64,
    pub molar_mass_1: f64,
    pub r_m: f64,
}

impl Bounds {
    pub fn from_coefficients(c: &CoefficientSet, k: &PhysicalConstants, kappa: KappaSharp) -> Self {
        Bounds {
            mu_lower: c.mu.lower,
            mu_upper: c.mu.upper,
            lambda_upper: c.lambda.upper.max(0.0),
            beta_lower: c.beta.lower,
            beta_upper: c.beta.upper,
            k_l: c.permeability.k_l,
            d_sharp: [c.d1.bulk.lower, c.d2.bulk.lower],
            d_m: [c.d1.membrane.lower, c.d2.membrane.lower],
            d_upper: [
                c.d1.bulk.upper.max(c.d1.membrane.upper),
                c.d2.bulk.upper.max(c.d2.membrane.upper),
            ],
            d1m_upper: c.d1.membrane.upper,
            d12: c.d12.bound,
            d21: c.d21.bound,
            soret: [c.soret[0].bound, c.soret[1].bound],
            dufour: [c.dufour[0].bound, c.dufour[1].bound],
            k_lower: c.k.fluid.lower.min(c.k.porous.lower),
            k_upper: c.k.fluid.upper.max(c.k.porous.upper),
            sigma_lower: c.sigma.lower,
            sigma_upper: c.sigma.upper,
            sigma_m_lower: c.sigma_m.lower,
            sigma_m_upper: c.sigma_m.upper,
            peltier: c.peltier.bound,
            seebeck: c.seebeck.bound,
            h_lower: c.h_c.lower,
            h_upper: c.h_c.upper,
            kappa_sharp: match kappa {
                KappaSharp::Scaled => c.kappa_sharp(k),
                KappaSharp::Faraday => c.kappa_sharp_alt(k),
            },
            rho_1m: c.rho_1m,
            j_lim: c.anode.saturation().max(c.cathode.saturation()),
            faraday: k.faraday,
            molar_mass_1: k.molar_mass[0],
            r_m: k.r_m(),
        }
    }

    /// `(F / M_1)^2 (D_{1,m}^#)^2 / sigma_{m,#}`, the electro-migration weight.
    fn migration(&self) -> f64 {
        (self.faraday / self.molar_mass_1).powi(2) * self.d1m_upper.powi(2) / self.sigma_m_lower
    }
}

/// The seven ellipticity parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AParams {
    pub a1_sharp: f64,
    pub a1_m: f64,
    pub a2_sharp: f64,
    pub a2_m: f64,
    pub a3_sharp: f64,
    pub a3_m: f64,
    pub a4_m: f64,
}

impl AParams {
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.a1_sharp,
            self.a1_m,
            self.a2_sharp,
            self.a2_m,
            self.a3_sharp,
            self.a3_m,
            self.a4_m,
        ]
    }

    pub fn all_positive(&self) -> bool {
        self.as_array().iter().all(|v| *v > 0.0)
    }

    /// `a_# = min {a_{i,#}, a_{i,m} : i = 1, 2, 3}`, optionally with `a_{4,m}`.
    pub fn a_sharp(&self, include_a4m: bool) -> f64 {
        let six = self.as_array()[..6].iter().copied().fold(f64::INFINITY, f64::min);
        if include_a4m {
            six.min(self.a4_m)
        } else {
            six
        }
    }

    pub fn min_sharp(&self) -> f64 {
        self.a1_sharp.min(self.a2_sharp).min(self.a3_sharp)
    }

    pub fn gap(&self, idx: GapIndices) -> f64 {
        let g = (self.a1_sharp - self.a1_m).min(self.a2_sharp - self.a2_m);
        match idx {
            GapIndices::Species => g,
            GapIndices::SpeciesAndHeat => g.min(self.a3_sharp - self.a3_m),
        }
    }

    pub fn a3(&self) -> f64 {
        self.a3_sharp.min(self.a3_m)
    }
}

pub fn compute_a_params(b: &Bounds, eps: &EpsilonVector) -> Result<AParams> {
    eps.check()?;
    let e = |i| eps.e(i);
    let duf = |i: usize| b.dufour[i].powi(2) / (e(6) * b.k_lower);
    Ok(AParams {
        a1_sharp: (1.0 - e(1) - e(2) - e(3)) / 2.0 * b.d_sharp[0] - duf(0),
        a1_m: (1.0 - e(1) - e(3)) / 2.0 * b.d_m[0]
            - duf(0)
            - b.d21.powi(2) / (e(4) * b.d_m[1])
            - b.migration() / e(8),
        a2_sharp: (1.0 - e(4) - e(5)) / 2.0 * b.d_sharp[1] - duf(1),
        a2_m: (1.0 - e(4)) / 2.0 * b.d_m[1] - duf(1) - b.d12.powi(2) / (e(1) * b.d_m[0]),
        a3_sharp: (1.0 - e(6) - e(7)) / 2.0 * b.k_lower
            - b.soret[0].powi(2) / (e(2) * b.d_sharp[0])
            - b.soret[1].powi(2) / (e(5) * b.d_sharp[1]),
        a3_m: (1.0 - e(7)) / 2.0 * b.k_lower
            - b.soret[0].powi(2) / (e(2) * b.d_m[0])
            - b.soret[1].powi(2) / (e(5) * b.d_m[1])
            - b.seebeck.powi(2) * b.sigma_upper / e(9),
        a4_m: b.sigma_m_lower
            * (1.0 - (e(8) + e(9)) / 2.0 - b.peltier.powi(2) * b.sigma_m_upper / (2.0 * e(7) * b.k_lower))
            - (b.rho_1m * b.kappa_sharp).powi(2) / (2.0 * e(3) * b.d_m[0]),
    })
}

/// Positive root of `c - b t - a t^2` with `a, b, c >= 0`, in the
/// cancellation-free form `2c / (b + sqrt(b^2 + 4ac))`.
pub fn positive_root(a: f64, b: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    2.0 * c / (b + (b * b + 4.0 * a * c).sqrt())
}

/// The same root by bisection on `[0, c / b]`.
pub fn positive_root_bisection(a: f64, b: f64, c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let f = |t: f64| c - b * t - a * t * t;
    let mut lo = 0.0;
    let mut hi = if b > 0.0 { c / b } else { (c / a).sqrt() };
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `root_1` of `4 a_min - 2 (1 + 2 sqrt 2) sqrt(L) t - L t^2` and `root_2` of
/// `gap - (1/2 + sqrt 2) sqrt(L) t - (L/4) t^2`.
pub fn compute_roots(length: f64, a_min_sharp: f64, gap: f64) -> Result<(f64, f64)> {
    if !(length > 0.0) || !a_min_sharp.is_finite() || !gap.is_finite() {
        return Err(Error::Root(format!("L = {length}, a_min = {a_min_sharp}, gap = {gap}")));
    }
    let s = length.sqrt();
    let r1 = positive_root(length, 2.0 * (1.0 + 2.0 * 2f64.sqrt()) * s, 4.0 * a_min_sharp);
    let r2 = positive_root(length / 4.0, (0.5 + 2f64.sqrt()) * s, gap);
    let b1 = positive_root_bisection(length, 2.0 * (1.0 + 2.0 * 2f64.sqrt()) * s, 4.0 * a_min_sharp);
    let b2 = positive_root_bisection(length / 4.0, (0.5 + 2f64.sqrt()) * s, gap);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    if !close(r1, b1) || !close(r2, b2) {
        return Err(Error::Root(format!(
            "closed form and bisection disagree: ({r1}, {b1}), ({r2}, {b2})"
        )));
    }
    Ok((r1, r2))
}

/// `R_3 = sigma_# M_r j_L |Gamma_CL| / (sigma^# (sigma^# - M_r sqrt((sigma^#)^2 - sigma_#^2)))`.
pub fn compute_r3(sigma_lower: f64, sigma_upper: f64, m_r: f64, j_lim: f64, gamma_cl: f64) -> Result<f64> {
    let root = (sigma_upper * sigma_upper - sigma_lower * sigma_lower).max(0.0).sqrt();
    let den = sigma_upper - m_r * root;
    if !(den > 0.0) || !(m_r > 0.0) {
        let bound = if root > 0.0 { sigma_upper / root } else { f64::INFINITY };
        return Err(Error::InfeasibleRegularity { m_r, bound });
    }
    Ok(sigma_lower * m_r * j_lim * gamma_cl / (sigma_upper * den))
}

/// Norms of the liftings and of the wall temperature that enter `C_0` and
/// `B_0`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataNorms {
    pub c0: f64,
    pub grad_rho0_sq: [f64; 2],
    pub grad_rho0_m_sq: [f64; 2],
    pub rho0_sup_fluid: [f64; 2],
    pub grad_theta0_sq: f64,
    pub grad_theta0_m_sq: f64,
    /// `||theta_e||^2` over the walls.
    pub theta_e_wall_sq: f64,
    pub length: f64,
}

impl DataNorms {
    pub fn compute(disc: &Discretization, coeffs: &CoefficientSet, lift: &Liftings, data: &BoundaryData) -> Self {
        let mesh = &disc.mesh;
        let all = |_: Subdomain| true;
        let mem = |s: Subdomain| s == Subdomain::Membrane;
        let fl = |s: Subdomain| s.is_fluid();
                let wall = mesh.measure_where(|t: FacetTag| t.is_wall());
        DataNorms {
            c0: lifting_constant(disc, coeffs, lift),
            grad_rho0_sq: [0, 1].map(|i| norms::grad_sq(mesh, Field::new(&disc.state, &lift.rho0[i]), all)),
            grad_rho0_m_sq: [0, 1].map(|i| norms::grad_sq(mesh, Field::new(&disc.state, &lift.rho0[i]), mem)),
            rho0_sup_fluid: [0, 1].map(|i| norms::sup_abs(mesh, Field::new(&disc.state, &lift.rho0[i]), fl)),
            grad_theta0_sq: norms::grad_sq(mesh, Field::new(&disc.state, &lift.theta0), all),
            grad_theta0_m_sq: norms::grad_sq(mesh, Field::new(&disc.state, &lift.theta0), mem),
            theta_e_wall_sq: data.theta_e * data.theta_e * wall,
            length: mesh.spec.length,
        }
    }
}

/// `B_0` for given bounds, epsilons and data norms.
///
/// The heat-conduction term of the lifting uses the upper conductivity
/// bound `k^#`.
pub fn compute_b0(b: &Bounds, eps: &EpsilonVector, n: &DataNorms) -> f64 {
    let e = |i| eps.e(i);
    let mut s = 0.0;
    for i in 0..2 {
        s += (b.d_upper[i] / 2.0 + 2.0 / e(6) * b.dufour[i].powi(2) / b.k_lower) * n.grad_rho0_sq[i];
    }
    // i != j: (D_12)^2 / D_{1,m} |grad rho_{2,0}|^2 + (D_21)^2 / D_{2,m} |grad rho_{1,0}|^2
    s += 1.0 / e(1)
        * (b.d12.powi(2) / b.d_m[0] * n.grad_rho0_m_sq[1] + b.d21.powi(2) / b.d_m[1] * n.grad_rho0_m_sq[0]);
    s += b.migration() / e(8) * n.grad_rho0_m_sq[0];
    s += n.length * (n.rho0_sup_fluid[0].powi(2) + n.rho0_sup_fluid[1].powi(2));
    s += b.k_upper / 2.0 * n.grad_theta0_sq;
    s += 1.0 / e(2) * (b.soret[0].powi(2) + b.soret[1].powi(2)) / b.k_lower * n.grad_theta0_sq;
    s += 1.0 / e(9) * b.sigma_m_upper * b.seebeck.powi(2) * n.grad_theta0_m_sq;
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LedgerOptions {
    pub kappa: KappaSharp,
    pub include_a4m: bool,
    pub gap: GapIndices,
    /// Regularity constant of the potential problem.
    pub m_r: f64,
}

impl Default for LedgerOptions {
    fn default() -> Self {
        LedgerOptions {
            kappa: KappaSharp::Scaled,
            include_a4m: false,
            gap: GapIndices::Species,
            m_r: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerReport {
    pub epsilon: EpsilonVector,
    pub a1_sharp: f64,
    pub a1_m: f64,
    pub a2_sharp: f64,
    pub a2_m: f64,
    pub a3_sharp: f64,
    pub a3_m: f64,
    pub a4_m: f64,
    pub a_sharp: f64,
    pub a_params_positive: bool,
    pub kappa_sharp: f64,
    pub c_k: f64,
    pub c0: f64,
    pub b0: f64,
    pub theta_e_wall_sq: f64,
    /// `a = 2 sqrt(C_K L) R_M / mu_#`.
    pub a: f64,
    /// `b = root_1 - sqrt(2 C_K / mu_#) C_0`.
    pub b: f64,
    pub root1: f64,
    pub root2: f64,
    pub roots_ordered: bool,
    pub r1: f64,
    pub r2: f64,
    pub r3: Option<f64>,
    pub m_r: f64,
    /// `root_2` minus the right-hand side of the smallness condition.
    pub margin: f64,
    pub verdict: bool,
    /// Margin when the Joule bound `(sigma^#)^2 R_3^2 / k_#` is kept in the
    /// data constant.
    pub margin_with_joule: Option<f64>,
    /// `a_{i,m} <= a_{i,#}` for `i = 1, 2` and `L^2 < 2`.
    pub corollary_applies: bool,
}

/// Evaluate every constant and the smallness verdict.
pub fn build_report(
    bounds: &Bounds,
    eps: &EpsilonVector,
    data: &DataNorms,
    c_k: f64,
    opts: &LedgerOptions,
) -> Result<LedgerReport> {
    let ap = compute_a_params(bounds, eps)?;
    let l = data.length;
    let (root1, root2) = compute_roots(l, ap.min_sharp(), ap.gap(opts.gap))?;
    let b0 = compute_b0(bounds, eps, data);
    let a_sharp = ap.a_sharp(opts.include_a4m);
    let mu = bounds.mu_lower;
    let a = 2.0 * (c_k * l).sqrt() * bounds.r_m / mu;
    let lift = (2.0 * c_k / mu).sqrt() * data.c0;
    let b = root1 - lift;
    let data_const = bounds.h_upper * data.theta_e_wall_sq + 2.0 * b0;
    let rhs = lift + (c_k * l).sqrt() * bounds.r_m / mu / a_sharp * data_const;
    let margin = if a_sharp > 0.0 { root2 - rhs } else { f64::NEG_INFINITY };
    let r2_sq = (root2 - lift) / a;
    let r2 = r2_sq.max(0.0).sqrt();
    let r1 = (bounds.mu_upper / bounds.k_l).sqrt() * ((2.0 * l).sqrt() * bounds.r_m / mu.sqrt() * r2_sq.max(0.0) + data.c0);
    let r3 = compute_r3(bounds.sigma_lower, bounds.sigma_upper, opts.m_r, bounds.j_lim, 2.0 * l).ok();
    let margin_with_joule = r3.map(|r3| {
        let c = bounds.sigma_upper.powi(2) * r3 * r3 / bounds.k_lower + bounds.h_upper / 2.0 * data.theta_e_wall_sq + b0;
        if a_sharp > 0.0 {
            root2 - lift - a / a_sharp * c
        } else {
            f64::NEG_INFINITY
        }
    });
    Ok(LedgerReport {
        epsilon: *eps,
        a1_sharp: ap.a1_sharp,
        a1_m: ap.a1_m,
        a2_sharp: ap.a2_sharp,
        a2_m: ap.a2_m,
        a3_sharp: ap.a3_sharp,
        a3_m: ap.a3_m,
        a4_m: ap.a4_m,
        a_sharp,
        a_params_positive: ap.all_positive(),
        kappa_sharp: bounds.kappa_sharp,
        c_k,
        c0: data.c0,
        b0,
        theta_e_wall_sq: data.theta_e_wall_sq,
        a,
        b,
        root1,
        root2,
        roots_ordered: root2 < root1,
        r1,
        r2,
        r3,
        m_r: opts.m_r,
        margin,
        verdict: margin > 0.0 && ap.all_positive(),
        margin_with_joule,
        corollary_applies: ap.a1_m <= ap.a1_sharp && ap.a2_m <= ap.a2_sharp && l * l < 2.0,
    })
}

impl LedgerReport {
    pub fn a_params(&self) -> AParams {
        AParams {
            a1_sharp: self.a1_sharp,
            a1_m: self.a1_m,
            a2_sharp: self.a2_sharp,
            a2_m: self.a2_m,
            a3_sharp: self.a3_sharp,
            a3_m: self.a3_m,
            a4_m: self.a4_m,
        }
    }
}

/// Objective of the epsilon search.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonObjective {
    /// Maximise the smallest of the seven parameters.
    #[default]
    MaxMinA,
    /// Maximise the smallness margin relative to `root_2`.
    MaxMargin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Smallest admissible epsilon.
    pub floor: f64,
    /// Impose `eps_1 = eps_4` and `eps_2 = eps_5`.
    pub tied: bool,
    pub starts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            floor: 1e-6,
            tied: false,
            starts: 4,
            max_evals: 20_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub epsilon: EpsilonVector,
    pub value: f64,
    /// Best value after each accepted move.
    pub history: Vec<f64>,
}

fn expand(z: &[f64], tied: bool) -> EpsilonVector {
    let mut e = [0.0; 9];
    if tied {
        // z = (e1, e2, e3, e6, e7, e8, e9)
        e[0] = z[0];
        e[1] = z[1];
        e[2] = z[2];
        e[3] = z[0];
        e[4] = z[1];
        e[5..9].copy_from_slice(&z[3..7]);
    } else {
        e.copy_from_slice(z);
    }
    EpsilonVector(e.map(f64::exp))
}

/// Compass search in log coordinates with random extra directions and
/// several starts. Only improving moves are accepted, so the objective
/// never decreases along `history`.
pub fn optimize_epsilons(objective: &dyn Fn(&EpsilonVector) -> f64, opts: &SearchOptions) -> SearchResult {
    let dim = if opts.tied { 7 } else { 9 };
    let floor = opts.floor.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let eval = |z: &[f64]| -> f64 {
        if z.iter().any(|v| *v < floor - 1e-12) {
            return f64::NEG_INFINITY;
        }
        let e = expand(z, opts.tied);
        if !e.is_admissible() {
            return f64::NEG_INFINITY;
        }
        let v = objective(&e);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut best_z = vec![0.1f64.ln(); dim];
    let mut best = eval(&best_z);
    let mut history = vec![best];
    let mut evals = 1;
    let per_start = opts.max_evals / opts.starts.max(1);
    for start in 0..opts.starts.max(1) {
        let mut z: Vec<f64> = if start == 0 {
            vec![0.1f64.ln(); dim]
        } else {
            (0..dim).map(|_| rng.random_range(floor.max(-12.0)..(0.3f64).ln())).collect()
        };
        let mut fz = eval(&z);
        let mut step = 1.0;
        let mut used = 0;
        while step > 1e-9 && used < per_start {
            let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(2 * dim + 8);
            for i in 0..dim {
                for s in [1.0, -1.0] {
                    let mut d = vec![0.0; dim];
                    d[i] = s;
                    dirs.push(d);
                }
            }
            for _ in 0..8 {
                let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
                dirs.push(d.into_iter().map(|v| v / n).collect());
            }
            let mut improved = false;
            for d in &dirs {
                let cand: Vec<f64> = z
                    .iter()
                    .zip(d)
                    .map(|(a, b)| (a + step * b).max(floor))
                    .collect();
                let fc = eval(&cand);
                used += 1;
                evals += 1;
                if fc > fz {
                    z = cand;
                    fz = fc;
                    improved = true;
                    break;
                }
            }
            if !improved {
                step *= 0.5;
            }
            if fz > best {
                best = fz;
                best_z = z.clone();
                history.push(best);
            }
        }
    }
    let _ = evals;
    SearchResult {
        epsilon: expand(&best_z, opts.tied),
        value: best,
        history,
    }
}

/// Objective closure for a dataset.
pub fn epsilon_objective<'a>(
    kind: EpsilonObjective,
    bounds: &'a Bounds,
    data: &'a DataNorms,
    c_k: f64,
    opts: &'a LedgerOptions,
) -> impl Fn(&EpsilonVector) -> f64 + 'a {
    move |e: &EpsilonVector| match kind {
        EpsilonObjective::MaxMinA => match compute_a_params(bounds, e) {
            Ok(a) => a.as_array().iter().copied().fold(f64::INFINITY, f64::min),
            Err(_) => f64::NEG_INFINITY,
        },
        EpsilonObjective::MaxMargin => match build_report(bounds, e, data, c_k, opts) {
            Ok(r) if r.root2 > 0.0 => r.margin / r.root2,
            _ => f64::NEG_INFINITY,
        },
    }
}

/// The desk geometry's interface length check: `sqrt(beta^#) u_in |Gamma|^{1/2}`.
pub fn slip_product(beta_upper: f64, u_in: f64, gamma_measure: f64) -> f64 {
    beta_upper.sqrt() * u_in * gamma_measure.sqrt()
}

/// `|Gamma| = 2 L` for two channel interfaces of length `L`.
pub fn interface_measure(spec: &GeometrySpec) -> f64 {
    2.0 * spec.length
}

/// `x` rounded to `digits` significant figures.
pub fn round_significant(x: f64, digits: i32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let p = digits - 1 - x.abs().log10().floor() as i32;
    let m = 10f64.powi(p);
    (x * m).round() / m
}

/// The order-of-magnitude arithmetic quoted for the hydrogen cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SanityChecks {
    /// `sqrt(k_# / sigma^#)`.
    pub seebeck_limit: f64,
    pub seebeck_upper: f64,
    /// `alpha^# < sqrt(k_# / sigma^#)`.
    pub seebeck_ok: bool,
    /// Interface measures at the ends of the range [m].
    pub gamma_range: [f64; 2],
    /// `sqrt(beta^#) u_in |Gamma|^{1/2}` at both ends.
    pub slip_range: [f64; 2],
    /// The slip range to two significant figures.
    pub slip_range_rounded: [f64; 2],
}

pub fn sanity_checks(
    sigma_upper: f64,
    k_lower: f64,
    seebeck_upper: f64,
    beta_upper: f64,
    u_in: f64,
    gamma_range: [f64; 2],
) -> SanityChecks {
    let seebeck_limit = (k_lower / sigma_upper).sqrt();
    let slip_range = gamma_range.map(|g| slip_product(beta_upper, u_in, g));
    SanityChecks {
        seebeck_limit,
        seebeck_upper,
        seebeck_ok: seebeck_upper < seebeck_limit,
        gamma_range,
        slip_range,
        slip_range_rounded: slip_range.map(|v| round_significant(v, 2)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_bounds() -> Bounds {
        Bounds::from_coefficients(&CoefficientSet::desk(), &PhysicalConstants::default(), KappaSharp::Scaled)
    }

    fn zero_cross(mut b: Bounds) -> Bounds {
        b.d12 = 0.0;
        b.d21 = 0.0;
        b.soret = [0.0; 2];
        b.dufour = [0.0; 2];
        b.peltier = 0.0;
        b.seebeck = 0.0;
        b.kappa_sharp = 0.0;
        b.d1m_upper = 0.0;
        b
    }

    #[test]
    fn significant_rounding() {
        assert_eq!(round_significant(1.8974, 2), 1.9);
        assert_eq!(round_significant(6.3246, 2), 6.3);
        assert_eq!(round_significant(-0.040825, 3), -0.0408);
        assert_eq!(round_significant(0.0, 2), 0.0);
    }

    #[test]
    fn hydrogen_cell_arithmetic() {
        // sqrt(L) from 0.03 to 0.1 with one interface of length L.
        let s = sanity_checks(120.0, 0.2, 0.3 / 320.0, 1e5, 0.2, [0.03f64.powi(2), 0.01]);
        assert!((s.seebeck_limit - (0.2f64 / 120.0).sqrt()).abs() < 1e-15);
        assert!(s.seebeck_ok);
        assert!((s.slip_range[0] - 0.2 * 0.03 * 1e5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.slip_range_rounded, [1.9, 6.3]);
    }

    #[test]
    fn reductions_with_zero_cross_terms() {
        let b = zero_cross(desk_bounds());
        let a = compute_a_params(&b, &EpsilonVector::uniform(0.1)).unwrap();
        assert!((a.a1_sharp - 0.35 * b.d_sharp[0]).abs() <= 1e-15 * b.d_sharp[0]);
        assert!((a.a3_sharp - 0.4 * b.k_lower).abs() < 1e-15);
    }

    #[test]
    fn desk_a3m_positive_and_seebeck_is_small() {
        let b = desk_bounds();
        let a = compute_a_params(&b, &EpsilonVector::default()).unwrap();
        assert!(a.a3_m > 0.0);
        assert!(b.seebeck < (b.k_lower / b.sigma_upper).sqrt());
        // Arithmetic oracle for a_{3,m} at the default epsilons.
        let e = EpsilonVector::default();
        let oracle = (1.0 - e.e(7)) / 2.0 * 0.2
            - 1e-24 / (e.e(2) * 1e-18)
            - 1e-18 / (e.e(5) * 1.2e-10)
            - (0.3f64 / 320.0).powi(2) * 120.0 / e.e(9);
        assert!((a.a3_m - oracle).abs() < 1e-12);
        assert!(a.all_positive(), "{a:?}");
    }

    #[test]
    fn epsilon_box_is_enforced() {
        let b = desk_bounds();
        let mut e = EpsilonVector::uniform(0.1);
        e.0[0] = 0.9;
        assert!(matches!(compute_a_params(&b, &e), Err(Error::EpsilonBox(_))));
    }

    #[test]
    fn root_oracles() {
        let (r1, _) = compute_roots(1.0, 1.0, 1.0).unwrap();
        let c = 1.0 + 2.0 * 2f64.sqrt();
        let naive = -c + (c * c + 4.0).sqrt();
        assert!((r1 - naive).abs() < 1e-14);
        assert!((r1 - 0.490931).abs() < 1e-6);
        let (r1, r2) = compute_roots(0.3, 1e-30, 1e-30).unwrap();
        assert!(r1 < 1e-29 && r2 < 1e-29);
        let mut prev = f64::INFINITY;
        for k in 1..50 {
            let (r, _) = compute_roots(0.01 * k as f64, 0.3, 0.1).unwrap();
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn b0_reduces_for_constant_liftings() {
        let b = desk_bounds();
        let n = DataNorms {
            rho0_sup_fluid: [0.3, 0.4],
            length: 0.01,
            ..DataNorms::default()
        };
        let b0 = compute_b0(&b, &EpsilonVector::default(), &n);
        assert!((b0 - 0.01 * (0.09 + 0.16)).abs() < 1e-15);
    }

    #[test]
    fn trivial_data_verdict_is_root2() {
        let b = desk_bounds();
        let n = DataNorms {
            length: 0.01,
            ..DataNorms::default()
        };
        let r = build_report(&b, &EpsilonVector::default(), &n, 1.5, &LedgerOptions::default()).unwrap();
        assert!(r.verdict);
        assert_eq!(r.margin, r.root2);
        let mut hb = b;
        hb.h_upper *= 1e6;
        let n2 = DataNorms {
            theta_e_wall_sq: 1.0,
            ..n
        };
        let r = build_report(&hb, &EpsilonVector::default(), &n2, 1.5, &LedgerOptions::default()).unwrap();
        assert!(!r.verdict && r.margin < 0.0);
    }

    #[test]
    fn r3_cases() {
        let r = compute_r3(100.0, 120.0, 1.0, 1.0, 0.02).unwrap();
        let oracle = 100.0 * 0.02 / (120.0 * (120.0 - (120.0f64 * 120.0 - 100.0 * 100.0).sqrt()));
        assert!((r - oracle).abs() < 1e-15);
        let eq = compute_r3(120.0, 120.0, 2.0, 3.0, 0.5).unwrap();
        assert!((eq - 2.0 * 3.0 * 0.5 / 120.0).abs() < 1e-15);
        assert!(matches!(
            compute_r3(100.0, 120.0, 2.0, 1.0, 1.0),
            Err(Error::InfeasibleRegularity { .. })
        ));
        let near = compute_r3(100.0, 120.0, 120.0 / 4400f64.sqrt() * (1.0 - 1e-9), 1.0, 1.0).unwrap();
        assert!(near > 1e6);
    }

    #[test]
    fn search_hits_floor_without_cross_terms() {
        let b = zero_cross(desk_bounds());
        // Normalised parameters summed, so every epsilon only costs.
        let obj = |e: &EpsilonVector| {
            compute_a_params(&b, e)
                .map(|a| {
                    a.a1_sharp / b.d_sharp[0]
                        + a.a1_m / b.d_m[0]
                        + a.a2_sharp / b.d_sharp[1]
                        + a.a2_m / b.d_m[1]
                        + (a.a3_sharp + a.a3_m) / b.k_lower
                        + a.a4_m / b.sigma_m_lower
                })
                .unwrap_or(f64::NEG_INFINITY)
        };
        let r = optimize_epsilons(&obj, &SearchOptions::default());
        for i in 1..=9 {
            assert!(r.epsilon.e(i) < 1.1e-6, "{:?}", r.epsilon);
        }
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn search_finds_symmetric_balance_point() {
        // max min((1 - e1 - e2)/2 - 0.01/e1, (1 - e1 - e2)/2 - 0.01/e2) is
        // attained at e1 = e2 = 0.1 with value 0.3.
        let obj = |e: &EpsilonVector| {
            let base = (1.0 - e.e(1) - e.e(2)) / 2.0;
            (base - 0.01 / e.e(1)).min(base - 0.01 / e.e(2))
        };
        let r = optimize_epsilons(&obj, &SearchOptions::default());
        assert!((r.epsilon.e(1) - 0.1).abs() < 1e-3 && (r.epsilon.e(2) - 0.1).abs() < 1e-3, "{:?}", r.epsilon);
        assert!((r.value - 0.3).abs() < 1e-6);
    }

    #[test]
    fn tied_mode_keeps_pairs_equal() {
        let b = desk_bounds();
        let n = DataNorms {
            length: 0.01,
            ..DataNorms::default()
        };
        let lo = LedgerOptions::default();
        let obj = epsilon_objective(EpsilonObjective::MaxMinA, &b, &n, 1.5, &lo);
        let r = optimize_epsilons(
            &obj,
            &SearchOptions {
                tied: true,
                max_evals: 4000,
                ..SearchOptions::default()
            },
        );
        assert_eq!(r.epsilon.e(1), r.epsilon.e(4));
        assert_eq!(r.epsilon.e(2), r.epsilon.e(5));
        assert!(r.value >= obj(&EpsilonVector::uniform(0.1)));
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn closed_form_root_solves_and_matches_bisection(
            a in 1e-6f64..1e3,
            b in 1e-6f64..1e3,
            c in 1e-6f64..1e3,
        ) {
            let r = positive_root(a, b, c);
            prop_assert!(r > 0.0);
            let scale = c + b * r + a * r * r;
            prop_assert!((c - b * r - a * r * r).abs() <= 1e-13 * scale);
            let s = positive_root_bisection(a, b, c);
            prop_assert!((r - s).abs() <= 1e-12 * r);
        }

        #[test]
        fn root_1_grows_with_the_ellipticity(l in 1e-3f64..1.0, a in 1e-3f64..10.0, f in 1.0f64..4.0) {
            let (r1, _) = compute_roots(l, a, a).unwrap();
            let (r1b, _) = compute_roots(l, f * a, a).unwrap();
            prop_assert!(r1b >= r1);
        }

        #[test]
        fn margin_shrinks_with_the_korn_constant(
            c0 in 0.0f64..1e-6,
            t in 0.0f64..1e-6,
            ck in 1.0f64..10.0,
            f in 1.0f64..3.0,
        ) {
            let b = Bounds::from_coefficients(&CoefficientSet::desk(), &PhysicalConstants::default(), KappaSharp::Scaled);
            let n = DataNorms {
                c0,
                theta_e_wall_sq: t,
                length: 0.01,
                ..DataNorms::default()
            };
            let eps = EpsilonVector::default();
            let o = LedgerOptions::default();
            let m1 = build_report(&b, &eps, &n, ck, &o).unwrap().margin;
            let m2 = build_report(&b, &eps, &n, f * ck, &o).unwrap().margin;
            prop_assert!(m2 <= m1);
        }

        #[test]
        fn significant_rounding_is_close(x in 1e-6f64..1e6, d in 1i32..6) {
            let r = round_significant(x, d);
            prop_assert!((r - x).abs() <= 0.5 * 10f64.powi(1 - d) * x * 1.000001);
        }
    }
}
