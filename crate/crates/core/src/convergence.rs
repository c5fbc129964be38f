//! Manufactured-solution order study for the decoupled linear solves.
//!
//! The load of each solve is the bilinear form of the production assembler
//! applied to smooth exact fields, integrated with their analytic values and
//! gradients. The discrete solution is then the Galerkin projection of the
//! exact one, and its `L^2` error should fall like `h^2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    Bounded, CoefficientSet, Diffusivity, InterfaceLaw, Magnitude, Permeability, PhysicalConstants, ThermalConductivity,
};
use crate::discretization::{Discretization, Liftings};
use crate::error::{Error, Result};
use crate::fem::element::ElementTable;
use crate::fem::solve::LinearOptions;
use crate::fem::space::{Space, NONE};
use crate::flow::{assemble_flow, FlowInputs};
use crate::geometry::{FacetTag, GeometrySpec, Resolution, Subdomain};
use crate::tec::{assemble_tec, cross_entry, newton_boundary_iteration, NewtonOptions, QpField, TecInputs};
use crate::coefficients::BoundaryData;

const ORDER: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmsField {
    Velocity,
    Pressure,
    Species1,
    Species2,
    Temperature,
    Potential,
}

impl MmsField {
    pub const ALL: [MmsField; 6] = [
        MmsField::Velocity,
        MmsField::Pressure,
        MmsField::Species1,
        MmsField::Species2,
        MmsField::Temperature,
        MmsField::Potential,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldStudy {
    pub field: MmsField,
    /// Relative `L^2` error per level.
    pub errors: Vec<f64>,
    /// `log2(e_k / e_{k+1})`.
    pub orders: Vec<f64>,
}

impl FieldStudy {
    pub fn final_order(&self) -> f64 {
        self.orders.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub resolutions: Vec<Resolution>,
    pub fields: Vec<FieldStudy>,
}

impl ConvergenceStudy {
    /// Smallest order between the two finest levels.
    pub fn min_final_order(&self) -> f64 {
        self.fields.iter().map(FieldStudy::final_order).fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, order: f64) -> bool {
        self.min_final_order() >= order
    }
}

/// Unit-scale cell used by the study.
pub fn verification_geometry() -> GeometrySpec {
    GeometrySpec::new(0.4, 0.2, 0.1, 0.25, 1.0).expect("valid lengths")
}

/// Constant coefficients with every cross effect switched off and linear
/// catalyst laws, so the four transport equations decouple.
pub fn verification_coefficients() -> CoefficientSet {
    let c = Bounded::constant;
    CoefficientSet {
        mu: c(1.0),
        lambda: c(0.5),
        permeability: Permeability {
            k_l: 0.8,
            k_l_max: 0.8,
            b_gdl: 0.0,
            reference_pressure: 1e5,
        },
        beta: c(2.0),
        d1: Diffusivity {
            bulk: c(1.0),
            membrane: c(0.5),
        },
        d2: Diffusivity {
            bulk: c(1.5),
            membrane: c(0.3),
        },
        d12: Magnitude::zero(1e-3),
        d21: Magnitude::zero(1e-3),
        soret: [Magnitude::zero(1e-3); 2],
        dufour: [Magnitude::zero(1e-3); 2],
        k: ThermalConductivity {
            fluid: c(1.0),
            porous: c(2.0),
        },
        sigma: c(3.0),
        sigma_m: c(1.0),
        peltier: Magnitude::zero(1e-3),
        seebeck: Magnitude::zero(1e-3),
        peltier_from_seebeck: false,
        h_c: c(0.5),
        anode: InterfaceLaw::Linear { slope: 4.0 },
        cathode: InterfaceLaw::Linear { slope: 2.0 },
        phi_ref: 0.0,
        ..CoefficientSet::desk()
    }
}

/// Value and gradient.
type Vg = [f64; 3];

fn prod(f: [f64; 2], g: [f64; 2]) -> Vg {
    [f[0] * g[0], f[1] * g[0], f[0] * g[1]]
}

/// The exact fields, all vanishing wherever the discrete spaces clamp them.
struct Exact {
    spec: GeometrySpec,
}

impl Exact {
    fn sin_y(&self, y: f64) -> [f64; 2] {
        let k = PI / self.spec.length;
        [(k * y).sin(), k * (k * y).cos()]
    }

    fn cos_y(&self, y: f64) -> [f64; 2] {
        let k = PI / self.spec.length;
        [(k * y).cos(), -k * (k * y).sin()]
    }

    /// Local coordinate in `[0, 1]` across `sub` and its `x`-derivative.
    fn local(&self, sub: Subdomain, x: f64) -> (f64, f64) {
        let (a, b) = self.spec.x_range(sub);
        ((x - a) / (b - a), 1.0 / (b - a))
    }

    /// `[u_x, u_y]` on the channels; `u_x` vanishes on the outer wall.
    fn velocity(&self, sub: Subdomain, x: f64, y: f64) -> [Vg; 2] {
        let (s, ds) = self.local(sub, x);
        let (d, dd) = if sub == Subdomain::Fuel { (s, ds) } else { (1.0 - s, -ds) };
        let sy = self.sin_y(y);
        [
            prod([d * (1.0 + d), dd * (1.0 + 2.0 * d)], sy),
            prod([0.5 * (1.0 + d * d), dd * d], sy),
        ]
    }

    fn pressure(&self, x: f64, y: f64) -> Vg {
        let (a, _) = self.spec.x_range(Subdomain::Anode);
        let (_, b) = self.spec.x_range(Subdomain::Cathode);
        let (s, ds) = ((x - a) / (b - a), 1.0 / (b - a));
        let c = self.cos_y(y);
        let t = prod([(PI * s).cos(), -PI * ds * (PI * s).sin()], c);
        [t[0] + s, t[1] + ds, t[2]]
    }

    /// `Upsilon_1, Upsilon_2, Theta` on the whole cell.
    fn state(&self, i: usize, x: f64, y: f64) -> Vg {
        let w = self.spec.width();
        let (s, ds) = (x / w, 1.0 / w);
        let f = match i {
            0 => [1.0 + s, ds],
            1 => [(PI * s).cos(), -PI * ds * (PI * s).sin()],
            _ => [1.0 + s * s, 2.0 * s * ds],
        };
        prod(f, self.sin_y(y))
    }

    /// `phi_cc` layer by layer; zero on the fuel side of the anode.
    fn potential(&self, sub: Subdomain, x: f64, y: f64) -> Vg {
        let (s, ds) = self.local(sub, x);
        let f = match sub {
            Subdomain::Anode => [s, ds],
            Subdomain::Membrane => [0.3 + 0.2 * s, 0.2 * ds],
            _ => [0.5 + s * (1.0 - s), (1.0 - 2.0 * s) * ds],
        };
        prod(f, self.sin_y(y))
    }
}

fn dot(a: &Vg, g: &[f64; 2]) -> f64 {
    a[1] * g[0] + a[2] * g[1]
}

/// Squared `L^2` error and squared exact norm of a discrete field on the
/// cells `space` supports.
fn l2_error(disc: &Discretization, space: &Space, v: &[f64], exact: impl Fn(Subdomain, f64, f64) -> f64) -> (f64, f64) {
    let table = ElementTable::new(ORDER).expect("supported order");
    let (mut e, mut n) = (0.0, 0.0);
    for (c, cell) in disc.mesh.cells.iter().enumerate() {
        let Some(l) = space.local_values(c, v) else { continue };
        let cv = table.eval(cell);
        for q in 0..cv.nq {
            let u = exact(cell.subdomain, cv.xy[q][0], cv.xy[q][1]);
            e += cv.jw[q] * (cv.value(q, &l) - u).powi(2);
            n += cv.jw[q] * u * u;
        }
    }
    (e, n)
}

/// Relative `L^2` errors of velocity and pressure.
pub fn flow_mms(disc: &Discretization, coeffs: &CoefficientSet, consts: &PhysicalConstants) -> Result<[f64; 2]> {
    let mesh = &disc.mesh;
    let ex = Exact { spec: mesh.spec };
    let (sx, sy, sp) = (&disc.ux, &disc.uy, &disc.pressure);
    let zero_p = vec![0.0; sp.n_dofs()];
    let zero_s = vec![0.0; disc.state.n_dofs()];
    let lift = Liftings::zero(disc);
    let inputs = FlowInputs {
        pi: &zero_p,
        rho: &zero_s,
        xi: &zero_s,
    };
    let sys = assemble_flow(disc, coeffs, consts, inputs, &lift)?;
    let map = &sys.map;
    let mut load = vec![0.0; map.n];
    let mut add = |b: usize, d: usize, v: f64| {
        let g = map.global(b, d);
        if g != NONE {
            load[g] += v;
        }
    };
    let table = ElementTable::new(ORDER)?;
    let (mu, lam, beta) = (coeffs.mu(0.0), coeffs.lambda(0.0), coeffs.beta(0.0));
    for (c, cell) in mesh.cells.iter().enumerate() {
        let cv = table.eval(cell);
        if cell.subdomain.is_fluid() {
            let (dx, dy) = (sx.cell_dofs(c).unwrap(), sy.cell_dofs(c).unwrap());
            for q in 0..cv.nq {
                let [u, v] = ex.velocity(cell.subdomain, cv.xy[q][0], cv.xy[q][1]);
                let div = u[1] + v[2];
                let shear = 0.5 * (u[2] + v[1]);
                for b in 0..4 {
                    let g = cv.grad[q][b];
                    // Du : D(phi e_x) and Du : D(phi e_y).
                    let fx = mu * (u[1] * g[0] + shear * g[1]) + lam * div * g[0];
                    let fy = mu * (v[2] * g[1] + shear * g[0]) + lam * div * g[1];
                    add(0, dx[b], cv.jw[q] * fx);
                    add(1, dy[b], cv.jw[q] * fy);
                }
            }
        } else {
            let dp = sp.cell_dofs(c).unwrap();
            let k = coeffs.permeability(cell.subdomain, 0.0) / mu;
            for q in 0..cv.nq {
                let p = ex.pressure(cv.xy[q][0], cv.xy[q][1]);
                for b in 0..4 {
                    add(2, dp[b], cv.jw[q] * k * dot(&p, &cv.grad[q][b]));
                }
            }
        }
    }
    for f in mesh.facets.iter().filter(|f| matches!(f.tag, FacetTag::FluidPorous(_))) {
        let n = f.tag.interface_normal().unwrap();
        let fc = sx.facet_cell(f, None).unwrap();
        let pc = sp.facet_cell(f, None).unwrap();
        let sub = mesh.cells[fc].subdomain;
        let (vx, vy) = (sx.facet_dofs(mesh, f, fc).unwrap(), sy.facet_dofs(mesh, f, fc).unwrap());
        let pd = sp.facet_dofs(mesh, f, pc).unwrap();
        let ev = table.eval_edge(f);
        for q in 0..ev.nq {
            let [x, y] = ev.xy[q];
            let [u, v] = ex.velocity(sub, x, y);
            let p = ex.pressure(x, y)[0];
            for b in 0..2 {
                let m = ev.jw[q] * ev.psi[q][b];
                add(0, vx[b], n * p * m);
                add(1, vy[b], beta * v[0] * m);
                add(2, pd[b], -n * u[0] * m);
            }
        }
    }
    let sol = sys.solve(disc, &lift, Some(&load), &LinearOptions::default())?;
    let p: Vec<f64> = sol.p.iter().map(|v| v + sol.p_mean).collect();
    let (ex0, nx) = l2_error(disc, sx, &sol.u_hom[0], |s, x, y| ex.velocity(s, x, y)[0][0]);
    let (ey0, ny) = l2_error(disc, sy, &sol.u_hom[1], |s, x, y| ex.velocity(s, x, y)[1][0]);
    let (ep, np) = l2_error(disc, sp, &p, |_, x, y| ex.pressure(x, y)[0]);
    Ok([((ex0 + ey0) / (nx + ny)).sqrt(), (ep / np).sqrt()])
}

/// Relative `L^2` errors of `Upsilon_1, Upsilon_2, Theta, phi_cc`.
pub fn tec_mms(disc: &Discretization, coeffs: &CoefficientSet, consts: &PhysicalConstants) -> Result<[f64; 4]> {
    let mesh = &disc.mesh;
    let ex = Exact { spec: mesh.spec };
    let (st, sp) = (&disc.state, &disc.potential);
    let zs = vec![0.0; st.n_dofs()];
    let (zx, zy) = (vec![0.0; disc.ux.n_dofs()], vec![0.0; disc.uy.n_dofs()]);
    let joule = QpField::zero(mesh);
    let lift = Liftings::zero(disc);
    let data = BoundaryData::zero();
    // Frozen temperature zero: the electro-osmotic drag vanishes with it.
    let inputs = TecInputs {
        w: [&zx, &zy],
        rho: [&zs, &zs],
        xi: &zs,
        phi_data: &joule,
    };
    let mut sys = assemble_tec(disc, coeffs, consts, inputs, &lift, &data)?;
    let map = sys.map.clone();
    let table = ElementTable::new(ORDER)?;
    let exact_field = |f: usize, sub: Subdomain, x: f64, y: f64| -> Vg {
        if f < 3 {
            ex.state(f, x, y)
        } else {
            ex.potential(sub, x, y)
        }
    };
    let space_dofs = |f: usize, c: usize| if f < 3 { st.cell_dofs(c) } else { sp.cell_dofs(c) };
    for (c, cell) in mesh.cells.iter().enumerate() {
        let cv = table.eval(cell);
        let nf = if sp.cell_dofs(c).is_some() { 4 } else { 3 };
        let cc = coeffs.cross(consts, cell.subdomain, 0.0, 0.0, 0.0);
        for q in 0..cv.nq {
            let [x, y] = cv.xy[q];
            let u: Vec<Vg> = (0..nf).map(|g| exact_field(g, cell.subdomain, x, y)).collect();
            for f in 0..nf {
                let d = space_dofs(f, c).unwrap();
                for b in 0..4 {
                    let r = map.global(f, d[b]);
                    if r == NONE {
                        continue;
                    }
                    let flux: f64 = (0..nf).map(|g| cross_entry(&cc, f, g) * dot(&u[g], &cv.grad[q][b])).sum();
                    sys.rhs[r] += cv.jw[q] * flux;
                }
            }
        }
    }
    let h = coeffs.h_c(0.0);
    for f in mesh.facets.iter().filter(|f| f.tag.is_wall()) {
        let c = st.facet_cell(f, None).unwrap();
        let d = st.facet_dofs(mesh, f, c).unwrap();
        let ev = table.eval_edge(f);
        for q in 0..ev.nq {
            let t = ex.state(2, ev.xy[q][0], ev.xy[q][1])[0];
            for b in 0..2 {
                let r = map.global(2, d[b]);
                if r != NONE {
                    sys.rhs[r] += ev.jw[q] * h * t * ev.psi[q][b];
                }
            }
        }
    }
    for f in mesh.facets.iter() {
        let FacetTag::Catalyst(e) = f.tag else { continue };
        let (c0, c1) = (f.cells[0].unwrap(), f.cells[1].unwrap());
        let (ce, cm) = if mesh.cells[c0].subdomain == Subdomain::Membrane {
            (c1, c0)
        } else {
            (c0, c1)
        };
        let se = mesh.cells[ce].subdomain;
        let (de, dm) = (sp.facet_dofs(mesh, f, ce).unwrap(), sp.facet_dofs(mesh, f, cm).unwrap());
        let ev = table.eval_edge(f);
        for q in 0..ev.nq {
            let [x, y] = ev.xy[q];
            let eta = ex.potential(se, x, y)[0] - ex.potential(Subdomain::Membrane, x, y)[0] - coeffs.phi_ref;
            let j = coeffs.interface_law(e).eval(eta, consts).0;
            for b in 0..2 {
                let m = ev.jw[q] * j * ev.psi[q][b];
                for (d, s) in [(de[b], 1.0), (dm[b], -1.0)] {
                    let r = map.global(3, d);
                    if r != NONE {
                        sys.rhs[r] += s * m;
                    }
                }
            }
        }
    }
    let (y, _) = newton_boundary_iteration(&sys, &vec![0.0; map.n], &NewtonOptions::default())?;
    let parts = map.scatter(&y);
    let mut out = [0.0; 4];
    for f in 0..4 {
        let space = if f < 3 { st } else { sp };
        let (e, n) = l2_error(disc, space, &parts[f], |s, x, y| exact_field(f, s, x, y)[0]);
        out[f] = (e / n).sqrt();
    }
    Ok(out)
}

/// Errors of both studies on `levels` dyadic refinements of `base`.
pub fn convergence_study(
    spec: &GeometrySpec,
    base: Resolution,
    levels: usize,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
) -> Result<ConvergenceStudy> {
    if levels < 2 {
        return Err(Error::Config(vec!["an order study needs at least two levels".into()]));
    }
    let mut resolutions = Vec::new();
    let mut errs: Vec<[f64; 6]> = Vec::new();
    let mut r = base;
    for _ in 0..levels {
        let disc = Discretization::new(spec, r)?;
        let [u, p] = flow_mms(&disc, coeffs, consts)?;
        let [r1, r2, t, phi] = tec_mms(&disc, coeffs, consts)?;
        errs.push([u, p, r1, r2, t, phi]);
        resolutions.push(r);
        r = r.refined();
    }
    let fields = MmsField::ALL
        .iter()
        .enumerate()
        .map(|(i, &field)| {
            let errors: Vec<f64> = errs.iter().map(|e| e[i]).collect();
            let orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
            FieldStudy { field, errors, orders }
        })
        .collect();
    Ok(ConvergenceStudy { resolutions, fields })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fields_respect_the_clamped_traces() {
        let ex = Exact {
            spec: verification_geometry(),
        };
        let l = ex.spec.length;
        for &y in &[0.0, l] {
            assert!(ex.velocity(Subdomain::Fuel, 0.2, y)[0][0].abs() < 1e-15);
            assert!(ex.state(1, 0.7, y)[0].abs() < 1e-15);
            assert!(ex.potential(Subdomain::Cathode, 1.2, y)[0].abs() < 1e-15);
        }
        assert_eq!(ex.velocity(Subdomain::Fuel, 0.0, 0.3)[0][0], 0.0);
        let w = ex.spec.width();
        assert!(ex.velocity(Subdomain::Air, w, 0.3)[0][0].abs() < 1e-15);
        let (a, _) = ex.spec.x_range(Subdomain::Anode);
        assert_eq!(ex.potential(Subdomain::Anode, a, 0.3)[0], 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let ex = Exact {
            spec: verification_geometry(),
        };
        let h = 1e-6;
        let check = |f: &dyn Fn(f64, f64) -> Vg, x: f64, y: f64| {
            let v = f(x, y);
            let gx = (f(x + h, y)[0] - f(x - h, y)[0]) / (2.0 * h);
            let gy = (f(x, y + h)[0] - f(x, y - h)[0]) / (2.0 * h);
            assert!((gx - v[1]).abs() < 1e-6 && (gy - v[2]).abs() < 1e-6, "{v:?} {gx} {gy}");
        };
        for i in 0..2 {
            check(&|x, y| ex.velocity(Subdomain::Fuel, x, y)[i], 0.13, 0.4);
            check(&|x, y| ex.velocity(Subdomain::Air, x, y)[i], 1.2, 0.7);
        }
        check(&|x, y| ex.pressure(x, y), 0.6, 0.35);
        for i in 0..3 {
            check(&|x, y| ex.state(i, x, y), 0.9, 0.2);
        }
        for (sub, x) in [(Subdomain::Anode, 0.5), (Subdomain::Membrane, 0.65), (Subdomain::Cathode, 0.8)] {
            check(&|x, y| ex.potential(sub, x, y), x, 0.6);
        }
    }

    #[test]
    fn verification_coefficients_pass_validation() {
        let mut errs = Vec::new();
        verification_coefficients().validate(&mut errs);
        assert!(errs.is_empty(), "{errs:?}");
    }

    #[test]
    fn second_order_on_a_short_sweep() {
        let s = convergence_study(
            &verification_geometry(),
            Resolution::uniform(2, 4),
            3,
            &verification_coefficients(),
            &PhysicalConstants::default(),
        )
        .unwrap();
        for f in &s.fields {
            assert!(f.errors.windows(2).all(|w| w[1] < w[0]), "{f:?}");
        }
        assert!(s.min_final_order() > 1.6, "{s:#?}");
    }
}
