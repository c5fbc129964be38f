//! Channel flow coupled to Darcy flow in the porous layers.
//!
//! Unknowns are the homogeneous velocity `U` on the channels (the full
//! velocity is `u = U + u_0`) and the pressure `p` on the porous domain.
//! The channel pressure does not appear: it is replaced by `R_M rho theta`
//! on the right-hand side. The interface carries the Beavers-Joseph-Saffman
//! slip term and the antisymmetric pair `int p v.n - int U.n q`.

use serde::{Deserialize, Serialize};

use crate::coefficients::{Bounded, CoefficientSet, PhysicalConstants};
use crate::discretization::{Discretization, Liftings};
use crate::error::{Error, Result};
use crate::fem::element::ElementTable;
use crate::fem::norms::{self, Field};
use crate::fem::solve::{solve_linear, LinearOptions};
use crate::fem::space::BlockMap;
use crate::fem::sparse::{norm2, CsrMatrix, Triplets};
use crate::geometry::{FacetTag, Subdomain};

/// Frozen fields the flow problem depends on.
#[derive(Clone, Copy, Debug)]
pub struct FlowInputs<'a> {
    /// Pressure iterate `pi` on the pressure space (Klinkenberg argument).
    pub pi: &'a [f64],
    /// Total density `rho_1 + rho_2` on the state space.
    pub rho: &'a [f64],
    /// Temperature on the state space.
    pub xi: &'a [f64],
}

/// Assembled linear system on the free degrees of freedom `(U_x, U_y, p)`.
#[derive(Clone, Debug)]
pub struct FlowSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub map: BlockMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSolution {
    /// Homogeneous part `U` on the `ux` / `uy` spaces.
    pub u_hom: [Vec<f64>; 2],
    /// Full velocity `u = U + u_0`.
    pub u: [Vec<f64>; 2],
    /// Pressure with zero mean over the porous domain.
    pub p: Vec<f64>,
    /// Mean pressure removed from the solved field.
    pub p_mean: f64,
    pub relative_residual: f64,
}

fn in_bounds(name: &'static str, b: &Bounded, v: f64) -> Result<()> {
    let slack = 1e-12 * b.upper.abs().max(b.lower.abs());
    if v < b.lower - slack || v > b.upper + slack || !v.is_finite() {
        return Err(Error::CoefficientBound {
            name,
            value: v,
            lower: b.lower,
            upper: b.upper,
        });
    }
    Ok(())
}

/// Assemble the flow system for frozen `(pi, rho, xi)` and lifting `u_0`.
pub fn assemble_flow(
    disc: &Discretization,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    inputs: FlowInputs,
    lift: &Liftings,
) -> Result<FlowSystem> {
    let mesh = &disc.mesh;
    let (sx, sy, sp, st) = (&disc.ux, &disc.uy, &disc.pressure, &disc.state);
    if inputs.pi.len() != sp.n_dofs() || inputs.rho.len() != st.n_dofs() || inputs.xi.len() != st.n_dofs() {
        return Err(Error::Dimension("flow inputs do not match their spaces".into()));
    }
    let map = BlockMap::new(&[sx, sy, sp]);
    let table = ElementTable::new(3)?;
    let mut t = Triplets::with_capacity(map.n, map.n, 64 * mesh.n_cells());
    let mut rhs = vec![0.0; map.n];
    let r_m = consts.r_m();

    for (c, cell) in mesh.cells.iter().enumerate() {
        let cv = table.eval(cell);
        let xi_l = st.local_values(c, inputs.xi).expect("state space covers every cell");
        if cell.subdomain.is_fluid() {
            let dx = sx.cell_dofs(c).unwrap();
            let dy = sy.cell_dofs(c).unwrap();
            let rho_l = st.local_values(c, inputs.rho).unwrap();
            // Local unknown order: ux[0..4], uy[0..4].
            let mut ke = [[0.0; 8]; 8];
            let mut fe = [0.0; 8];
            for q in 0..cv.nq {
                let xi = cv.value(q, &xi_l);
                let mu = coeffs.mu(xi);
                let lam = coeffs.lambda(xi);
                in_bounds("mu", &coeffs.mu, mu)?;
                in_bounds("lambda", &coeffs.lambda, lam)?;
                let w = cv.jw[q];
                let g = &cv.grad[q];
                for b in 0..4 {
                    for a in 0..4 {
                        let (gxa, gya, gxb, gyb) = (g[a][0], g[a][1], g[b][0], g[b][1]);
                        ke[b][a] += w * (mu * (gxa * gxb + 0.5 * gya * gyb) + lam * gxa * gxb);
                        ke[4 + b][4 + a] += w * (mu * (gya * gyb + 0.5 * gxa * gxb) + lam * gya * gyb);
                        // test x, trial y
                        ke[b][4 + a] += w * (0.5 * mu * gxa * gyb + lam * gya * gxb);
                        // test y, trial x
                        ke[4 + b][a] += w * (0.5 * mu * gya * gxb + lam * gxa * gyb);
                    }
                }
                let src = w * r_m * cv.value(q, &rho_l) * xi;
                for b in 0..4 {
                    fe[b] += src * g[b][0];
                    fe[4 + b] += src * g[b][1];
                }
            }
            let glob: [(usize, usize); 8] = [
                (0, dx[0]),
                (0, dx[1]),
                (0, dx[2]),
                (0, dx[3]),
                (1, dy[0]),
                (1, dy[1]),
                (1, dy[2]),
                (1, dy[3]),
            ];
            let u0: [f64; 8] = std::array::from_fn(|i| lift.u0[glob[i].0][glob[i].1]);
            for (r, &(rb, rd)) in glob.iter().enumerate() {
                let gr = map.global(rb, rd);
                if gr == crate::fem::space::NONE {
                    continue;
                }
                // G(xi, u_0, v) moves to the right-hand side.
                let g0: f64 = (0..8).map(|k| ke[r][k] * u0[k]).sum();
                rhs[gr] += fe[r] - g0;
                for (k, &(cb, cd)) in glob.iter().enumerate() {
                    let gc = map.global(cb, cd);
                    if gc != crate::fem::space::NONE {
                        t.push(gr, gc, ke[r][k]);
                    }
                }
            }
        } else {
            let dp = sp.cell_dofs(c).unwrap();
            let pi_l = sp.local_values(c, inputs.pi).unwrap();
            let mut ke = [[0.0; 4]; 4];
            for q in 0..cv.nq {
                let xi = cv.value(q, &xi_l);
                let mu = coeffs.mu(xi);
                in_bounds("mu", &coeffs.mu, mu)?;
                let kg = coeffs.permeability(cell.subdomain, cv.value(q, &pi_l));
                let perm = &coeffs.permeability;
                if !(kg >= perm.k_l * (1.0 - 1e-12) && kg <= perm.k_l_max * (1.0 + 1e-12)) {
                    return Err(Error::CoefficientBound {
                        name: "K_g",
                        value: kg,
                        lower: perm.k_l,
                        upper: perm.k_l_max,
                    });
                }
                let w = cv.jw[q] * kg / mu;
                let g = &cv.grad[q];
                for b in 0..4 {
                    for a in 0..4 {
                        ke[b][a] += w * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                    }
                }
            }
            for b in 0..4 {
                let gr = map.global(2, dp[b]);
                for a in 0..4 {
                    t.push(gr, map.global(2, dp[a]), ke[b][a]);
                }
            }
        }
    }

    // Interface terms.
    for f in mesh.facets.iter().filter(|f| matches!(f.tag, FacetTag::FluidPorous(_))) {
        let n = f.tag.interface_normal().unwrap();
        let fc = sx.facet_cell(f, None).unwrap();
        let pc = sp.facet_cell(f, None).unwrap();
        let vx = sx.facet_dofs(mesh, f, fc).unwrap();
        let vy = sy.facet_dofs(mesh, f, fc).unwrap();
        let pd = sp.facet_dofs(mesh, f, pc).unwrap();
        let xd = st.facet_dofs(mesh, f, fc).unwrap();
        let xi_e = [inputs.xi[xd[0]], inputs.xi[xd[1]]];
        let ev = table.eval_edge(f);
        for q in 0..ev.nq {
            let beta = coeffs.beta(ev.value(q, &xi_e));
            in_bounds("beta", &coeffs.beta, beta)?;
            let psi = ev.psi[q];
            for b in 0..2 {
                for a in 0..2 {
                    let m = ev.jw[q] * psi[a] * psi[b];
                    let (ry, cy) = (map.global(1, vy[b]), map.global(1, vy[a]));
                    if ry != crate::fem::space::NONE && cy != crate::fem::space::NONE {
                        t.push(ry, cy, beta * m);
                    }
                    let rx = map.global(0, vx[b]);
                    let cx = map.global(0, vx[a]);
                    let (rp, cp) = (map.global(2, pd[b]), map.global(2, pd[a]));
                    if rx != crate::fem::space::NONE {
                        t.push(rx, cp, n * m);
                    }
                    if cx != crate::fem::space::NONE {
                        t.push(rp, cx, -n * m);
                    }
                }
            }
        }
    }
    Ok(FlowSystem {
        matrix: t.to_csr(),
        rhs,
        map,
    })
}

impl FlowSystem {
    /// Solve with `extra` added to the right-hand side (free-dof numbering).
    pub fn solve(
        &self,
        disc: &Discretization,
        lift: &Liftings,
        extra: Option<&[f64]>,
        opts: &LinearOptions,
    ) -> Result<FlowSolution> {
        let mut b = self.rhs.clone();
        if let Some(e) = extra {
            for (bi, ei) in b.iter_mut().zip(e) {
                *bi += ei;
            }
        }
        let sol = solve_linear(&self.matrix, &b, opts)?;
        let mut parts = self.map.scatter(&sol.x).into_iter();
        let ux = parts.next().unwrap();
        let uy = parts.next().unwrap();
        let mut p = parts.next().unwrap();
        let area = disc.mesh.area_where(|s| s.is_porous());
        let p_mean = integral(disc, &p) / area;
        for v in &mut p {
            *v -= p_mean;
        }
        let u = [
            ux.iter().zip(&lift.u0[0]).map(|(a, b)| a + b).collect(),
            uy.iter().zip(&lift.u0[1]).map(|(a, b)| a + b).collect(),
        ];
        Ok(FlowSolution {
            u_hom: [ux, uy],
            u,
            p,
            p_mean,
            relative_residual: sol.relative_residual,
        })
    }

    /// `||A x - b|| / ||b||` for a solution (with its mean restored).
    pub fn residual(&self, sol: &FlowSolution) -> f64 {
        let p: Vec<f64> = sol.p.iter().map(|v| v + sol.p_mean).collect();
        let x = self.map.gather(&[&sol.u_hom[0], &sol.u_hom[1], &p]);
        let ax = self.matrix.matvec(&x);
        let r: Vec<f64> = ax.iter().zip(&self.rhs).map(|(a, b)| a - b).collect();
        norm2(&r) / norm2(&self.rhs).max(f64::MIN_POSITIVE)
    }
}

fn integral(disc: &Discretization, p: &[f64]) -> f64 {
    let table = ElementTable::new(1).expect("order 1 rule");
    let mut s = 0.0;
    for (c, cell) in disc.mesh.cells.iter().enumerate() {
        if let Some(l) = disc.pressure.local_values(c, p) {
            let cv = table.eval(cell);
            for q in 0..cv.nq {
                s += cv.jw[q] * cv.value(q, &l);
            }
        }
    }
    s
}

/// Assemble and solve.
pub fn solve_flow(
    disc: &Discretization,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    inputs: FlowInputs,
    lift: &Liftings,
    opts: &LinearOptions,
) -> Result<FlowSolution> {
    assemble_flow(disc, coeffs, consts, inputs, lift)?.solve(disc, lift, None, opts)
}

/// Both sides of the a-posteriori energy estimate for `u = U + u_0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    pub lhs: f64,
    pub rhs: f64,
    pub c0: f64,
    pub grad_u_sq: f64,
    pub slip_sq: f64,
    pub grad_p_sq: f64,
    /// `(rhs - lhs) / rhs`, or `-inf` when `rhs = 0 < lhs`.
    pub relative_margin: f64,
    pub holds: bool,
}

/// `C_0 = sqrt(mu^#) ||D u_0|| + lambda^# / sqrt(mu_#) ||div u_0||`.
pub fn lifting_constant(disc: &Discretization, coeffs: &CoefficientSet, lift: &Liftings) -> f64 {
    let fl = |s: Subdomain| s.is_fluid();
    let ux = Field::new(&disc.ux, &lift.u0[0]);
    let uy = Field::new(&disc.uy, &lift.u0[1]);
    let du = norms::sym_grad_sq(&disc.mesh, ux, uy, fl).sqrt();
    let dv = norms::div_sq(&disc.mesh, ux, uy, fl).sqrt();
    coeffs.mu.upper.sqrt() * du + coeffs.lambda.upper.max(0.0) / coeffs.mu.lower.sqrt() * dv
}

/// Evaluate the energy estimate with Korn constant `c_k`. The slack `rel`
/// is a relative tolerance on the comparison.
pub fn check_flow_energy_estimate(
    disc: &Discretization,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    sol: &FlowSolution,
    inputs: FlowInputs,
    lift: &Liftings,
    c_k: f64,
    rel: f64,
) -> FlowEstimate {
    let mesh = &disc.mesh;
    let spec = mesh.spec;
    let fl = |s: Subdomain| s.is_fluid();
    let ux = Field::new(&disc.ux, &sol.u[0]);
    let uy = Field::new(&disc.uy, &sol.u[1]);
    let grad_u_sq = norms::vector_grad_sq(mesh, ux, uy, fl);
    let slip_sq = norms::tangential_sq(mesh, uy, |f| matches!(f.tag, FacetTag::FluidPorous(_)));
    let grad_p_sq = norms::grad_sq(mesh, Field::new(&disc.pressure, &sol.p), |s| s.is_porous());
    let mu_lo = coeffs.mu.lower;
    let lhs = mu_lo / (2.0 * c_k) * grad_u_sq
        + coeffs.beta.lower * slip_sq
        + coeffs.permeability.k_l / coeffs.mu.upper * grad_p_sq;

    let xi = Field::new(&disc.state, inputs.xi);
    let rho = Field::new(&disc.state, inputs.rho);
    let xi_wall = norms::facet_l2_sq(mesh, xi, |f| f.tag == FacetTag::Wall && f.vertical && channel_side(mesh, f));
    let xi_grad = norms::grad_sq(mesh, xi, fl);
    let rho_grad = norms::grad_sq(mesh, rho, fl).sqrt();
    let c0 = lifting_constant(disc, coeffs, lift);
    let first = (2.0 * spec.length).sqrt() * consts.r_m() / mu_lo.sqrt() * (xi_wall + spec.l_f * xi_grad).sqrt() * rho_grad;
    let rhs = (first + c0).powi(2);
    let relative_margin = if rhs > 0.0 {
        (rhs - lhs) / rhs
    } else if lhs > 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    FlowEstimate {
        lhs,
        rhs,
        c0,
        grad_u_sq,
        slip_sq,
        grad_p_sq,
        relative_margin,
        holds: lhs <= rhs * (1.0 + rel) || lhs <= f64::MIN_POSITIVE,
    }
}

fn channel_side(mesh: &crate::geometry::MultidomainMesh, f: &crate::geometry::Facet) -> bool {
    f.boundary_cell().is_some_and(|c| mesh.cells[c].subdomain.is_fluid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BoundaryData, ScalarModel};
    use crate::discretization::ScalarLifting;
    use crate::geometry::{GeometrySpec, Resolution};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(n: usize, ny: usize) -> (Discretization, CoefficientSet, PhysicalConstants) {
        let spec = GeometrySpec::new(1e-3, 2e-4, 1e-4, 2e-4, 1e-2).unwrap();
        let disc = Discretization::new(&spec, Resolution::uniform(n, ny)).unwrap();
        (disc, CoefficientSet::desk(), PhysicalConstants::default())
    }

    fn inputs<'a>(pi: &'a [f64], rho: &'a [f64], xi: &'a [f64]) -> FlowInputs<'a> {
        FlowInputs { pi, rho, xi }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (d, c, k) = setup(2, 6);
        let z = vec![0.0; d.state.n_dofs()];
        let pi = vec![0.0; d.pressure.n_dofs()];
        let lift = Liftings::zero(&d);
        let s = solve_flow(&d, &c, &k, inputs(&pi, &z, &z), &lift, &LinearOptions::default()).unwrap();
        assert!(s.u[0].iter().chain(&s.u[1]).chain(&s.p).all(|v| *v == 0.0));
        let est = check_flow_energy_estimate(&d, &c, &k, &s, inputs(&pi, &z, &z), &lift, 2.0, 1e-9);
        assert_eq!((est.lhs, est.rhs, est.c0), (0.0, 0.0, 0.0));
        assert!(est.holds);
    }

    #[test]
    fn constant_source_matches_divergence_assembly() {
        let (d, c, k) = setup(2, 5);
        let cst = 0.7;
        let rho = vec![cst; d.state.n_dofs()];
        let xi = vec![1.0; d.state.n_dofs()];
        let pi = vec![0.0; d.pressure.n_dofs()];
        let lift = Liftings::zero(&d);
        let sys = assemble_flow(&d, &c, &k, inputs(&pi, &rho, &xi), &lift).unwrap();
        // Independent oracle: column sums of the divergence form.
        let gx = crate::fem::assemble::assemble_gradient_load(&d.mesh, &d.ux, &|_, _| [1.0, 0.0], 3).unwrap();
        let gy = crate::fem::assemble::assemble_gradient_load(&d.mesh, &d.uy, &|_, _| [0.0, 1.0], 3).unwrap();
        let expect = sys.map.gather(&[&gx, &gy, &vec![0.0; d.pressure.n_dofs()]]);
        let scale = k.r_m() * cst * expect.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in sys.rhs.iter().zip(&expect) {
            assert!((a - k.r_m() * cst * b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn interface_pair_is_antisymmetric_and_form_is_coercive() {
        let (d, c, k) = setup(2, 5);
        let xi = vec![350.0; d.state.n_dofs()];
        let rho = vec![0.0; d.state.n_dofs()];
        let pi = vec![0.0; d.pressure.n_dofs()];
        let sys = assemble_flow(&d, &c, &k, inputs(&pi, &rho, &xi), &Liftings::zero(&d)).unwrap();
        let a = &sys.matrix;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p_range = sys.map.block_range(2);
        for _ in 0..20 {
            let x: Vec<f64> = (0..sys.map.n).map(|_| rng.random_range(-1.0..1.0)).collect();
            // Coupling blocks only.
            let mut cross = 0.0;
            for i in 0..a.n_rows {
                for (j, v) in a.row(i) {
                    if p_range.contains(&i) != p_range.contains(&j) {
                        cross += x[i] * v * x[j];
                    }
                }
            }
            assert!(cross.abs() < 1e-12 * norm2(&x).powi(2));
            assert!(a.bilinear(&x, &x) > 0.0);
        }
    }

    #[test]
    fn coefficient_violation_is_reported() {
        let (d, mut c, k) = setup(1, 2);
        c.mu.model = ScalarModel::Constant { value: 1.0 };
        let z = vec![350.0; d.state.n_dofs()];
        let pi = vec![0.0; d.pressure.n_dofs()];
        let err = assemble_flow(&d, &c, &k, inputs(&pi, &z, &z), &Liftings::zero(&d)).unwrap_err();
        assert!(matches!(err, Error::CoefficientBound { name: "mu", .. }));
    }

    #[test]
    fn c0_for_a_unit_strain_lifting() {
        // u_0 = (0, a x) on a unit fuel strip: |D u_0|^2 = 2 (a/2)^2, so
        // a = sqrt(2) gives ||D u_0|| = 1 and div u_0 = 0.
        let spec = GeometrySpec::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let d = Discretization::new(&spec, Resolution::uniform(2, 2)).unwrap();
        let mut lift = Liftings::zero(&d);
        lift.u0[1] = d
            .uy
            .interpolate(&d.mesh, |x, _, sub| if sub == Subdomain::Fuel { 2f64.sqrt() * x } else { 0.0 });
        let c0 = lifting_constant(&d, &CoefficientSet::desk(), &lift);
        assert!((c0 - 4.8e-5f64.sqrt()).abs() < 1e-12);
        assert!((c0 - 6.93e-3).abs() < 1e-5);
    }

    #[test]
    fn energy_estimate_holds_with_inlet_vanishing_density() {
        let (d, c, k) = setup(3, 12);
        let mut bd = BoundaryData::zero();
        bd.u_in = 0.05;
        bd.rho_out = [0.02, 0.01];
        bd.theta_in = 340.0;
        bd.theta_out = 360.0;
        let lift = Liftings::new(&d, &bd, ScalarLifting::Smoothstep);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..3 {
            let mut rho: Vec<f64> = (0..d.state.n_dofs())
                .map(|i| lift.rho0[0][i] + lift.rho0[1][i] + 1e-3 * rng.random::<f64>())
                .collect();
            d.state.project(&mut rho);
            let xi: Vec<f64> = (0..d.state.n_dofs()).map(|i| lift.theta0[i] + rng.random::<f64>()).collect();
            let pi: Vec<f64> = (0..d.pressure.n_dofs()).map(|_| rng.random_range(-10.0..10.0)).collect();
            let inp = inputs(&pi, &rho, &xi);
            let s = solve_flow(&d, &c, &k, inp, &lift, &LinearOptions::default()).unwrap();
            assert!(s.relative_residual < 1e-10);
            let est = check_flow_energy_estimate(&d, &c, &k, &s, inp, &lift, 2.0, 1e-9);
            assert!(est.holds, "{est:?}");
        }
    }
}
