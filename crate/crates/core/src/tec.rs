//! Coupled species / heat / potential problem for frozen velocity, densities,
//! temperature and Joule datum.
//!
//! Unknowns are `Upsilon_1, Upsilon_2, Theta` on the state space and `phi_cc`
//! on the broken potential space. Everything is linear except the catalyst
//! terms `int j_l(eta) (w_l - w_m)`, which are handled by a damped Newton
//! iteration with a secant fixed-point fallback.

use serde::{Deserialize, Serialize};

use crate::coefficients::{BoundaryData, CoefficientSet, CrossCoefficients, InterfaceLaw, PhysicalConstants};
use crate::discretization::{Discretization, Liftings};
use crate::error::{Error, Result};
use crate::fem::element::ElementTable;
use crate::fem::norms::{self, Field};
use crate::fem::solve::{solve_linear, LinearOptions};
use crate::fem::space::{BlockMap, NONE};
use crate::fem::sparse::{norm2, CsrMatrix, Triplets};
use crate::geometry::{Electrode, FacetTag, MultidomainMesh, Subdomain};
use crate::ledger::{AParams, Bounds};

/// Quadrature order of cell-wise fields such as the Joule datum.
pub const QP_ORDER: usize = 3;
const EDGE_ORDER: usize = 5;

/// Values at the quadrature points of every cell (order [`QP_ORDER`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpField {
    pub nq: usize,
    pub values: Vec<f64>,
}

impl QpField {
    pub fn zero(mesh: &MultidomainMesh) -> Self {
        let nq = ElementTable::new(QP_ORDER).expect("fixed order").nq();
        QpField {
            nq,
            values: vec![0.0; nq * mesh.n_cells()],
        }
    }

    /// `f(cell, x, y)` at every quadrature point of the cells selected by `sel`.
    pub fn from_fn(
        mesh: &MultidomainMesh,
        sel: impl Fn(Subdomain) -> bool,
        f: impl Fn(usize, f64, f64) -> f64,
    ) -> Self {
        let table = ElementTable::new(QP_ORDER).expect("fixed order");
        let mut out = Self::zero(mesh);
        for (c, cell) in mesh.cells.iter().enumerate() {
            if !sel(cell.subdomain) {
                continue;
            }
            let cv = table.eval(cell);
            for q in 0..cv.nq {
                out.values[c * out.nq + q] = f(c, cv.xy[q][0], cv.xy[q][1]);
            }
        }
        out
    }

    #[inline]
    pub fn at(&self, cell: usize, q: usize) -> f64 {
        self.values[cell * self.nq + q]
    }

    pub fn l2_sq(&self, mesh: &MultidomainMesh) -> f64 {
        self.weighted(mesh, |v| v * v)
    }

    pub fn integral(&self, mesh: &MultidomainMesh) -> f64 {
        self.weighted(mesh, |v| v)
    }

    fn weighted(&self, mesh: &MultidomainMesh, g: impl Fn(f64) -> f64) -> f64 {
        let table = ElementTable::new(QP_ORDER).expect("fixed order");
        let mut s = 0.0;
        for (c, cell) in mesh.cells.iter().enumerate() {
            let cv = table.eval(cell);
            for q in 0..cv.nq {
                s += cv.jw[q] * g(self.at(c, q));
            }
        }
        s
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_diff(&self, other: &QpField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn electrode_layers(s: Subdomain) -> bool {
    s.is_gdl()
}

/// `|grad phi|^2` on the anode and cathode layers, zero elsewhere.
pub fn potential_grad_sq(disc: &Discretization, phi: &[f64]) -> QpField {
    let table = ElementTable::new(QP_ORDER).expect("fixed order");
    let mut out = QpField::zero(&disc.mesh);
    for (c, cell) in disc.mesh.cells.iter().enumerate() {
        if !electrode_layers(cell.subdomain) {
            continue;
        }
        let l = disc.potential.local_values(c, phi).expect("potential covers the porous layers");
        let cv = table.eval(cell);
        for q in 0..cv.nq {
            let g = cv.gradient(q, &l);
            out.values[c * out.nq + q] = g[0] * g[0] + g[1] * g[1];
        }
    }
    out
}

/// Frozen inputs of the coupled problem.
#[derive(Clone, Copy, Debug)]
pub struct TecInputs<'a> {
    /// Full velocity `w` on the `ux` / `uy` spaces.
    pub w: [&'a [f64]; 2],
    /// `varrho_1, varrho_2` on the state space.
    pub rho: [&'a [f64]; 2],
    /// `xi` on the state space.
    pub xi: &'a [f64],
    /// Joule datum `Phi` on the anode and cathode layers.
    pub phi_data: &'a QpField,
}

#[derive(Clone, Copy, Debug)]
struct InterfacePoint {
    electrode: Electrode,
    jw: f64,
    /// Global indices of the two electrode-side and two membrane-side dofs
    /// (`NONE` when fixed at zero).
    dofs: [usize; 4],
    /// `psi` on the electrode side, `-psi` on the membrane side.
    coef: [f64; 4],
}

/// Linear part, right-hand side and catalyst quadrature of the system.
#[derive(Clone, Debug)]
pub struct TecSystem {
    pub map: BlockMap,
    pub linear: CsrMatrix,
    pub rhs: Vec<f64>,
    linear_triplets: Triplets,
    /// `1 / max_j |A_ij|` per row.
    row_scale: Vec<f64>,
    /// Natural magnitude of each unknown block, taken from the data.
    field_scale: [f64; 4],
    points: Vec<InterfacePoint>,
    laws: [InterfaceLaw; 2],
    phi_ref: f64,
    consts: PhysicalConstants,
}

fn law_index(e: Electrode) -> usize {
    match e {
        Electrode::Anode => 0,
        Electrode::Cathode => 1,
    }
}

/// Row of the cross matrix for equation `f`, column `g`.
pub(crate) fn cross_entry(c: &CrossCoefficients, f: usize, g: usize) -> f64 {
    match (f, g) {
        (0, 0) => c.d1,
        (0, 1) => c.d12,
        (0, 2) => c.soret1,
        (0, 3) => c.psi_kappa,
        (1, 0) => c.d21,
        (1, 1) => c.d2,
        (1, 2) => c.soret2,
        (2, 0) => c.dufour1,
        (2, 1) => c.dufour2,
        (2, 2) => c.k,
        (2, 3) => c.peltier_sigma,
        (3, 0) => c.kappa_m1,
        (3, 2) => c.seebeck_sigma,
        (3, 3) => c.sigma,
        _ => 0.0,
    }
}

fn check_len(name: &str, v: &[f64], n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{name}: {} values for {n} dofs", v.len())));
    }
    Ok(())
}

/// Assemble the linear part and the catalyst quadrature.
pub fn assemble_tec(
    disc: &Discretization,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    inputs: TecInputs,
    lift: &Liftings,
    data: &BoundaryData,
) -> Result<TecSystem> {
    let mesh = &disc.mesh;
    let (st, sp) = (&disc.state, &disc.potential);
    check_len("w_x", inputs.w[0], disc.ux.n_dofs())?;
    check_len("w_y", inputs.w[1], disc.uy.n_dofs())?;
    check_len("rho_1", inputs.rho[0], st.n_dofs())?;
    check_len("rho_2", inputs.rho[1], st.n_dofs())?;
    check_len("xi", inputs.xi, st.n_dofs())?;
    if inputs.phi_data.values.len() != inputs.phi_data.nq * mesh.n_cells() {
        return Err(Error::Dimension("Joule datum does not match the mesh".into()));
    }
    let map = BlockMap::new(&[st, st, st, sp]);
    let table = ElementTable::new(QP_ORDER)?;
    if table.nq() != inputs.phi_data.nq {
        return Err(Error::Dimension("Joule datum uses another quadrature".into()));
    }
    let mut t = Triplets::with_capacity(map.n, map.n, 200 * mesh.n_cells());
    let mut rhs = vec![0.0; map.n];

    for (c, cell) in mesh.cells.iter().enumerate() {
        let cv = table.eval(cell);
        let sd = st.cell_dofs(c).expect("state space covers every cell");
        let pd = sp.cell_dofs(c);
        let nf = if pd.is_some() { 4 } else { 3 };
        let xi_l = st.local_values(c, inputs.xi).unwrap();
        let r1_l = st.local_values(c, inputs.rho[0]).unwrap();
        let r2_l = st.local_values(c, inputs.rho[1]).unwrap();
        let lifts = [
            st.local_values(c, &lift.rho0[0]).unwrap(),
            st.local_values(c, &lift.rho0[1]).unwrap(),
            st.local_values(c, &lift.theta0).unwrap(),
        ];
        let fluid = cell.subdomain.is_fluid();
        let w_l = if fluid {
            Some([
                disc.ux.local_values(c, inputs.w[0]).unwrap(),
                disc.uy.local_values(c, inputs.w[1]).unwrap(),
            ])
        } else {
            None
        };
        let mut ke = [[0.0; 16]; 16];
        let mut fe = [0.0; 16];
        for q in 0..cv.nq {
            let xi = cv.value(q, &xi_l);
            let cc = coeffs.cross(consts, cell.subdomain, cv.value(q, &r1_l), cv.value(q, &r2_l), xi);
            let jw = cv.jw[q];
            let g = &cv.grad[q];
            let glift = lifts.map(|l| cv.gradient(q, &l));
            for f in 0..nf {
                for gi in 0..nf {
                    let a = cross_entry(&cc, f, gi);
                    if a == 0.0 {
                        continue;
                    }
                    for b in 0..4 {
                        for k in 0..4 {
                            ke[4 * f + b][4 * gi + k] += jw * a * (g[k][0] * g[b][0] + g[k][1] * g[b][1]);
                        }
                    }
                }
                for (gi, gl) in glift.iter().enumerate() {
                    let a = cross_entry(&cc, f, gi);
                    if a == 0.0 {
                        continue;
                    }
                    for b in 0..4 {
                        fe[4 * f + b] -= jw * a * (gl[0] * g[b][0] + gl[1] * g[b][1]);
                    }
                }
            }
            if let Some(wl) = &w_l {
                let w = [cv.value(q, &wl[0]), cv.value(q, &wl[1])];
                let phi = &cv.phi[q];
                for i in 0..2 {
                    let z = cv.value(q, &lifts[i]);
                    for b in 0..4 {
                        let wg = w[0] * g[b][0] + w[1] * g[b][1];
                        fe[4 * i + b] -= jw * z * wg;
                        for k in 0..4 {
                            ke[4 * i + b][4 * i + k] += jw * phi[k] * wg;
                        }
                    }
                }
            }
            if electrode_layers(cell.subdomain) {
                let src = jw * cc.sigma * inputs.phi_data.at(c, q);
                for b in 0..4 {
                    fe[8 + b] += src * cv.phi[q][b];
                }
            }
        }
        let glob = |f: usize, a: usize| -> usize {
            if f < 3 {
                map.global(f, sd[a])
            } else {
                map.global(3, pd.unwrap()[a])
            }
        };
        for f in 0..nf {
            for b in 0..4 {
                let r = glob(f, b);
                if r == NONE {
                    continue;
                }
                rhs[r] += fe[4 * f + b];
                for gi in 0..nf {
                    for k in 0..4 {
                        let col = glob(gi, k);
                        let v = ke[4 * f + b][4 * gi + k];
                        if col != NONE && v != 0.0 {
                            t.push(r, col, v);
                        }
                    }
                }
            }
        }
    }

    let edge = ElementTable::new(EDGE_ORDER)?;
    // Heat exchange with the surroundings on every wall.
    for f in mesh.facets.iter().filter(|f| f.tag.is_wall()) {
        let c = st.facet_cell(f, None).expect("wall facet borders a cell");
        let d = st.facet_dofs(mesh, f, c).unwrap();
        let xi_e = [inputs.xi[d[0]], inputs.xi[d[1]]];
        let th0 = [lift.theta0[d[0]], lift.theta0[d[1]]];
        let ev = edge.eval_edge(f);
        for q in 0..ev.nq {
            let h = coeffs.h_c(ev.value(q, &xi_e));
            let jw = ev.jw[q] * h;
            let src = jw * (data.theta_e - ev.value(q, &th0));
            for b in 0..2 {
                let r = map.global(2, d[b]);
                if r == NONE {
                    continue;
                }
                rhs[r] += src * ev.psi[q][b];
                for a in 0..2 {
                    let col = map.global(2, d[a]);
                    if col != NONE {
                        t.push(r, col, jw * ev.psi[q][a] * ev.psi[q][b]);
                    }
                }
            }
        }
    }

    let mut points = Vec::new();
    for f in mesh.facets.iter() {
        let FacetTag::Catalyst(e) = f.tag else { continue };
        let (c0, c1) = (f.cells[0].unwrap(), f.cells[1].unwrap());
        let (ce, cm) = if mesh.cells[c0].subdomain == Subdomain::Membrane {
            (c1, c0)
        } else {
            (c0, c1)
        };
        let de = sp.facet_dofs(mesh, f, ce).unwrap();
        let dm = sp.facet_dofs(mesh, f, cm).unwrap();
        let ev = edge.eval_edge(f);
        for q in 0..ev.nq {
            let p = ev.psi[q];
            points.push(InterfacePoint {
                electrode: e,
                jw: ev.jw[q],
                dofs: [
                    map.global(3, de[0]),
                    map.global(3, de[1]),
                    map.global(3, dm[0]),
                    map.global(3, dm[1]),
                ],
                coef: [p[0], p[1], -p[0], -p[1]],
            });
        }
    }

    let linear = t.to_csr();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let nonzero = |v: f64| if v > 0.0 { v } else { 1.0 };
    let field_scale = [
        nonzero(sup(&lift.rho0[0]).max(sup(inputs.rho[0]))),
        nonzero(sup(&lift.rho0[1]).max(sup(inputs.rho[1]))),
        nonzero(sup(&lift.theta0).max(sup(inputs.xi)).max(data.theta_e.abs())),
        nonzero(coeffs.phi_ref.abs().max(data.e_cell.abs())),
    ];
    Ok(TecSystem {
        map,
        row_scale: row_scaling(&linear),
        field_scale,
        linear,
        rhs,
        linear_triplets: t,
        points,
        laws: [coeffs.anode, coeffs.cathode],
        phi_ref: coeffs.phi_ref,
        consts: *consts,
    })
}

/// Norms of the three parts of the residual of each equation block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockResiduals {
    /// `max_i |R_i| / max_j |A_ij|` over the block, divided by the larger of
    /// `||y_f||_inf` and the natural size of the field. This decides
    /// convergence.
    pub scaled: [f64; 4],
    /// `||R_f|| / max(||b_f||, ||(A y)_f||, ||N(y)_f||)`, zero when all vanish.
    /// Meaningless when the exact terms vanish.
    pub relative: [f64; 4],
    pub absolute: [f64; 4],
}

impl BlockResiduals {
    pub fn max(&self) -> f64 {
        self.scaled.iter().copied().fold(0.0, f64::max)
    }
}

impl TecSystem {
    fn eta(&self, p: &InterfacePoint, y: &[f64]) -> f64 {
        let mut jump = 0.0;
        for i in 0..4 {
            if p.dofs[i] != NONE {
                jump += p.coef[i] * y[p.dofs[i]];
            }
        }
        jump - self.phi_ref
    }

    /// Catalyst contribution `N(y)`.
    pub fn interface_vector(&self, y: &[f64]) -> Vec<f64> {
        let mut n = vec![0.0; self.map.n];
        for p in &self.points {
            let (j, _) = self.laws[law_index(p.electrode)].eval(self.eta(p, y), &self.consts);
            for i in 0..4 {
                if p.dofs[i] != NONE {
                    n[p.dofs[i]] += p.jw * j * p.coef[i];
                }
            }
        }
        n
    }

    /// `R(y) = A y + N(y) - b` and its block-wise size.
    pub fn residual(&self, y: &[f64]) -> (Vec<f64>, BlockResiduals) {
        let ay = self.linear.matvec(y);
        let n = self.interface_vector(y);
        let r: Vec<f64> = (0..self.map.n).map(|i| ay[i] + n[i] - self.rhs[i]).collect();
        let mut br = BlockResiduals::default();
        for f in 0..4 {
            let rg = self.map.block_range(f);
            let scale = norm2(&self.rhs[rg.clone()])
                .max(norm2(&ay[rg.clone()]))
                .max(norm2(&n[rg.clone()]));
            let a = norm2(&r[rg.clone()]);
            let size = self.field_scale[f].max(y[rg.clone()].iter().fold(0.0f64, |m, x| m.max(x.abs())));
            let rs = rg.map(|i| (r[i] * self.row_scale[i]).abs()).fold(0.0f64, f64::max);
            br.scaled[f] = rs / size;
            br.absolute[f] = a;
            br.relative[f] = if scale > 0.0 { a / scale } else { 0.0 };
        }
        (r, br)
    }

    /// `A + N'(y)`.
    pub fn jacobian(&self, y: &[f64]) -> CsrMatrix {
        self.with_interface_matrix(y, |p, y| self.laws[law_index(p.electrode)].eval(self.eta(p, y), &self.consts).1)
    }

    /// `A + S(y)` with the secant slope `j(eta) / eta` and the matching
    /// right-hand side correction `S phi_r`.
    fn secant(&self, y: &[f64]) -> (CsrMatrix, Vec<f64>) {
        let slope = |p: &InterfacePoint, y: &[f64]| {
            let law = &self.laws[law_index(p.electrode)];
            let eta = self.eta(p, y);
            if eta.abs() < 1e-12 {
                law.eval(0.0, &self.consts).1
            } else {
                law.eval(eta, &self.consts).0 / eta
            }
        };
        let m = self.with_interface_matrix(y, slope);
        let mut b = self.rhs.clone();
        for p in &self.points {
            let s = slope(p, y);
            for i in 0..4 {
                if p.dofs[i] != NONE {
                    b[p.dofs[i]] += p.jw * s * self.phi_ref * p.coef[i];
                }
            }
        }
        (m, b)
    }

    fn with_interface_matrix(&self, y: &[f64], slope: impl Fn(&InterfacePoint, &[f64]) -> f64) -> CsrMatrix {
        let mut t = self.linear_triplets.clone();
        for p in &self.points {
            let s = slope(p, y) * p.jw;
            for i in 0..4 {
                if p.dofs[i] == NONE {
                    continue;
                }
                for k in 0..4 {
                    if p.dofs[k] != NONE {
                        t.push(p.dofs[i], p.dofs[k], s * p.coef[i] * p.coef[k]);
                    }
                }
            }
        }
        t.to_csr()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Smallest line-search step before switching to the fallback.
    pub min_step: f64,
    pub max_picard: usize,
    pub linear: LinearOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-10,
            max_iter: 40,
            min_step: 1e-8,
            max_picard: 400,
            linear: LinearOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IterationMethod {
    Newton,
    SecantPicard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub method: IterationMethod,
    pub iterations: usize,
    /// Largest block residual after each step, starting with the initial guess.
    pub history: Vec<f64>,
    /// Row-scaled residual norm used by the line search.
    pub merit_history: Vec<f64>,
    pub residuals: BlockResiduals,
}

fn row_scaling(m: &CsrMatrix) -> Vec<f64> {
    (0..m.n_rows)
        .map(|i| {
            let mx = m.row(i).map(|(_, v)| v.abs()).fold(0.0, f64::max);
            if mx > 0.0 {
                1.0 / mx
            } else {
                1.0
            }
        })
        .collect()
}

fn scaled_norm(d: &[f64], r: &[f64]) -> f64 {
    r.iter().zip(d).map(|(a, b)| (a * b) * (a * b)).sum::<f64>().sqrt()
}

/// Damped Newton on `A y + N(y) = b` from `y0`, with backtracking on the
/// row-scaled residual. When the line search fails the iteration continues
/// as a damped fixed point with the secant slope of the interface law.
pub fn newton_boundary_iteration(sys: &TecSystem, y0: &[f64], opts: &NewtonOptions) -> Result<(Vec<f64>, NewtonReport)> {
    let mut y = y0.to_vec();
    let (mut r, mut br) = sys.residual(&y);
    let d: Vec<f64> = (0..sys.map.n)
        .map(|i| {
            let f = (0..4).find(|&f| sys.map.block_range(f).contains(&i)).unwrap();
            sys.row_scale[i] / sys.field_scale[f]
        })
        .collect();
    let mut merit = scaled_norm(&d, &r);
    let mut report = NewtonReport {
        method: IterationMethod::Newton,
        iterations: 0,
        history: vec![br.max()],
        merit_history: vec![merit],
        residuals: br,
    };
    let mut stalled = false;
    while br.max() > opts.tol && merit > 0.0 {
        if report.iterations >= opts.max_iter {
            stalled = true;
            break;
        }
        let j = sys.jacobian(&y);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = solve_linear(&j, &neg, &opts.linear)?.x;
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= opts.min_step {
            let cand: Vec<f64> = y.iter().zip(&step).map(|(a, b)| a + alpha * b).collect();
            let (rc, bc) = sys.residual(&cand);
            let mc = scaled_norm(&d, &rc);
            if mc <= (1.0 - 1e-4 * alpha) * merit || bc.max() <= opts.tol {
                accepted = Some((cand, rc, bc, mc));
                break;
            }
            alpha *= 0.5;
        }
        report.iterations += 1;
        match accepted {
            Some((cand, rc, bc, mc)) => {
                y = cand;
                r = rc;
                br = bc;
                merit = mc;
                report.history.push(br.max());
                report.merit_history.push(merit);
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    if stalled && br.max() > opts.tol {
        report.method = IterationMethod::SecantPicard;
        let mut omega = 1.0;
        let mut k = 0;
        while br.max() > opts.tol {
            if k >= opts.max_picard || omega < 1e-6 {
                return Err(Error::NewtonDivergence {
                    iterations: report.iterations,
                    residual: br.max(),
                });
            }
            k += 1;
            report.iterations += 1;
            let (m, b) = sys.secant(&y);
            let full = solve_linear(&m, &b, &opts.linear)?.x;
            let cand: Vec<f64> = y.iter().zip(&full).map(|(a, f)| a + omega * (f - a)).collect();
            let (rc, bc) = sys.residual(&cand);
            let mc = scaled_norm(&d, &rc);
            if mc < merit || bc.max() <= opts.tol {
                y = cand;
                r = rc;
                br = bc;
                merit = mc;
                report.history.push(br.max());
                report.merit_history.push(merit);
            } else {
                omega *= 0.5;
            }
        }
    }
    let _ = r;
    report.residuals = br;
    Ok((y, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TecSolution {
    pub upsilon: [Vec<f64>; 2],
    pub theta_hom: Vec<f64>,
    pub phi_cc: Vec<f64>,
    /// `rho_i = Upsilon_i + rho_{i,0}`.
    pub rho: [Vec<f64>; 2],
    /// `theta = Theta + theta_0`.
    pub theta: Vec<f64>,
    /// `phi = phi_cc + E_cell` on the cathode, `phi_cc` elsewhere.
    pub phi: Vec<f64>,
    /// `Q = sigma(varrho, xi) |grad phi|^2` on the anode and cathode layers.
    pub joule: QpField,
    /// `|grad phi|^2` on the anode and cathode layers: the next Joule datum.
    pub phi_grad_sq: QpField,
    pub report: NewtonReport,
}

/// Assemble and solve from a zero initial guess.
pub fn solve_tec(
    disc: &Discretization,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    inputs: TecInputs,
    lift: &Liftings,
    data: &BoundaryData,
    opts: &NewtonOptions,
) -> Result<TecSolution> {
    let sys = assemble_tec(disc, coeffs, consts, inputs, lift, data)?;
    let (y, report) = newton_boundary_iteration(&sys, &vec![0.0; sys.map.n], opts)?;
    Ok(finish(disc, coeffs, consts, inputs, lift, data, &sys, &y, report))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    disc: &Discretization,
    coeffs: &CoefficientSet,
    consts: &PhysicalConstants,
    inputs: TecInputs,
    lift: &Liftings,
    data: &BoundaryData,
    sys: &TecSystem,
    y: &[f64],
    report: NewtonReport,
) -> TecSolution {
    let mut parts = sys.map.scatter(y).into_iter();
    let u1 = parts.next().unwrap();
    let u2 = parts.next().unwrap();
    let th = parts.next().unwrap();
    let pcc = parts.next().unwrap();
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, z)| x + z).collect::<Vec<f64>>();
    let phi: Vec<f64> = pcc
        .iter()
        .enumerate()
        .map(|(d, v)| {
            if disc.potential.dof_subdomain(d) == Subdomain::Cathode {
                v + data.e_cell
            } else {
                *v
            }
        })
        .collect();
    let grad_sq = potential_grad_sq(disc, &pcc);
    let st = &disc.state;
    let table = ElementTable::new(QP_ORDER).expect("fixed order");
    let mut joule = QpField::zero(&disc.mesh);
    for (c, cell) in disc.mesh.cells.iter().enumerate() {
        if !electrode_layers(cell.subdomain) {
            continue;
        }
        let cv = table.eval(cell);
        let xi_l = st.local_values(c, inputs.xi).unwrap();
        let r1 = st.local_values(c, inputs.rho[0]).unwrap();
        let r2 = st.local_values(c, inputs.rho[1]).unwrap();
        for q in 0..cv.nq {
            let s = coeffs
                .cross(consts, cell.subdomain, cv.value(q, &r1), cv.value(q, &r2), cv.value(q, &xi_l))
                .sigma;
            joule.values[c * joule.nq + q] = s * grad_sq.at(c, q);
        }
    }
    TecSolution {
        rho: [add(&u1, &lift.rho0[0]), add(&u2, &lift.rho0[1])],
        theta: add(&th, &lift.theta0),
        upsilon: [u1, u2],
        theta_hom: th,
        phi_cc: pcc,
        phi,
        joule,
        phi_grad_sq: grad_sq,
        report,
    }
}

/// Velocity norms entering the transport gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateCheck {
    /// `(||w_T||^2_Gamma + l_f ||grad w||^2)^{1/2}`.
    pub lower: f64,
    /// `||w||_{1,2}` over the channels.
    pub w_norm: f64,
    pub grad_w_sq: f64,
    pub root1: f64,
    pub holds: bool,
}

pub fn velocity_gate(disc: &Discretization, w: [&[f64]; 2], root1: f64) -> GateCheck {
    let mesh = &disc.mesh;
    let fl = |s: Subdomain| s.is_fluid();
    let wx = Field::new(&disc.ux, w[0]);
    let wy = Field::new(&disc.uy, w[1]);
    let grad = norms::vector_grad_sq(mesh, wx, wy, fl);
    let h1 = norms::h1_sq(mesh, wx, fl) + norms::h1_sq(mesh, wy, fl);
    let slip = norms::tangential_sq(mesh, wy, |f| matches!(f.tag, FacetTag::FluidPorous(_)));
    let lower = (slip + mesh.spec.l_f * grad).sqrt();
    let w_norm = h1.sqrt();
    GateCheck {
        lower,
        w_norm,
        grad_w_sq: grad,
        root1,
        holds: lower < w_norm && w_norm < root1,
    }
}

/// Both sides of the a-posteriori estimate for the coupled problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TecEstimate {
    pub lhs: f64,
    pub rhs: f64,
    /// `a_{i,#} - (1/2 + sqrt 2) sqrt(L) ||w||_{1,2} - (L/4) ||grad w||^2`.
    pub deflated: [f64; 2],
    pub joule_sq: f64,
    pub b0: f64,
    pub gate: GateCheck,
    pub relative_margin: f64,
    pub holds: bool,
}

/// Evaluate the estimate for a computed solution; `rel` is the relative
/// slack of the comparison.
#[allow(clippy::too_many_arguments)]
pub fn check_tec_energy_estimate(
    disc: &Discretization,
    bounds: &Bounds,
    a: &AParams,
    b0: f64,
    root1: f64,
    sol: &TecSolution,
    inputs: TecInputs,
    data: &BoundaryData,
    rel: f64,
) -> TecEstimate {
    let mesh = &disc.mesh;
    let l = mesh.spec.length;
    let gate = velocity_gate(disc, inputs.w, root1);
    let shrink = (0.5 + 2f64.sqrt()) * l.sqrt() * gate.w_norm + l / 4.0 * gate.grad_w_sq;
    let deflated = [a.a1_sharp - shrink, a.a2_sharp - shrink];
    fn st<'a>(d: &'a Discretization, v: &'a [f64]) -> Field<'a> {
        Field::new(&d.state, v)
    }
    let fl = |s: Subdomain| s.is_fluid();
    let po = |s: Subdomain| s.is_porous();
    let mut lhs = 0.0;
    let am = [a.a1_m, a.a2_m];
    for i in 0..2 {
        let u = st(disc, &sol.upsilon[i]);
        lhs += deflated[i] * norms::grad_sq(mesh, u, fl) + am[i] * norms::grad_sq(mesh, u, po);
    }
    let th = st(disc, &sol.theta_hom);
    lhs += a.a3() * norms::grad_sq(mesh, th, |_| true);
    lhs += bounds.h_lower / 2.0 * norms::facet_l2_sq(mesh, th, |f| f.tag.is_wall());
    let ph = Field::new(&disc.potential, &sol.phi_cc);
    lhs += a.a4_m * norms::grad_sq(mesh, ph, |s| s == Subdomain::Membrane);
    lhs += bounds.sigma_lower / 2.0 * norms::grad_sq(mesh, ph, electrode_layers);
    let joule_sq = inputs.phi_data.l2_sq(mesh);
    let wall = mesh.measure_where(|t| t.is_wall());
    let rhs = bounds.sigma_upper.powi(2) / bounds.k_lower * joule_sq
        + bounds.h_upper / 2.0 * data.theta_e * data.theta_e * wall
        + b0;
    let relative_margin = if rhs > 0.0 {
        (rhs - lhs) / rhs
    } else if lhs > 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    TecEstimate {
        lhs,
        rhs,
        deflated,
        joule_sq,
        b0,
        gate,
        relative_margin,
        holds: lhs <= rhs * (1.0 + rel),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Magnitude, ScalarModel};
    use crate::geometry::{CollectorLayout, GeometrySpec, Resolution};

    fn disc(layout: CollectorLayout) -> Discretization {
        let mut spec = GeometrySpec::desk();
        spec.collector = layout;
        Discretization::new(&spec, Resolution::uniform(3, 8)).unwrap()
    }

    struct Frozen {
        w: [Vec<f64>; 2],
        rho: [Vec<f64>; 2],
        xi: Vec<f64>,
        phi: QpField,
    }

    impl Frozen {
        fn constant(d: &Discretization, rho: [f64; 2], xi: f64) -> Self {
            let n = d.state.n_dofs();
            Frozen {
                w: [vec![0.0; d.ux.n_dofs()], vec![0.0; d.uy.n_dofs()]],
                rho: [vec![rho[0]; n], vec![rho[1]; n]],
                xi: vec![xi; n],
                phi: QpField::zero(&d.mesh),
            }
        }

        fn inputs(&self) -> TecInputs<'_> {
            TecInputs {
                w: [&self.w[0], &self.w[1]],
                rho: [&self.rho[0], &self.rho[1]],
                xi: &self.xi,
                phi_data: &self.phi,
            }
        }
    }

    fn constant_data(theta: f64) -> BoundaryData {
        let mut bd = BoundaryData::zero();
        bd.rho_in = [0.2, 0.5];
        bd.rho_out = [0.2, 0.5];
        bd.theta_in = theta;
        bd.theta_out = theta;
        bd.theta_e = theta;
        bd
    }

    fn decoupled(mut c: CoefficientSet) -> CoefficientSet {
        c.d12 = Magnitude::zero(0.0);
        c.d21 = Magnitude::zero(0.0);
        c.soret = [Magnitude::zero(0.0), Magnitude::zero(0.0)];
        c.dufour = [Magnitude::zero(0.0), Magnitude::zero(0.0)];
        c.peltier = Magnitude::zero(0.0);
        c.seebeck = Magnitude::zero(0.0);
        c.peltier_from_seebeck = false;
        c.sigma.model = ScalarModel::Constant { value: 110.0 };
        c.sigma_m.model = ScalarModel::Constant { value: 1.1 };
        c
    }

    #[test]
    fn trivial_data_gives_zero_solution() {
        let d = disc(CollectorLayout::default());
        let c = CoefficientSet::desk();
        let k = PhysicalConstants::default();
        let bd = constant_data(350.0);
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        let mut c0 = c.clone();
        c0.phi_ref = 0.0;
        let sol = solve_tec(&d, &c0, &k, fz.inputs(), &lift, &bd, &NewtonOptions::default()).unwrap();
        let mx = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert_eq!(mx(&sol.upsilon[0]), 0.0);
        assert_eq!(mx(&sol.theta_hom), 0.0);
        assert_eq!(mx(&sol.phi_cc), 0.0);
        assert_eq!(sol.report.iterations, 0);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = disc(CollectorLayout::default());
        let mut c = CoefficientSet::desk();
        c.phi_ref = 0.05;
        let k = PhysicalConstants::default();
        let bd = constant_data(350.0);
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        let sys = assemble_tec(&d, &c, &k, fz.inputs(), &lift, &bd).unwrap();
        let n = sys.map.n;
        let y: Vec<f64> = (0..n).map(|i| 1e-3 * ((i as f64) * 0.7).sin()).collect();
        let dir: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3).cos()).collect();
        let h = 1e-7;
        let yp: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a + h * b).collect();
        let ym: Vec<f64> = y.iter().zip(&dir).map(|(a, b)| a - h * b).collect();
        let fd: Vec<f64> = sys
            .residual(&yp)
            .0
            .iter()
            .zip(&sys.residual(&ym).0)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect();
        let jd = sys.jacobian(&y).matvec(&dir);
        let pr = sys.map.block_range(3);
        let err = norm2(&fd[pr.clone()].iter().zip(&jd[pr.clone()]).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err <= 1e-6 * norm2(&jd[pr]), "{err}");
    }

    #[test]
    fn linear_law_converges_in_one_step() {
        let d = disc(CollectorLayout::default());
        let mut c = CoefficientSet::desk();
        c.anode = InterfaceLaw::Linear { slope: 50.0 };
        c.cathode = InterfaceLaw::Linear { slope: 5.0 };
        c.phi_ref = 0.1;
        let k = PhysicalConstants::default();
        let bd = constant_data(350.0);
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        let sol = solve_tec(&d, &c, &k, fz.inputs(), &lift, &bd, &NewtonOptions::default()).unwrap();
        assert_eq!(sol.report.iterations, 1);
        assert_eq!(sol.report.method, IterationMethod::Newton);
        assert!(sol.report.residuals.max() < 1e-10);
    }

    #[test]
    fn butler_volmer_newton_agrees_with_secant_iteration() {
        let d = disc(CollectorLayout::default());
        let mut c = CoefficientSet::desk();
        c.phi_ref = 0.02;
        if let InterfaceLaw::ButlerVolmer { j_lim, .. } = &mut c.anode {
            *j_lim = 1e7;
        }
        let k = PhysicalConstants::default();
        // A temperature difference drives a thermoelectric current.
        let mut bd = constant_data(350.0);
        bd.theta_in = 330.0;
        bd.theta_out = 370.0;
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        let sys = assemble_tec(&d, &c, &k, fz.inputs(), &lift, &bd).unwrap();
        let opts = NewtonOptions::default();
        let sol = solve_tec(&d, &c, &k, fz.inputs(), &lift, &bd, &opts).unwrap();
        assert!(sol.joule.integral(&d.mesh) > 0.0);
        let (yn, rep) = newton_boundary_iteration(&sys, &vec![0.0; sys.map.n], &opts).unwrap();
        assert_eq!(rep.method, IterationMethod::Newton);
        assert!(rep.merit_history.windows(2).all(|w| w[1] <= w[0]));
        // Force the fallback from the start.
        let forced = NewtonOptions {
            max_iter: 0,
            ..opts
        };
        let (yp, rp) = newton_boundary_iteration(&sys, &vec![0.0; sys.map.n], &forced).unwrap();
        assert_eq!(rp.method, IterationMethod::SecantPicard);
        let diff: Vec<f64> = yn.iter().zip(&yp).map(|(a, b)| a - b).collect();
        let pr = sys.map.block_range(3);
        assert!(norm2(&diff[pr.clone()]) <= 1e-8 * norm2(&yn[pr]).max(1e-300));
        // Quadratic tail: once below 1e-3 the residual at least squares up to a constant.
        let h = &rep.history;
        for w in h.windows(2) {
            if w[0] < 1e-3 && w[1] > 0.0 {
                assert!(w[1] <= 10.0 * w[0] * w[0].max(1e-6), "{h:?}");
            }
        }
    }

    #[test]
    fn decoupled_potential_without_collectors_is_piecewise_constant() {
        // No current leaves the cell, so both catalyst jumps equal phi_r and
        // the anode stays at its gauge value: phi_m = -phi_r, phi_c = 0.
        let layout = CollectorLayout {
            x_fraction: [0.0, 1.0],
            bottom: false,
            top: false,
        };
        let d = disc(layout);
        let k = PhysicalConstants::default();
        let bd = constant_data(350.0);
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        for law in [InterfaceLaw::Linear { slope: 20.0 }, CoefficientSet::desk().anode] {
            let mut c = decoupled(CoefficientSet::desk());
            c.anode = law;
            c.cathode = law;
            c.phi_ref = 0.03;
            let sol = solve_tec(&d, &c, &k, fz.inputs(), &lift, &bd, &NewtonOptions::default()).unwrap();
            for (dof, v) in sol.phi_cc.iter().enumerate() {
                let expect = match d.potential.dof_subdomain(dof) {
                    Subdomain::Membrane => -0.03,
                    _ => 0.0,
                };
                assert!((v - expect).abs() < 1e-9, "{:?}: {v}", d.potential.dof_subdomain(dof));
            }
            assert!(sol.joule.values.iter().all(|q| q.abs() < 1e-12));
        }
    }

    #[test]
    fn joule_is_nonnegative_and_physical_potential_carries_cell_voltage() {
        let d = disc(CollectorLayout::default());
        let mut c = CoefficientSet::desk();
        c.phi_ref = 0.05;
        let k = PhysicalConstants::default();
        let mut bd = constant_data(350.0);
        bd.e_cell = 0.7;
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        let sol = solve_tec(&d, &c, &k, fz.inputs(), &lift, &bd, &NewtonOptions::default()).unwrap();
        assert!(sol.joule.min() >= 0.0);
        assert!(sol.joule.integral(&d.mesh) >= 0.0);
        for (dof, (p, pc)) in sol.phi.iter().zip(&sol.phi_cc).enumerate() {
            let shift = if d.potential.dof_subdomain(dof) == Subdomain::Cathode { 0.7 } else { 0.0 };
            assert_eq!(*p, pc + shift);
        }
        for (dof, v) in sol.phi_cc.iter().enumerate() {
            if d.potential.is_fixed(dof) {
                assert_eq!(*v, 0.0);
            }
        }
    }

    /// Dense Cholesky; `false` when a pivot is not positive.
    fn is_positive_definite(mut a: Vec<Vec<f64>>) -> bool {
        let n = a.len();
        for k in 0..n {
            let p = a[k][k];
            if !(p > 0.0) {
                return false;
            }
            let s = p.sqrt();
            for i in k..n {
                a[i][k] /= s;
            }
            for j in k + 1..n {
                for i in j..n {
                    a[i][j] -= a[i][k] * a[j][k];
                }
            }
        }
        true
    }

    #[test]
    fn symmetric_part_of_cross_form_is_positive_definite() {
        let spec = GeometrySpec::desk();
        let d = Discretization::new(&spec, Resolution::uniform(2, 3)).unwrap();
        let c = CoefficientSet::desk();
        let k = PhysicalConstants::default();
        let bd = constant_data(350.0);
        let lift = Liftings::new(&d, &bd, Default::default());
        let fz = Frozen::constant(&d, [0.2, 0.5], 350.0);
        let sys = assemble_tec(&d, &c, &k, fz.inputs(), &lift, &bd).unwrap();
        let a = sys.linear.to_dense();
        let n = a.len();
        // Congruence with the diagonal keeps the inertia and removes the
        // spread of scales between the blocks.
        let s: Vec<f64> = (0..n).map(|i| 1.0 / a[i][i].sqrt()).collect();
        let sym: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (a[i][j] + a[j][i]) * s[i] * s[j]).collect())
            .collect();
        assert!(is_positive_definite(sym));
    }
}
