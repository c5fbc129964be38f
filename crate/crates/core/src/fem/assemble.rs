//! Generic assembly of the bilinear and linear forms used by the solvers.
//!
//! The solvers use specialised loops for speed; the routines here are the
//! reference implementation they are checked against, and what the
//! verification studies use.

use crate::error::{Error, Result};
use crate::fem::element::ElementTable;
use crate::fem::space::Space;
use crate::fem::sparse::{CsrMatrix, Triplets};
use crate::geometry::{Facet, MultidomainMesh, Subdomain};

/// Spatially varying coefficient `a(subdomain, [x, y])`.
pub type Coef<'a> = &'a dyn Fn(Subdomain, [f64; 2]) -> f64;

/// Integrand of a bilinear form `b(u, v)` with trial `u` (columns) and test
/// `v` (rows).
pub enum Integrand<'a> {
    /// `int a grad u . grad v`
    Stiffness(Coef<'a>),
    /// `int a u v`
    Mass(Coef<'a>),
    /// `int a d_j u d_i v` for derivative directions `trial = j`, `test = i`.
    Derivative { coef: Coef<'a>, trial: usize, test: usize },
    /// `int u w . grad v`
    Advection(&'a dyn Fn([f64; 2]) -> [f64; 2]),
    /// `int_F a u v` over facets selected by the predicate.
    FacetMass { facets: &'a dyn Fn(&Facet) -> bool, coef: Coef<'a> },
    /// `int_F a u v n_x` with the interface normal of each facet tag.
    FacetNormal { facets: &'a dyn Fn(&Facet) -> bool, coef: Coef<'a> },
}

fn check(mesh: &MultidomainMesh, spaces: &[&Space]) -> Result<()> {
    for s in spaces {
        if !s.matches(mesh) {
            return Err(Error::Dimension(format!("space `{}` was built on a different mesh", s.name)));
        }
    }
    Ok(())
}

/// Full (unconstrained) matrix of size `row.n_dofs() x col.n_dofs()`.
pub fn assemble_form(
    mesh: &MultidomainMesh,
    row: &Space,
    col: &Space,
    integrand: &Integrand,
    order: usize,
) -> Result<CsrMatrix> {
    check(mesh, &[row, col])?;
    let table = ElementTable::new(order)?;
    let mut t = Triplets::new(row.n_dofs(), col.n_dofs());
    match integrand {
        Integrand::FacetMass { facets, coef } | Integrand::FacetNormal { facets, coef } => {
            let normal = matches!(integrand, Integrand::FacetNormal { .. });
            for f in mesh.facets.iter().filter(|f| facets(f)) {
                let (Some(rc), Some(cc)) = (row.facet_cell(f, None), col.facet_cell(f, None)) else {
                    continue;
                };
                let rd = row.facet_dofs(mesh, f, rc).unwrap();
                let cd = col.facet_dofs(mesh, f, cc).unwrap();
                let n = if normal { f.tag.interface_normal().unwrap_or(0.0) } else { 1.0 };
                let ev = table.eval_edge(f);
                let sub = mesh.cells[rc].subdomain;
                for q in 0..ev.nq {
                    let w = ev.jw[q] * coef(sub, ev.xy[q]) * n;
                    for a in 0..2 {
                        for b in 0..2 {
                            t.push(rd[a], cd[b], w * ev.psi[q][a] * ev.psi[q][b]);
                        }
                    }
                }
            }
        }
        _ => {
            for (c, cell) in mesh.cells.iter().enumerate() {
                let (Some(rd), Some(cd)) = (row.cell_dofs(c), col.cell_dofs(c)) else {
                    continue;
                };
                let cv = table.eval(cell);
                let mut k = [[0.0; 4]; 4];
                for q in 0..cv.nq {
                    let g = &cv.grad[q];
                    let p = &cv.phi[q];
                    match integrand {
                        Integrand::Stiffness(a) => {
                            let w = cv.jw[q] * a(cell.subdomain, cv.xy[q]);
                            for i in 0..4 {
                                for j in 0..4 {
                                    k[i][j] += w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                                }
                            }
                        }
                        Integrand::Mass(a) => {
                            let w = cv.jw[q] * a(cell.subdomain, cv.xy[q]);
                            for i in 0..4 {
                                for j in 0..4 {
                                    k[i][j] += w * p[i] * p[j];
                                }
                            }
                        }
                        Integrand::Derivative { coef, trial, test } => {
                            let w = cv.jw[q] * coef(cell.subdomain, cv.xy[q]);
                            for i in 0..4 {
                                for j in 0..4 {
                                    k[i][j] += w * g[i][*test] * g[j][*trial];
                                }
                            }
                        }
                        Integrand::Advection(wf) => {
                            let wv = wf(cv.xy[q]);
                            for i in 0..4 {
                                let adv = wv[0] * g[i][0] + wv[1] * g[i][1];
                                for j in 0..4 {
                                    k[i][j] += cv.jw[q] * adv * p[j];
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                for i in 0..4 {
                    for j in 0..4 {
                        t.push(rd[i], cd[j], k[i][j]);
                    }
                }
            }
        }
    }
    Ok(t.to_csr())
}

/// `int f v` over the support of `space`.
pub fn assemble_load(mesh: &MultidomainMesh, space: &Space, f: Coef, order: usize) -> Result<Vec<f64>> {
    check(mesh, &[space])?;
    let table = ElementTable::new(order)?;
    let mut b = vec![0.0; space.n_dofs()];
    for (c, cell) in mesh.cells.iter().enumerate() {
        let Some(d) = space.cell_dofs(c) else { continue };
        let cv = table.eval(cell);
        for q in 0..cv.nq {
            let w = cv.jw[q] * f(cell.subdomain, cv.xy[q]);
            for a in 0..4 {
                b[d[a]] += w * cv.phi[q][a];
            }
        }
    }
    Ok(b)
}

/// `int (g_x d_x v + g_y d_y v)` over the support of `space`.
pub fn assemble_gradient_load(
    mesh: &MultidomainMesh,
    space: &Space,
    g: &dyn Fn(Subdomain, [f64; 2]) -> [f64; 2],
    order: usize,
) -> Result<Vec<f64>> {
    check(mesh, &[space])?;
    let table = ElementTable::new(order)?;
    let mut b = vec![0.0; space.n_dofs()];
    for (c, cell) in mesh.cells.iter().enumerate() {
        let Some(d) = space.cell_dofs(c) else { continue };
        let cv = table.eval(cell);
        for q in 0..cv.nq {
            let gv = g(cell.subdomain, cv.xy[q]);
            for a in 0..4 {
                b[d[a]] += cv.jw[q] * (gv[0] * cv.grad[q][a][0] + gv[1] * cv.grad[q][a][1]);
            }
        }
    }
    Ok(b)
}

/// `int_F g v` on facets selected by `facets`.
pub fn assemble_facet_load(
    mesh: &MultidomainMesh,
    space: &Space,
    facets: &dyn Fn(&Facet) -> bool,
    g: Coef,
    order: usize,
) -> Result<Vec<f64>> {
    check(mesh, &[space])?;
    let table = ElementTable::new(order)?;
    let mut b = vec![0.0; space.n_dofs()];
    for f in mesh.facets.iter().filter(|f| facets(f)) {
        let Some(c) = space.facet_cell(f, None) else { continue };
        let d = space.facet_dofs(mesh, f, c).unwrap();
        let ev = table.eval_edge(f);
        let sub = mesh.cells[c].subdomain;
        for q in 0..ev.nq {
            let w = ev.jw[q] * g(sub, ev.xy[q]);
            b[d[0]] += w * ev.psi[q][0];
            b[d[1]] += w * ev.psi[q][1];
        }
    }
    Ok(b)
}

/// Vector forms on a pair of component spaces, returned as a 2x2 block
/// array indexed `[test component][trial component]`.
pub enum VectorForm<'a> {
    /// `int a Du : Dv`
    SymmetricGradient(Coef<'a>),
    /// `int a div u div v`
    Divergence(Coef<'a>),
}

pub fn assemble_vector_form(
    mesh: &MultidomainMesh,
    vx: &Space,
    vy: &Space,
    form: &VectorForm,
    order: usize,
) -> Result<[[CsrMatrix; 2]; 2]> {
    let spaces = [vx, vy];
    let half;
    let coef: Coef = match form {
        VectorForm::SymmetricGradient(a) => {
            half = move |s: Subdomain, x: [f64; 2]| 0.5 * a(s, x);
            &half
        }
        VectorForm::Divergence(a) => *a,
    };
    let block = |i: usize, j: usize| -> Result<CsrMatrix> {
        match form {
            VectorForm::Divergence(a) => assemble_form(
                mesh,
                spaces[i],
                spaces[j],
                &Integrand::Derivative { coef: *a, trial: j, test: i },
                order,
            ),
            VectorForm::SymmetricGradient(a) => {
                // Du:Dv = sum_{ij} 1/2 (d_j u_i + d_i u_j) d_j v_i.
                if i == j {
                    let o = 1 - i;
                    let m1 = assemble_form(
                        mesh,
                        spaces[i],
                        spaces[j],
                        &Integrand::Derivative { coef: *a, trial: i, test: i },
                        order,
                    )?;
                    let m2 = assemble_form(
                        mesh,
                        spaces[i],
                        spaces[j],
                        &Integrand::Derivative { coef, trial: o, test: o },
                        order,
                    )?;
                    m1.add_scaled(&m2, 1.0)
                } else {
                    // Test v_i, trial u_j: 1/2 d_i u_j d_j v_i.
                    assemble_form(
                        mesh,
                        spaces[i],
                        spaces[j],
                        &Integrand::Derivative { coef, trial: i, test: j },
                        order,
                    )
                }
            }
        }
    };
    Ok([[block(0, 0)?, block(0, 1)?], [block(1, 0)?, block(1, 1)?]])
}
