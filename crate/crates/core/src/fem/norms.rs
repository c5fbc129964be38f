//! Integral norms of discrete fields, evaluated with the 3x3 Gauss rule.

use crate::fem::element::ElementTable;
use crate::fem::space::Space;
use crate::geometry::{Facet, MultidomainMesh, Subdomain};

/// A discrete scalar field.
#[derive(Clone, Copy)]
pub struct Field<'a> {
    pub space: &'a Space,
    pub values: &'a [f64],
}

impl<'a> Field<'a> {
    pub fn new(space: &'a Space, values: &'a [f64]) -> Self {
        debug_assert_eq!(space.n_dofs(), values.len());
        Field { space, values }
    }
}

thread_local! {
    static TABLE: ElementTable = ElementTable::new(5).expect("order 5 is supported");
}

fn cell_loop(
    mesh: &MultidomainMesh,
    spaces: &[&Space],
    sel: &dyn Fn(Subdomain) -> bool,
    mut f: impl FnMut(usize, &crate::fem::element::CellValues, &[[usize; 4]]),
) {
    TABLE.with(|t| {
        let mut dofs = Vec::with_capacity(spaces.len());
        for (c, cell) in mesh.cells.iter().enumerate() {
            if !sel(cell.subdomain) {
                continue;
            }
            dofs.clear();
            for s in spaces {
                match s.cell_dofs(c) {
                    Some(d) => dofs.push(d),
                    None => break,
                }
            }
            if dofs.len() != spaces.len() {
                continue;
            }
            let cv = t.eval(cell);
            f(c, &cv, &dofs);
        }
    });
}

fn local(values: &[f64], d: &[usize; 4]) -> [f64; 4] {
    d.map(|i| values[i])
}

/// `int |v|^2` over the selected subdomains.
pub fn l2_sq(mesh: &MultidomainMesh, v: Field, sel: impl Fn(Subdomain) -> bool) -> f64 {
    lp_pow(mesh, v, 2.0, sel)
}

/// `int |v|^p`.
pub fn lp_pow(mesh: &MultidomainMesh, v: Field, p: f64, sel: impl Fn(Subdomain) -> bool) -> f64 {
    let mut s = 0.0;
    cell_loop(mesh, &[v.space], &sel, |_, cv, d| {
        let l = local(v.values, &d[0]);
        for q in 0..cv.nq {
            let x = cv.value(q, &l).abs();
            s += cv.jw[q] * if p == 2.0 { x * x } else if p == 4.0 { (x * x) * (x * x) } else { x.powf(p) };
        }
    });
    s
}

/// `int |grad v|^2`.
pub fn grad_sq(mesh: &MultidomainMesh, v: Field, sel: impl Fn(Subdomain) -> bool) -> f64 {
    grad_lp_pow(mesh, v, 2.0, sel)
}

/// `int |grad v|^p` with the Euclidean norm of the gradient.
pub fn grad_lp_pow(mesh: &MultidomainMesh, v: Field, p: f64, sel: impl Fn(Subdomain) -> bool) -> f64 {
    let mut s = 0.0;
    cell_loop(mesh, &[v.space], &sel, |_, cv, d| {
        let l = local(v.values, &d[0]);
        for q in 0..cv.nq {
            let g = cv.gradient(q, &l);
            let m2 = g[0] * g[0] + g[1] * g[1];
            s += cv.jw[q] * if p == 2.0 { m2 } else { m2.powf(0.5 * p) };
        }
    });
    s
}

/// `max |v|` over dofs in the selected subdomains (exact for Q1).
pub fn sup_abs(mesh: &MultidomainMesh, v: Field, sel: impl Fn(Subdomain) -> bool) -> f64 {
    let mut m = 0.0f64;
    for (c, cell) in mesh.cells.iter().enumerate() {
        if !sel(cell.subdomain) {
            continue;
        }
        if let Some(d) = v.space.cell_dofs(c) {
            for i in d {
                m = m.max(v.values[i].abs());
            }
        }
    }
    m
}

/// Trace values of `v` at the two facet nodes (first adjacent cell in the
/// support, or the given side).
fn trace(mesh: &MultidomainMesh, v: Field, f: &Facet, side: Option<usize>) -> Option<[f64; 2]> {
    let c = v.space.facet_cell(f, side)?;
    let d = v.space.facet_dofs(mesh, f, c)?;
    Some([v.values[d[0]], v.values[d[1]]])
}

/// `int_F |v|^2` over facets selected by `pred`.
pub fn facet_l2_sq(mesh: &MultidomainMesh, v: Field, pred: impl Fn(&Facet) -> bool) -> f64 {
    let mut s = 0.0;
    for f in mesh.facets.iter().filter(|f| pred(f)) {
        if let Some([a, b]) = trace(mesh, v, f, None) {
            s += f.length() * (a * a + a * b + b * b) / 3.0;
        }
    }
    s
}

/// `int_F |v|` over facets selected by `pred`, exact for the piecewise
/// linear trace.
pub fn facet_l1(mesh: &MultidomainMesh, v: Field, pred: impl Fn(&Facet) -> bool) -> f64 {
    let mut s = 0.0;
    for f in mesh.facets.iter().filter(|f| pred(f)) {
        if let Some([a, b]) = trace(mesh, v, f, None) {
            s += f.length() * abs_linear_mean(a, b);
        }
    }
    s
}

/// Mean of `|a + (b - a) t|` over `t` in `[0, 1]`.
pub fn abs_linear_mean(a: f64, b: f64) -> f64 {
    if a * b >= 0.0 {
        0.5 * (a.abs() + b.abs())
    } else {
        0.5 * (a * a + b * b) / (a.abs() + b.abs())
    }
}

/// `int |D u|^2` of the vector field `(ux, uy)`.
pub fn sym_grad_sq(mesh: &MultidomainMesh, ux: Field, uy: Field, sel: impl Fn(Subdomain) -> bool) -> f64 {
    let mut s = 0.0;
    cell_loop(mesh, &[ux.space, uy.space], &sel, |_, cv, d| {
        let lx = local(ux.values, &d[0]);
        let ly = local(uy.values, &d[1]);
        for q in 0..cv.nq {
            let gx = cv.gradient(q, &lx);
            let gy = cv.gradient(q, &ly);
            let off = 0.5 * (gx[1] + gy[0]);
            s += cv.jw[q] * (gx[0] * gx[0] + gy[1] * gy[1] + 2.0 * off * off);
        }
    });
    s
}

/// `int |grad u|^2 = int |grad u_x|^2 + |grad u_y|^2`.
pub fn vector_grad_sq(mesh: &MultidomainMesh, ux: Field, uy: Field, sel: impl Fn(Subdomain) -> bool + Copy) -> f64 {
    grad_sq(mesh, ux, sel) + grad_sq(mesh, uy, sel)
}

/// `int |div u|^2`.
pub fn div_sq(mesh: &MultidomainMesh, ux: Field, uy: Field, sel: impl Fn(Subdomain) -> bool) -> f64 {
    let mut s = 0.0;
    cell_loop(mesh, &[ux.space, uy.space], &sel, |_, cv, d| {
        let lx = local(ux.values, &d[0]);
        let ly = local(uy.values, &d[1]);
        for q in 0..cv.nq {
            let dv = cv.gradient(q, &lx)[0] + cv.gradient(q, &ly)[1];
            s += cv.jw[q] * dv * dv;
        }
    });
    s
}

/// `int_F |u_T|^2` on vertical facets, where the tangent is `e_y`.
pub fn tangential_sq(mesh: &MultidomainMesh, uy: Field, pred: impl Fn(&Facet) -> bool) -> f64 {
    facet_l2_sq(mesh, uy, |f| f.vertical && pred(f))
}

/// `int |v|^2 + |grad v|^2`, the squared H^1 norm.
pub fn h1_sq(mesh: &MultidomainMesh, v: Field, sel: impl Fn(Subdomain) -> bool + Copy) -> f64 {
    l2_sq(mesh, v, sel) + grad_sq(mesh, v, sel)
}

/// `int e v div w` over the selected subdomains.
pub fn trilinear_div(
    mesh: &MultidomainMesh,
    e: Field,
    v: Field,
    wx: Field,
    wy: Field,
    sel: impl Fn(Subdomain) -> bool,
) -> f64 {
    let mut s = 0.0;
    cell_loop(mesh, &[e.space, v.space, wx.space, wy.space], &sel, |_, cv, d| {
        let le = local(e.values, &d[0]);
        let lv = local(v.values, &d[1]);
        let lx = local(wx.values, &d[2]);
        let ly = local(wy.values, &d[3]);
        for q in 0..cv.nq {
            let dv = cv.gradient(q, &lx)[0] + cv.gradient(q, &ly)[1];
            s += cv.jw[q] * cv.value(q, &le) * cv.value(q, &lv) * dv;
        }
    });
    s
}

/// `int (w . grad v) v` over the selected subdomains.
pub fn transport(mesh: &MultidomainMesh, wx: Field, wy: Field, v: Field, sel: impl Fn(Subdomain) -> bool) -> f64 {
    let mut s = 0.0;
    cell_loop(mesh, &[wx.space, wy.space, v.space], &sel, |_, cv, d| {
        let lx = local(wx.values, &d[0]);
        let ly = local(wy.values, &d[1]);
        let lv = local(v.values, &d[2]);
        for q in 0..cv.nq {
            let g = cv.gradient(q, &lv);
            let w = [cv.value(q, &lx), cv.value(q, &ly)];
            s += cv.jw[q] * (w[0] * g[0] + w[1] * g[1]) * cv.value(q, &lv);
        }
    });
    s
}
