//! Field, probe and table files.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so equal
//! runs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::discretization::Discretization;
use crate::error::Result;
use crate::fem::element::{shape, ElementTable};
use crate::fem::space::Space;
use crate::fixed_point::CellSolution;
use crate::tec::{QpField, QP_ORDER};

/// Physical fields of a finished run, each on its own space.
pub struct FieldBundle<'a> {
    pub disc: &'a Discretization,
    pub u: [&'a [f64]; 2],
    pub p: &'a [f64],
    pub rho: [&'a [f64]; 2],
    pub theta: &'a [f64],
    pub phi: &'a [f64],
    pub joule: &'a QpField,
}

impl<'a> FieldBundle<'a> {
    pub fn new(disc: &'a Discretization, sol: &'a CellSolution) -> Self {
        FieldBundle {
            disc,
            u: [&sol.flow.u[0], &sol.flow.u[1]],
            p: &sol.flow.p,
            rho: [&sol.tec.rho[0], &sol.tec.rho[1]],
            theta: &sol.tec.theta,
            phi: &sol.tec.phi,
            joule: &sol.tec.joule,
        }
    }

    fn scalars(&self) -> [(&'static str, &'a Space, &'a [f64]); 5] {
        let d = self.disc;
        [
            ("p", &d.pressure, self.p),
            ("rho_1", &d.state, self.rho[0]),
            ("rho_2", &d.state, self.rho[1]),
            ("theta", &d.state, self.theta),
            ("phi", &d.potential, self.phi),
        ]
    }
}

/// Corner values of `v` on cell `c`, zero where the space is absent.
fn corners(space: &Space, c: usize, v: &[f64]) -> [f64; 4] {
    space.local_values(c, v).unwrap_or([0.0; 4])
}

/// Legacy ASCII VTK, one quadrilateral per cell with its own four points
/// so that fields broken across interfaces stay broken.
pub fn fields_vtk(b: &FieldBundle) -> String {
    let mesh = &b.disc.mesh;
    let n = mesh.n_cells();
    let mut s = String::with_capacity(400 * n);
    s.push_str("# vtk DataFile Version 3.0\npemcell fields\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", 4 * n);
    for cell in &mesh.cells {
        for (x, y) in [
            (cell.x[0], cell.y[0]),
            (cell.x[1], cell.y[0]),
            (cell.x[1], cell.y[1]),
            (cell.x[0], cell.y[1]),
        ] {
            let _ = writeln!(s, "{x:e} {y:e} 0");
        }
    }
    let _ = writeln!(s, "CELLS {n} {}", 5 * n);
    for c in 0..n {
        let _ = writeln!(s, "4 {} {} {} {}", 4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3);
    }
    let _ = writeln!(s, "CELL_TYPES {n}");
    for _ in 0..n {
        s.push_str("9\n");
    }
    let _ = writeln!(s, "CELL_DATA {n}");
    s.push_str("SCALARS subdomain int 1\nLOOKUP_TABLE default\n");
    for cell in &mesh.cells {
        let _ = writeln!(s, "{}", cell.subdomain.index());
    }
    // Cell mean of the Joule heat.
    let table = ElementTable::new(QP_ORDER).expect("fixed order");
    s.push_str("SCALARS Q double 1\nLOOKUP_TABLE default\n");
    for (c, cell) in mesh.cells.iter().enumerate() {
        let cv = table.eval(cell);
        let area: f64 = cv.jw[..cv.nq].iter().sum();
        let q: f64 = (0..cv.nq).map(|k| cv.jw[k] * b.joule.at(c, k)).sum::<f64>() / area;
        let _ = writeln!(s, "{q:e}");
    }
    let _ = writeln!(s, "POINT_DATA {}", 4 * n);
    s.push_str("VECTORS u double\n");
    for c in 0..n {
        let ux = corners(&b.disc.ux, c, b.u[0]);
        let uy = corners(&b.disc.uy, c, b.u[1]);
        for k in 0..4 {
            let _ = writeln!(s, "{:e} {:e} 0", ux[k], uy[k]);
        }
    }
    for (name, space, v) in b.scalars() {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for c in 0..n {
            for x in corners(space, c, v) {
                let _ = writeln!(s, "{x:e}");
            }
        }
    }
    s
}

/// Fields along the horizontal line `y = fraction * L`, sampled at the
/// centre of every mesh column. Absent fields are left empty.
pub fn probes_csv(b: &FieldBundle, fraction: f64) -> String {
    let mesh = &b.disc.mesh;
    let nxt = mesh.xs.len() - 1;
    let y = fraction * mesh.spec.length;
    let nyt = mesh.ys.len() - 1;
    let j = (0..nyt).find(|&j| y <= mesh.ys[j + 1]).unwrap_or(nyt - 1);
    let mut s = String::from("x,y,subdomain,u_x,u_y,p,rho_1,rho_2,theta,phi\n");
    for i in 0..nxt {
        let c = j * nxt + i;
        let cell = &mesh.cells[c];
        let x = 0.5 * (cell.x[0] + cell.x[1]);
        let t = 2.0 * (y - cell.y[0]) / cell.hy() - 1.0;
        let phi = shape(0.0, t);
        let eval = |space: &Space, v: &[f64]| match space.local_values(c, v) {
            Some(l) => format!("{:e}", (0..4).map(|k| phi[k] * l[k]).sum::<f64>()),
            None => String::new(),
        };
        let _ = write!(s, "{x:e},{y:e},{:?}", cell.subdomain);
        let cols = [
            eval(&b.disc.ux, b.u[0]),
            eval(&b.disc.uy, b.u[1]),
            eval(&b.disc.pressure, b.p),
            eval(&b.disc.state, b.rho[0]),
            eval(&b.disc.state, b.rho[1]),
            eval(&b.disc.state, b.theta),
            eval(&b.disc.potential, b.phi),
        ];
        for col in cols {
            s.push(',');
            s.push_str(&col);
        }
        s.push('\n');
    }
    s
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}
