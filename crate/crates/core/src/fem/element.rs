//! Bilinear (Q1) shape functions on axis-aligned rectangles.

use crate::error::Result;
use crate::geometry::{quadrature_rule, Cell, Facet, QuadratureRule};

pub const MAX_QP: usize = 9;

/// Shape function values at the four reference corners' ordering:
/// `(-1,-1), (1,-1), (1,1), (-1,1)`.
pub fn shape(s: f64, t: f64) -> [f64; 4] {
    [
        0.25 * (1.0 - s) * (1.0 - t),
        0.25 * (1.0 + s) * (1.0 - t),
        0.25 * (1.0 + s) * (1.0 + t),
        0.25 * (1.0 - s) * (1.0 + t),
    ]
}

pub fn shape_ds(t: f64) -> [f64; 4] {
    [-0.25 * (1.0 - t), 0.25 * (1.0 - t), 0.25 * (1.0 + t), -0.25 * (1.0 + t)]
}

pub fn shape_dt(s: f64) -> [f64; 4] {
    [-0.25 * (1.0 - s), -0.25 * (1.0 + s), 0.25 * (1.0 + s), 0.25 * (1.0 - s)]
}

/// Shape data tabulated at the points of one quadrature rule.
#[derive(Clone, Debug)]
pub struct ElementTable {
    pub rule: QuadratureRule,
    phi: Vec<[f64; 4]>,
    ds: Vec<[f64; 4]>,
    dt: Vec<[f64; 4]>,
}

/// Values, physical gradients, weights and coordinates at the quadrature
/// points of one cell.
#[derive(Clone, Copy, Debug)]
pub struct CellValues {
    pub nq: usize,
    pub phi: [[f64; 4]; MAX_QP],
    pub grad: [[[f64; 2]; 4]; MAX_QP],
    pub jw: [f64; MAX_QP],
    pub xy: [[f64; 2]; MAX_QP],
}

impl CellValues {
    pub fn value(&self, q: usize, v: &[f64; 4]) -> f64 {
        let p = &self.phi[q];
        p[0] * v[0] + p[1] * v[1] + p[2] * v[2] + p[3] * v[3]
    }

    pub fn gradient(&self, q: usize, v: &[f64; 4]) -> [f64; 2] {
        let g = &self.grad[q];
        let mut out = [0.0; 2];
        for a in 0..4 {
            out[0] += g[a][0] * v[a];
            out[1] += g[a][1] * v[a];
        }
        out
    }
}

/// Two-node trace data on a facet.
#[derive(Clone, Copy, Debug)]
pub struct EdgeValues {
    pub nq: usize,
    pub psi: [[f64; 2]; 3],
    pub jw: [f64; 3],
    pub xy: [[f64; 2]; 3],
}

impl EdgeValues {
    pub fn value(&self, q: usize, v: &[f64; 2]) -> f64 {
        self.psi[q][0] * v[0] + self.psi[q][1] * v[1]
    }
}

impl ElementTable {
    pub fn new(order: usize) -> Result<Self> {
        let rule = quadrature_rule(order)?;
        let phi = rule.points.iter().map(|p| shape(p[0], p[1])).collect();
        let ds = rule.points.iter().map(|p| shape_ds(p[1])).collect();
        let dt = rule.points.iter().map(|p| shape_dt(p[0])).collect();
        Ok(ElementTable { rule, phi, ds, dt })
    }

    pub fn nq(&self) -> usize {
        self.rule.weights.len()
    }

    pub fn eval(&self, cell: &Cell) -> CellValues {
        let (hx, hy) = (cell.hx(), cell.hy());
        let (sx, sy) = (2.0 / hx, 2.0 / hy);
        let det = 0.25 * hx * hy;
        let mut cv = CellValues {
            nq: self.nq(),
            phi: [[0.0; 4]; MAX_QP],
            grad: [[[0.0; 2]; 4]; MAX_QP],
            jw: [0.0; MAX_QP],
            xy: [[0.0; 2]; MAX_QP],
        };
        for q in 0..self.nq() {
            cv.phi[q] = self.phi[q];
            for a in 0..4 {
                cv.grad[q][a] = [self.ds[q][a] * sx, self.dt[q][a] * sy];
            }
            cv.jw[q] = self.rule.weights[q] * det;
            let p = self.rule.points[q];
            cv.xy[q] = [
                cell.x[0] + 0.5 * (p[0] + 1.0) * hx,
                cell.y[0] + 0.5 * (p[1] + 1.0) * hy,
            ];
        }
        cv
    }

    pub fn eval_edge(&self, facet: &Facet) -> EdgeValues {
        let len = facet.length();
        let mut ev = EdgeValues {
            nq: self.rule.edge_points.len(),
            psi: [[0.0; 2]; 3],
            jw: [0.0; 3],
            xy: [[0.0; 2]; 3],
        };
        for (q, (&s, &w)) in self.rule.edge_points.iter().zip(&self.rule.edge_weights).enumerate() {
            let l = 0.5 * (s + 1.0);
            ev.psi[q] = [1.0 - l, l];
            ev.jw[q] = 0.5 * w * len;
            ev.xy[q] = [
                facet.a[0] + l * (facet.b[0] - facet.a[0]),
                facet.a[1] + l * (facet.b[1] - facet.a[1]),
            ];
        }
        ev
    }
}

/// Local position of `node` within `cell`.
pub fn local_index(cell: &Cell, node: usize) -> Option<usize> {
    cell.nodes.iter().position(|&n| n == node)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Subdomain;

    fn unit() -> Cell {
        Cell {
            nodes: [0, 1, 2, 3],
            subdomain: Subdomain::Fuel,
            x: [0.0, 1.0],
            y: [0.0, 1.0],
        }
    }

    #[test]
    fn partition_of_unity() {
        let t = ElementTable::new(5).unwrap();
        let cv = t.eval(&Cell {
            x: [0.3, 0.8],
            y: [1.0, 3.0],
            ..unit()
        });
        for q in 0..cv.nq {
            let s: f64 = cv.phi[q].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            let g: [f64; 2] = cv.grad[q].iter().fold([0.0, 0.0], |a, g| [a[0] + g[0], a[1] + g[1]]);
            assert!(g[0].abs() < 1e-14 && g[1].abs() < 1e-14);
        }
        let area: f64 = cv.jw[..cv.nq].iter().sum();
        assert!((area - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_stiffness_oracle() {
        let t = ElementTable::new(3).unwrap();
        let cv = t.eval(&unit());
        let mut k = [[0.0; 4]; 4];
        for q in 0..cv.nq {
            for a in 0..4 {
                for b in 0..4 {
                    let ga = cv.grad[q][a];
                    let gb = cv.grad[q][b];
                    k[a][b] += cv.jw[q] * (ga[0] * gb[0] + ga[1] * gb[1]);
                }
            }
        }
        let expect = [
            [2.0, -0.5, -1.0, -0.5],
            [-0.5, 2.0, -0.5, -1.0],
            [-1.0, -0.5, 2.0, -0.5],
            [-0.5, -1.0, -0.5, 2.0],
        ];
        for a in 0..4 {
            for b in 0..4 {
                assert!((k[a][b] - expect[a][b] / 3.0).abs() < 1e-15, "{a}{b}: {}", k[a][b]);
            }
        }
    }
}
