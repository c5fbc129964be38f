//! Five-strip cell layout, structured quad mesh and Gauss rules.
//!
//! The cell occupies `[0, W] x [0, L]` and is cut into vertical strips:
//! fuel channel, anode diffusion layer, membrane, cathode diffusion layer and
//! air channel. Gas enters the channels at `y = 0` and leaves at `y = L`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subdomain {
    Fuel,
    Anode,
    Membrane,
    Cathode,
    Air,
}

impl Subdomain {
    pub const ALL: [Subdomain; 5] = [
        Subdomain::Fuel,
        Subdomain::Anode,
        Subdomain::Membrane,
        Subdomain::Cathode,
        Subdomain::Air,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Gas channels (the fluid bidomain).
    pub fn is_fluid(self) -> bool {
        matches!(self, Subdomain::Fuel | Subdomain::Air)
    }

    /// Anode, membrane and cathode (the porous domain).
    pub fn is_porous(self) -> bool {
        !self.is_fluid()
    }

    /// Electron-conducting diffusion layers.
    pub fn is_gdl(self) -> bool {
        matches!(self, Subdomain::Anode | Subdomain::Cathode)
    }

    pub fn name(self) -> &'static str {
        match self {
            Subdomain::Fuel => "fuel",
            Subdomain::Anode => "anode",
            Subdomain::Membrane => "membrane",
            Subdomain::Cathode => "cathode",
            Subdomain::Air => "air",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Fuel,
    Air,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Electrode {
    Anode,
    Cathode,
}

/// Classification of a mesh edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FacetTag {
    Inlet(Channel),
    Outlet(Channel),
    /// Impermeable outer wall that is not a current collector.
    Wall,
    CurrentCollector(Electrode),
    /// Channel / diffusion-layer interface.
    FluidPorous(Channel),
    /// Diffusion-layer / membrane interface (catalyst layer).
    Catalyst(Electrode),
    Interior,
}

impl FacetTag {
    pub fn is_boundary(self) -> bool {
        matches!(
            self,
            FacetTag::Inlet(_) | FacetTag::Outlet(_) | FacetTag::Wall | FacetTag::CurrentCollector(_)
        )
    }

    /// Part of the wall set, current collectors included.
    pub fn is_wall(self) -> bool {
        matches!(self, FacetTag::Wall | FacetTag::CurrentCollector(_))
    }

    pub fn is_inlet_or_outlet(self) -> bool {
        matches!(self, FacetTag::Inlet(_) | FacetTag::Outlet(_))
    }

    /// Unit normal used by the interface integrals: `+e_x` on the fuel side
    /// and at the anode catalyst layer, `-e_x` on the air side and at the
    /// cathode catalyst layer.
    pub fn interface_normal(self) -> Option<f64> {
        match self {
            FacetTag::FluidPorous(Channel::Fuel) | FacetTag::Catalyst(Electrode::Anode) => Some(1.0),
            FacetTag::FluidPorous(Channel::Air) | FacetTag::Catalyst(Electrode::Cathode) => Some(-1.0),
            _ => None,
        }
    }
}

/// Which portions of the `y = 0` and `y = L` edges of the diffusion layers
/// act as current collectors. `x_fraction` is measured across each layer
/// from its channel side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectorLayout {
    pub x_fraction: [f64; 2],
    pub bottom: bool,
    pub top: bool,
}

impl Default for CollectorLayout {
    fn default() -> Self {
        CollectorLayout {
            x_fraction: [0.0, 1.0],
            bottom: true,
            top: true,
        }
    }
}

/// Strip widths and channel length, all in metres.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub l_f: f64,
    pub l_a: f64,
    pub l_m: f64,
    pub l_c: f64,
    /// Channel length `L`.
    pub length: f64,
    #[serde(default)]
    pub collector: CollectorLayout,
}

impl GeometrySpec {
    pub fn new(l_f: f64, l_a: f64, l_m: f64, l_c: f64, length: f64) -> Result<Self> {
        let spec = GeometrySpec {
            l_f,
            l_a,
            l_m,
            l_c,
            length,
            collector: CollectorLayout::default(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Channel 1 mm, diffusion layers 200 µm, membrane 100 µm, length 1 cm.
    pub fn desk() -> Self {
        GeometrySpec {
            l_f: 1e-3,
            l_a: 200e-6,
            l_m: 100e-6,
            l_c: 200e-6,
            length: 0.01,
            collector: CollectorLayout::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        for (name, v) in [
            ("l_f", self.l_f),
            ("l_a", self.l_a),
            ("l_m", self.l_m),
            ("l_c", self.l_c),
            ("length", self.length),
        ] {
            if !(v.is_finite() && v > 0.0) {
                bad.push(format!("{name} = {v} must be positive"));
            }
        }
        let [f0, f1] = self.collector.x_fraction;
        if !(0.0..=1.0).contains(&f0) || !(0.0..=1.0).contains(&f1) || f0 > f1 {
            bad.push(format!("collector x_fraction [{f0}, {f1}] must be a subinterval of [0, 1]"));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Geometry(bad.join("; ")))
        }
    }

    /// Strip widths in layout order.
    pub fn widths(&self) -> [f64; 5] {
        [self.l_f, self.l_a, self.l_m, self.l_c, self.l_f]
    }

    /// Total width; equals `2 l_f + 2 l_a + l_m` for symmetric layers.
    pub fn width(&self) -> f64 {
        2.0 * self.l_f + (self.l_a + self.l_c) + self.l_m
    }

    pub fn x_range(&self, sub: Subdomain) -> (f64, f64) {
        let w = self.widths();
        let x0: f64 = w[..sub.index()].iter().sum();
        (x0, x0 + w[sub.index()])
    }

    pub fn area(&self, sub: Subdomain) -> f64 {
        self.widths()[sub.index()] * self.length
    }
}

/// Cells per subdomain across the strip (`nx`, layout order) and along the
/// channel (`ny`, shared by all strips).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub nx: [usize; 5],
    pub ny: usize,
}

impl Resolution {
    pub fn uniform(nx: usize, ny: usize) -> Self {
        Resolution { nx: [nx; 5], ny }
    }

    pub fn refined(&self) -> Self {
        Resolution {
            nx: self.nx.map(|n| 2 * n),
            ny: 2 * self.ny,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    /// Node indices, counter-clockwise from the lower-left corner.
    pub nodes: [usize; 4],
    pub subdomain: Subdomain,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Cell {
    pub fn hx(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    pub fn hy(&self) -> f64 {
        self.y[1] - self.y[0]
    }

    pub fn area(&self) -> f64 {
        self.hx() * self.hy()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Facet {
    pub nodes: [usize; 2],
    pub tag: FacetTag,
    /// Vertical facets: `[left, right]`; horizontal: `[below, above]`.
    pub cells: [Option<usize>; 2],
    pub vertical: bool,
    /// Start and end points.
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Facet {
    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }

    /// The single adjacent cell of a boundary facet.
    pub fn boundary_cell(&self) -> Option<usize> {
        match self.cells {
            [Some(c), None] | [None, Some(c)] => Some(c),
            _ => None,
        }
    }
}

/// Conforming structured mesh of the five strips.
#[derive(Clone, Debug)]
pub struct MultidomainMesh {
    pub spec: GeometrySpec,
    pub resolution: Resolution,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub nodes: Vec<[f64; 2]>,
    pub cells: Vec<Cell>,
    pub facets: Vec<Facet>,
    column_sub: Vec<Subdomain>,
}

pub fn build_mesh(spec: &GeometrySpec, resolution: Resolution) -> Result<MultidomainMesh> {
    spec.validate()?;
    if resolution.ny == 0 || resolution.nx.contains(&0) {
        return Err(Error::Geometry(format!(
            "resolution {resolution:?} needs at least one cell per subdomain and direction"
        )));
    }
    let widths = spec.widths();
    let mut xs = vec![0.0];
    let mut column_sub = Vec::new();
    let mut x0 = 0.0;
    for (s, sub) in Subdomain::ALL.iter().enumerate() {
        let n = resolution.nx[s];
        let x1 = x0 + widths[s];
        for k in 1..=n {
            // Strip ends are placed exactly so interfaces coincide.
            xs.push(if k == n { x1 } else { x0 + widths[s] * k as f64 / n as f64 });
            column_sub.push(*sub);
        }
        x0 = x1;
    }
    let ny = resolution.ny;
    let ys: Vec<f64> = (0..=ny)
        .map(|j| if j == ny { spec.length } else { spec.length * j as f64 / ny as f64 })
        .collect();
    let nxt = xs.len() - 1;
    let node = |i: usize, j: usize| j * (nxt + 1) + i;

    let mut nodes = Vec::with_capacity((nxt + 1) * (ny + 1));
    for &y in &ys {
        for &x in &xs {
            nodes.push([x, y]);
        }
    }
    let mut cells = Vec::with_capacity(nxt * ny);
    for j in 0..ny {
        for i in 0..nxt {
            cells.push(Cell {
                nodes: [node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)],
                subdomain: column_sub[i],
                x: [xs[i], xs[i + 1]],
                y: [ys[j], ys[j + 1]],
            });
        }
    }
    let cell = |i: usize, j: usize| j * nxt + i;

    let mut facets = Vec::new();
    // Vertical facets.
    for j in 0..ny {
        for k in 0..=nxt {
            let left = (k > 0).then(|| cell(k - 1, j));
            let right = (k < nxt).then(|| cell(k, j));
            let tag = match (left.map(|_| column_sub[k - 1]), right.map(|_| column_sub[k])) {
                (None, Some(_)) | (Some(_), None) => FacetTag::Wall,
                (Some(l), Some(r)) if l == r => FacetTag::Interior,
                (Some(Subdomain::Fuel), Some(Subdomain::Anode)) => FacetTag::FluidPorous(Channel::Fuel),
                (Some(Subdomain::Anode), Some(Subdomain::Membrane)) => FacetTag::Catalyst(Electrode::Anode),
                (Some(Subdomain::Membrane), Some(Subdomain::Cathode)) => FacetTag::Catalyst(Electrode::Cathode),
                (Some(Subdomain::Cathode), Some(Subdomain::Air)) => FacetTag::FluidPorous(Channel::Air),
                other => unreachable!("strip order violated: {other:?}"),
            };
            facets.push(Facet {
                nodes: [node(k, j), node(k, j + 1)],
                tag,
                cells: [left, right],
                vertical: true,
                a: [xs[k], ys[j]],
                b: [xs[k], ys[j + 1]],
            });
        }
    }
    // Horizontal facets.
    for j in 0..=ny {
        for i in 0..nxt {
            let below = (j > 0).then(|| cell(i, j - 1));
            let above = (j < ny).then(|| cell(i, j));
            let sub = column_sub[i];
            let tag = if j > 0 && j < ny {
                FacetTag::Interior
            } else {
                let bottom = j == 0;
                match sub {
                    Subdomain::Fuel | Subdomain::Air => {
                        let ch = if sub == Subdomain::Fuel { Channel::Fuel } else { Channel::Air };
                        if bottom {
                            FacetTag::Inlet(ch)
                        } else {
                            FacetTag::Outlet(ch)
                        }
                    }
                    Subdomain::Anode | Subdomain::Cathode => {
                        let (sx0, sx1) = spec.x_range(sub);
                        let mid = 0.5 * (xs[i] + xs[i + 1]);
                        // Fraction measured from the channel side of the layer.
                        let rel = if sub == Subdomain::Anode {
                            (mid - sx0) / (sx1 - sx0)
                        } else {
                            (sx1 - mid) / (sx1 - sx0)
                        };
                        let lay = spec.collector;
                        let side = if bottom { lay.bottom } else { lay.top };
                        if side && rel >= lay.x_fraction[0] && rel <= lay.x_fraction[1] {
                            let e = if sub == Subdomain::Anode { Electrode::Anode } else { Electrode::Cathode };
                            FacetTag::CurrentCollector(e)
                        } else {
                            FacetTag::Wall
                        }
                    }
                    Subdomain::Membrane => FacetTag::Wall,
                }
            };
            facets.push(Facet {
                nodes: [node(i, j), node(i + 1, j)],
                tag,
                cells: [below, above],
                vertical: false,
                a: [xs[i], ys[j]],
                b: [xs[i + 1], ys[j]],
            });
        }
    }

    Ok(MultidomainMesh {
        spec: *spec,
        resolution,
        xs,
        ys,
        nodes,
        cells,
        facets,
        column_sub,
    })
}

impl MultidomainMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Number of cell columns across the whole width.
    pub fn nx_total(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.ys.len() - 1
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx_total() + 1) + i
    }

    pub fn column_subdomain(&self, i: usize) -> Subdomain {
        self.column_sub[i]
    }

    /// Subdomains owning a node (one for interior nodes, two on interfaces).
    pub fn node_subdomains(&self, node: usize) -> Vec<Subdomain> {
        let nxt = self.nx_total();
        let i = node % (nxt + 1);
        let mut subs = Vec::with_capacity(2);
        if i > 0 {
            subs.push(self.column_sub[i - 1]);
        }
        if i < nxt && !subs.contains(&self.column_sub[i]) {
            subs.push(self.column_sub[i]);
        }
        subs
    }

    pub fn cells_in(&self, sub: Subdomain) -> impl Iterator<Item = (usize, &Cell)> + '_ {
        self.cells.iter().enumerate().filter(move |(_, c)| c.subdomain == sub)
    }

    pub fn measure_where(&self, pred: impl Fn(FacetTag) -> bool) -> f64 {
        self.facets.iter().filter(|f| pred(f.tag)).map(Facet::length).sum()
    }

    pub fn area_where(&self, pred: impl Fn(Subdomain) -> bool) -> f64 {
        self.cells.iter().filter(|c| pred(c.subdomain)).map(Cell::area).sum()
    }

    pub fn count_where(&self, pred: impl Fn(FacetTag) -> bool) -> usize {
        self.facets.iter().filter(|f| pred(f.tag)).count()
    }
}

/// Tensor Gauss rule on `[-1, 1]^2` plus the matching rule on `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (0.6f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        _ => unreachable!(),
    }
}

/// Rule exact for polynomials of degree `order` in each variable.
pub fn quadrature_rule(order: usize) -> Result<QuadratureRule> {
    if !(1..=5).contains(&order) {
        return Err(Error::QuadratureOrder(order));
    }
    let n = (order + 2) / 2;
    let (p, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for (b, wb) in p.iter().zip(&w) {
        for (a, wa) in p.iter().zip(&w) {
            points.push([*a, *b]);
            weights.push(wa * wb);
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        edge_points: p,
        edge_weights: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_strips() {
        let spec = GeometrySpec::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let m = build_mesh(&spec, Resolution::uniform(1, 1)).unwrap();
        assert_eq!(m.n_cells(), 5);
        let area: f64 = m.cells.iter().map(Cell::area).sum();
        assert!((area - 5.0).abs() < 1e-12);
    }

    #[test]
    fn desk_width() {
        let spec = GeometrySpec::desk();
        assert!((spec.width() - 2.5e-3).abs() < 1e-18);
        assert_eq!(spec.width(), 2.0 * spec.l_f + 2.0 * spec.l_a + spec.l_m);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(GeometrySpec::new(0.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(GeometrySpec::new(1.0, -1.0, 1.0, 1.0, 1.0).is_err());
        let spec = GeometrySpec::desk();
        assert!(build_mesh(&spec, Resolution { nx: [1, 1, 0, 1, 1], ny: 2 }).is_err());
        assert!(build_mesh(&spec, Resolution::uniform(1, 0)).is_err());
    }

    #[test]
    fn catalyst_facets_match_membrane_rows() {
        let spec = GeometrySpec::desk();
        let res = Resolution { nx: [3, 2, 4, 2, 5], ny: 7 };
        let m = build_mesh(&spec, res).unwrap();
        let mut n_a = 0;
        let mut n_c = 0;
        for f in &m.facets {
            match f.tag {
                FacetTag::Catalyst(Electrode::Anode) => n_a += 1,
                FacetTag::Catalyst(Electrode::Cathode) => n_c += 1,
                _ => {}
            }
        }
        assert_eq!(n_a, 7);
        assert_eq!(n_c, 7);
    }

    #[test]
    fn interface_facets_are_vertical_and_boundary_is_tagged_once() {
        let m = build_mesh(&GeometrySpec::desk(), Resolution { nx: [2, 3, 1, 3, 2], ny: 5 }).unwrap();
        for f in &m.facets {
            if f.tag.interface_normal().is_some() {
                assert!(f.vertical);
                assert!(f.cells[0].is_some() && f.cells[1].is_some());
            }
            let n_adj = f.cells.iter().flatten().count();
            assert_eq!(f.tag.is_boundary(), n_adj == 1, "{f:?}");
        }
        // Edges of the global rectangle: each appears once.
        let nb = m.facets.iter().filter(|f| f.tag.is_boundary()).count();
        assert_eq!(nb, 2 * m.nx_total() + 2 * m.ny());
    }

    #[test]
    fn tagged_measures_are_refinement_invariant() {
        let spec = GeometrySpec::desk();
        let mut res = Resolution { nx: [2, 1, 1, 1, 2], ny: 3 };
        let l = spec.length;
        for _ in 0..3 {
            let m = build_mesh(&spec, res).unwrap();
            let ga = m.measure_where(|t| t == FacetTag::Catalyst(Electrode::Anode));
            let g = m.measure_where(|t| matches!(t, FacetTag::FluidPorous(_)));
            let gin = m.measure_where(|t| matches!(t, FacetTag::Inlet(_)));
            assert!((ga - l).abs() < 1e-15);
            assert!((g - 2.0 * l).abs() < 1e-15);
            assert!((gin - 2.0 * spec.l_f).abs() < 1e-15);
            res = res.refined();
        }
    }

    #[test]
    fn collector_subinterval() {
        let mut spec = GeometrySpec::desk();
        spec.collector = CollectorLayout {
            x_fraction: [0.5, 1.0],
            bottom: true,
            top: false,
        };
        let m = build_mesh(&spec, Resolution::uniform(4, 4)).unwrap();
        let cc = m.measure_where(|t| t == FacetTag::CurrentCollector(Electrode::Anode));
        assert!((cc - 0.5 * spec.l_a).abs() < 1e-15);
        let ccc = m.measure_where(|t| t == FacetTag::CurrentCollector(Electrode::Cathode));
        assert!((ccc - 0.5 * spec.l_c).abs() < 1e-15);
    }

    #[test]
    fn gauss_rules() {
        let r1 = quadrature_rule(1).unwrap();
        assert_eq!(r1.points, vec![[0.0, 0.0]]);
        assert_eq!(r1.weights, vec![4.0]);
        let r3 = quadrature_rule(3).unwrap();
        assert_eq!(r3.points.len(), 4);
        let a = 1.0 / 3f64.sqrt();
        assert!(r3.points.iter().all(|p| (p[0].abs() - a).abs() < 1e-15 && (p[1].abs() - a).abs() < 1e-15));
        let x2: f64 = r3.points.iter().zip(&r3.weights).map(|(p, w)| w * p[0] * p[0]).sum();
        assert!((x2 - 4.0 / 3.0).abs() < 1e-15);
        let x3: f64 = r3.edge_points.iter().zip(&r3.edge_weights).map(|(p, w)| w * p.powi(3)).sum();
        assert!(x3.abs() < 1e-15);
        assert!(quadrature_rule(0).is_err());
        assert!(quadrature_rule(6).is_err());
    }

    #[test]
    fn rules_are_exact_to_their_order() {
        for order in 1..=5 {
            let r = quadrature_rule(order).unwrap();
            for p in 0..=order {
                for q in 0..=order {
                    let num: f64 = r
                        .points
                        .iter()
                        .zip(&r.weights)
                        .map(|(x, w)| w * x[0].powi(p as i32) * x[1].powi(q as i32))
                        .sum();
                    let mono = |k: usize| if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                    assert!((num - mono(p) * mono(q)).abs() < 1e-14, "order {order}, x^{p} y^{q}");
                }
            }
        }
    }
}
