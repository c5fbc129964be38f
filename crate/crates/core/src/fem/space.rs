//! Degree-of-freedom maps for scalar Q1 fields on subdomain unions.

use crate::fem::element::local_index;
use crate::geometry::{Facet, MultidomainMesh, Subdomain};

pub const NONE: usize = usize::MAX;

/// Scalar Q1 space.
///
/// The support is split into groups; nodes shared by two groups carry one
/// degree of freedom per group, so the field may jump across the group
/// interface. A single group gives a continuous space.
#[derive(Clone, Debug)]
pub struct Space {
    pub name: String,
    groups: Vec<Vec<Subdomain>>,
    cell_dofs: Vec<[usize; 4]>,
    dof_node: Vec<usize>,
    dof_group: Vec<usize>,
    dof_sub: Vec<Subdomain>,
    fixed: Vec<bool>,
    n_cells: usize,
    n_nodes: usize,
}

impl Space {
    pub fn continuous(mesh: &MultidomainMesh, name: &str, support: &[Subdomain]) -> Self {
        Self::broken(mesh, name, &[support])
    }

    pub fn broken(mesh: &MultidomainMesh, name: &str, groups: &[&[Subdomain]]) -> Self {
        let groups: Vec<Vec<Subdomain>> = groups.iter().map(|g| g.to_vec()).collect();
        let group_of = |s: Subdomain| groups.iter().position(|g| g.contains(&s));
        let n_nodes = mesh.n_nodes();
        let ng = groups.len();
        // touched[node * ng + g]: some cell of group g uses node.
        let mut touched = vec![false; n_nodes * ng];
        let mut touched_sub = vec![Subdomain::Fuel; n_nodes * ng];
        for c in &mesh.cells {
            if let Some(g) = group_of(c.subdomain) {
                for &n in &c.nodes {
                    touched[n * ng + g] = true;
                    touched_sub[n * ng + g] = c.subdomain;
                }
            }
        }
        let mut id = vec![NONE; n_nodes * ng];
        let mut dof_node = Vec::new();
        let mut dof_group = Vec::new();
        let mut dof_sub = Vec::new();
        for n in 0..n_nodes {
            for g in 0..ng {
                if touched[n * ng + g] {
                    id[n * ng + g] = dof_node.len();
                    dof_node.push(n);
                    dof_group.push(g);
                    dof_sub.push(touched_sub[n * ng + g]);
                }
            }
        }
        let cell_dofs = mesh
            .cells
            .iter()
            .map(|c| match group_of(c.subdomain) {
                Some(g) => c.nodes.map(|n| id[n * ng + g]),
                None => [NONE; 4],
            })
            .collect();
        let nd = dof_node.len();
        Space {
            name: name.to_string(),
            groups,
            cell_dofs,
            dof_node,
            dof_group,
            dof_sub,
            fixed: vec![false; nd],
            n_cells: mesh.n_cells(),
            n_nodes,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_node.len()
    }

    pub fn n_free(&self) -> usize {
        self.fixed.iter().filter(|f| !**f).count()
    }

    pub fn is_fixed(&self, dof: usize) -> bool {
        self.fixed[dof]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    pub fn dof_node(&self, dof: usize) -> usize {
        self.dof_node[dof]
    }

    pub fn dof_group(&self, dof: usize) -> usize {
        self.dof_group[dof]
    }

    /// A subdomain of the dof's group that contains its node.
    pub fn dof_subdomain(&self, dof: usize) -> Subdomain {
        self.dof_sub[dof]
    }

    pub fn groups(&self) -> &[Vec<Subdomain>] {
        &self.groups
    }

    pub fn supports(&self, sub: Subdomain) -> bool {
        self.groups.iter().any(|g| g.contains(&sub))
    }

    pub fn matches(&self, mesh: &MultidomainMesh) -> bool {
        self.n_cells == mesh.n_cells() && self.n_nodes == mesh.n_nodes()
    }

    pub fn cell_dofs(&self, cell: usize) -> Option<[usize; 4]> {
        let d = self.cell_dofs[cell];
        (d[0] != NONE).then_some(d)
    }

    /// The adjacent cell of `facet` that lies in the support, preferring
    /// `side` (0: left/below, 1: right/above).
    pub fn facet_cell(&self, facet: &Facet, side: Option<usize>) -> Option<usize> {
        let sides: &[usize] = match side {
            Some(0) => &[0],
            Some(_) => &[1],
            None => &[0, 1],
        };
        sides
            .iter()
            .filter_map(|&s| facet.cells[s])
            .find(|&c| self.cell_dofs[c][0] != NONE)
    }

    /// Degrees of freedom at the two facet nodes, taken from `cell`.
    pub fn facet_dofs(&self, mesh: &MultidomainMesh, facet: &Facet, cell: usize) -> Option<[usize; 2]> {
        let cd = self.cell_dofs(cell)?;
        let c = &mesh.cells[cell];
        let a = local_index(c, facet.nodes[0])?;
        let b = local_index(c, facet.nodes[1])?;
        Some([cd[a], cd[b]])
    }

    /// Fix every dof on facets selected by `pred`, from all adjacent cells in
    /// the support whose subdomain passes `side`.
    pub fn fix_facets(
        &mut self,
        mesh: &MultidomainMesh,
        pred: impl Fn(&Facet) -> bool,
        side: impl Fn(Subdomain) -> bool,
    ) {
        for f in mesh.facets.iter().filter(|f| pred(f)) {
            for c in f.cells.iter().flatten() {
                if !side(mesh.cells[*c].subdomain) {
                    continue;
                }
                if let Some(d) = self.facet_dofs(mesh, f, *c) {
                    self.fixed[d[0]] = true;
                    self.fixed[d[1]] = true;
                }
            }
        }
    }

    /// Nodal interpolant of `f(x, y, subdomain)`.
    pub fn interpolate(&self, mesh: &MultidomainMesh, f: impl Fn(f64, f64, Subdomain) -> f64) -> Vec<f64> {
        (0..self.n_dofs())
            .map(|d| {
                let [x, y] = mesh.nodes[self.dof_node[d]];
                f(x, y, self.dof_sub[d])
            })
            .collect()
    }

    /// Zero the fixed entries.
    pub fn project(&self, v: &mut [f64]) {
        for (x, f) in v.iter_mut().zip(&self.fixed) {
            if *f {
                *x = 0.0;
            }
        }
    }

    pub fn local_values(&self, cell: usize, v: &[f64]) -> Option<[f64; 4]> {
        self.cell_dofs(cell).map(|d| d.map(|i| v[i]))
    }
}

/// Numbering of the free dofs of several stacked spaces.
#[derive(Clone, Debug)]
pub struct BlockMap {
    pub offsets: Vec<usize>,
    index: Vec<Vec<usize>>,
    sizes: Vec<usize>,
    pub n: usize,
}

impl BlockMap {
    pub fn new(spaces: &[&Space]) -> Self {
        let mut offsets = Vec::new();
        let mut index = Vec::new();
        let mut sizes = Vec::new();
        let mut n = 0;
        for s in spaces {
            offsets.push(n);
            let mut idx = vec![NONE; s.n_dofs()];
            for (d, slot) in idx.iter_mut().enumerate() {
                if !s.is_fixed(d) {
                    *slot = n;
                    n += 1;
                }
            }
            index.push(idx);
            sizes.push(s.n_dofs());
        }
        BlockMap { offsets, index, sizes, n }
    }

    #[inline]
    pub fn global(&self, block: usize, dof: usize) -> usize {
        self.index[block][dof]
    }

    /// Full per-space vectors with zeros at fixed dofs.
    pub fn scatter(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.index
            .iter()
            .zip(&self.sizes)
            .map(|(idx, &m)| (0..m).map(|d| if idx[d] == NONE { 0.0 } else { x[idx[d]] }).collect())
            .collect()
    }

    pub fn gather(&self, fields: &[&[f64]]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for (b, f) in fields.iter().enumerate() {
            for (d, &g) in self.index[b].iter().enumerate() {
                if g != NONE {
                    x[g] = f[d];
                }
            }
        }
        x
    }

    pub fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        let end = self.offsets.get(block + 1).copied().unwrap_or(self.n);
        self.offsets[block]..end
    }
}
