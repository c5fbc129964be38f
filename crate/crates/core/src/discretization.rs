//! The mesh together with every discrete space the solvers use, and the
//! liftings of the inlet/outlet data.

use serde::{Deserialize, Serialize};

use crate::coefficients::{BoundaryData, InletProfile};
use crate::error::Result;
use crate::fem::Space;
use crate::geometry::{build_mesh, Channel, FacetTag, GeometrySpec, MultidomainMesh, Resolution, Subdomain};

const FLUID: [Subdomain; 2] = [Subdomain::Fuel, Subdomain::Air];
const POROUS: [Subdomain; 3] = [Subdomain::Anode, Subdomain::Membrane, Subdomain::Cathode];

/// Mesh and spaces.
///
/// * `ux`, `uy`: velocity components on the channels; both vanish on inlet and
///   outlet, `ux` also vanishes on the outer channel walls.
/// * `pressure`: continuous on the porous domain, no constraints.
/// * `state`: continuous on the whole cell, vanishing on inlet and outlet;
///   densities and temperature.
/// * `potential`: one continuous piece per layer (anode, membrane, cathode),
///   vanishing on the current collectors and on the anode side of the
///   fuel-channel interface.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: MultidomainMesh,
    pub ux: Space,
    pub uy: Space,
    pub pressure: Space,
    pub state: Space,
    pub potential: Space,
}

impl Discretization {
    pub fn new(spec: &GeometrySpec, res: Resolution) -> Result<Self> {
        let mesh = build_mesh(spec, res)?;
        Ok(Self::on(mesh))
    }

    pub fn on(mesh: MultidomainMesh) -> Self {
        let in_out = |f: &crate::geometry::Facet| f.tag.is_inlet_or_outlet();
        let any = |_: Subdomain| true;

        let mut ux = Space::continuous(&mesh, "ux", &FLUID);
        ux.fix_facets(&mesh, |f| in_out(f) || (f.tag == FacetTag::Wall && f.vertical), |s| s.is_fluid());
        let mut uy = Space::continuous(&mesh, "uy", &FLUID);
        uy.fix_facets(&mesh, in_out, any);

        let pressure = Space::continuous(&mesh, "p", &POROUS);

        let mut state = Space::continuous(&mesh, "state", &Subdomain::ALL);
        state.fix_facets(&mesh, in_out, any);

        let mut potential = Space::broken(
            &mesh,
            "phi_cc",
            &[&[Subdomain::Anode], &[Subdomain::Membrane], &[Subdomain::Cathode]],
        );
        potential.fix_facets(&mesh, |f| matches!(f.tag, FacetTag::CurrentCollector(_)), any);
        potential.fix_facets(
            &mesh,
            |f| f.tag == FacetTag::FluidPorous(Channel::Fuel),
            |s| s == Subdomain::Anode,
        );

        Discretization {
            mesh,
            ux,
            uy,
            pressure,
            state,
            potential,
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.mesh.resolution
    }
}

/// How the inlet/outlet values of densities and temperature are extended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarLifting {
    /// `a + (b - a) s(y/L)` with the smoothstep `s(t) = 3t^2 - 2t^3`, whose
    /// derivative vanishes at both ends so the wall flux of the lifting is
    /// zero on the diffusion-layer ends.
    #[default]
    Smoothstep,
    /// `a + (b - a) y/L`.
    Linear,
}

impl ScalarLifting {
    pub fn profile(self, t: f64) -> f64 {
        match self {
            ScalarLifting::Smoothstep => t * t * (3.0 - 2.0 * t),
            ScalarLifting::Linear => t,
        }
    }
}

/// Nodal liftings `u_0`, `rho_{i,0}` and `theta_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Liftings {
    /// On the `ux` / `uy` spaces.
    pub u0: [Vec<f64>; 2],
    /// On the `state` space.
    pub rho0: [Vec<f64>; 2],
    pub theta0: Vec<f64>,
}

impl Liftings {
    pub fn new(disc: &Discretization, data: &BoundaryData, scalar: ScalarLifting) -> Self {
        let mesh = &disc.mesh;
        let spec = mesh.spec;
        let l = spec.length;
        let across = |x: f64, sub: Subdomain| {
            let (x0, x1) = spec.x_range(sub);
            ((x - x0) / (x1 - x0)).clamp(0.0, 1.0)
        };
        let tol = 1e-12 * spec.l_f;
        let shape = |x: f64, sub: Subdomain| {
            let s = across(x, sub);
            match data.profile {
                InletProfile::Plug => {
                    if s * spec.l_f <= tol || (1.0 - s) * spec.l_f <= tol {
                        0.0
                    } else {
                        1.0
                    }
                }
                InletProfile::Parabolic => 4.0 * s * (1.0 - s),
            }
        };
        let u0x = vec![0.0; disc.ux.n_dofs()];
        let u0y = disc.uy.interpolate(mesh, |x, _, sub| data.u_in * shape(x, sub));
        let lift = |a: f64, b: f64| {
            disc.state
                .interpolate(mesh, |_, y, _| a + (b - a) * scalar.profile(y / l))
        };
        Liftings {
            u0: [u0x, u0y],
            rho0: [
                lift(data.rho_in[0], data.rho_out[0]),
                lift(data.rho_in[1], data.rho_out[1]),
            ],
            theta0: lift(data.theta_in, data.theta_out),
        }
    }

    pub fn zero(disc: &Discretization) -> Self {
        let n = disc.state.n_dofs();
        Liftings {
            u0: [vec![0.0; disc.ux.n_dofs()], vec![0.0; disc.uy.n_dofs()]],
            rho0: [vec![0.0; n], vec![0.0; n]],
            theta0: vec![0.0; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::norms::{div_sq, Field};

    fn small() -> Discretization {
        let spec = GeometrySpec::new(1.0, 0.5, 0.25, 0.5, 2.0).unwrap();
        Discretization::new(&spec, Resolution::uniform(3, 4)).unwrap()
    }

    #[test]
    fn constraint_sets() {
        let d = small();
        let m = &d.mesh;
        for (dof, fixed) in d.ux.fixed_mask().iter().enumerate() {
            let [x, y] = m.nodes[d.ux.dof_node(dof)];
            let on_end = y == 0.0 || y == 2.0;
            let on_outer = x == 0.0 || (x - m.spec.width()).abs() < 1e-12;
            assert_eq!(*fixed, on_end || on_outer, "ux dof at ({x}, {y})");
        }
        for (dof, fixed) in d.uy.fixed_mask().iter().enumerate() {
            let [_, y] = m.nodes[d.uy.dof_node(dof)];
            assert_eq!(*fixed, y == 0.0 || y == 2.0);
        }
        assert_eq!(d.pressure.n_free(), d.pressure.n_dofs());
        // State: only channel ends are fixed, porous ends are walls.
        for (dof, fixed) in d.state.fixed_mask().iter().enumerate() {
            let n = d.state.dof_node(dof);
            let [x, y] = m.nodes[n];
            let in_channel = x <= 1.0 || x >= m.spec.width() - 1.0 - 1e-12;
            assert_eq!(*fixed, (y == 0.0 || y == 2.0) && in_channel, "state dof at ({x}, {y})");
        }
    }

    #[test]
    fn potential_gauge_is_on_anode_side() {
        let d = small();
        let m = &d.mesh;
        for dof in 0..d.potential.n_dofs() {
            let [x, y] = m.nodes[d.potential.dof_node(dof)];
            let sub = d.potential.dof_subdomain(dof);
            let expect = (sub == Subdomain::Anode && (x == 1.0 || y == 0.0 || y == 2.0))
                || (sub == Subdomain::Cathode && (y == 0.0 || y == 2.0));
            assert_eq!(d.potential.is_fixed(dof), expect, "{sub:?} at ({x}, {y})");
        }
    }

    #[test]
    fn plug_lifting_is_divergence_free_and_vanishes_on_walls() {
        let d = small();
        let mut bd = BoundaryData::zero();
        bd.u_in = 0.2;
        for profile in [InletProfile::Plug, InletProfile::Parabolic] {
            bd.profile = profile;
            let lift = Liftings::new(&d, &bd, ScalarLifting::Smoothstep);
            let dv = div_sq(
                &d.mesh,
                Field::new(&d.ux, &lift.u0[0]),
                Field::new(&d.uy, &lift.u0[1]),
                |s| s.is_fluid(),
            );
            assert!(dv < 1e-28);
            for f in d.mesh.facets.iter().filter(|f| f.tag.interface_normal().is_some() || f.tag == FacetTag::Wall) {
                if let Some(c) = d.uy.facet_cell(f, None) {
                    let dofs = d.uy.facet_dofs(&d.mesh, f, c).unwrap();
                    if f.vertical {
                        assert_eq!(lift.u0[1][dofs[0]], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn scalar_lifting_matches_end_values() {
        let d = small();
        let mut bd = BoundaryData::zero();
        bd.rho_in = [0.3, 0.1];
        bd.rho_out = [0.2, 0.4];
        bd.theta_in = 350.0;
        bd.theta_out = 340.0;
        let lift = Liftings::new(&d, &bd, ScalarLifting::Smoothstep);
        for dof in 0..d.state.n_dofs() {
            let [_, y] = d.mesh.nodes[d.state.dof_node(dof)];
            if y == 0.0 {
                assert_eq!(lift.rho0[0][dof], 0.3);
                assert_eq!(lift.theta0[dof], 350.0);
            }
            if y == 2.0 {
                assert_eq!(lift.rho0[1][dof], 0.4);
                assert_eq!(lift.theta0[dof], 340.0);
            }
        }
    }
}
