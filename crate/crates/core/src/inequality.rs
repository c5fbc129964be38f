//! Randomised certification of the explicit-constant Poincaré, trace,
//! Sobolev and trilinear inequalities on discrete Q1 fields, and a discrete
//! estimate of the Korn constant of the channels.
//!
//! Every discrete field is a genuine `H^1` function, so a ratio above one
//! (beyond roundoff) is a bug in the constant, the constraint or the code.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::assemble::{assemble_form, assemble_vector_form, Integrand, VectorForm};
use crate::fem::eigen::{lanczos, LanczosOptions, Which};
use crate::fem::element::ElementTable;
use crate::fem::norms::{self, Field};
use crate::fem::solve::DirectSolver;
use crate::fem::space::Space;
use crate::fem::sparse::{CsrMatrix, Triplets};
use crate::discretization::Discretization;
use crate::geometry::{build_mesh, Electrode, FacetTag, GeometrySpec, MultidomainMesh, Resolution, Subdomain};

/// The certified inequalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseKind {
    /// `||v||_{Omega_f} <= L / sqrt 2 ||grad v||`, `v = 0` on the inlets.
    PoincareFluid,
    /// `||v||_{a u c} <= (2 ||v||^2_{Gamma_w} + L^2 ||grad v||^2)^{1/2}`.
    PoincareGdl,
    /// `||v||_{r, Omega_p} <= (l_a + l_m + l_c) / r^{1/r} ||grad v||_r`,
    /// `v = 0` on the anode channel interface.
    PoincarePorous { r: u32 },
    /// `int_{Gamma_i} v^2 <= l_i int_{Omega_i} |grad v|^2`.
    TraceSquare(Electrode),
    /// `int_{Gamma_i} |v| <= |Omega_i|^{1/2} ||grad v||`.
    TraceL1(Electrode),
    /// `||v||_4^2 <= sqrt(l_f L) / 2 ||grad v||^2`, `v = 0` on inlet and wall.
    SobolevCorner,
    /// `||v||_4^2 <= ||v||^2_{Gamma_w} + max(l_f, L) ||grad v||^2`.
    SobolevWall,
    /// `|int e v div u| <= sqrt(2L) (||e||^2_{Gamma_w} + l_f ||grad e||^2)^{1/2} ||grad v|| ||div u||`.
    TrilinearWall,
    /// As above with `sqrt L`, `L ||grad e||^2`, and `e = 0` on the inlets.
    TrilinearInlet,
    /// `|int (w . grad v) v| <= (1/2 + sqrt 2) sqrt L (||w_T||^2_Gamma + l_f ||grad w||^2)^{1/2} ||grad v||^2`.
    Transport,
}

/// Broad families, matching the three verification entry points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Poincare,
    Sobolev,
    Trilinear,
}

impl CaseKind {
    pub fn all() -> Vec<CaseKind> {
        use Electrode::*;
        vec![
            CaseKind::PoincareFluid,
            CaseKind::PoincareGdl,
            CaseKind::PoincarePorous { r: 2 },
            CaseKind::PoincarePorous { r: 4 },
            CaseKind::TraceSquare(Anode),
            CaseKind::TraceSquare(Cathode),
            CaseKind::TraceL1(Anode),
            CaseKind::TraceL1(Cathode),
            CaseKind::SobolevCorner,
            CaseKind::SobolevWall,
            CaseKind::TrilinearWall,
            CaseKind::TrilinearInlet,
            CaseKind::Transport,
        ]
    }

    pub fn family(self) -> Family {
        match self {
            CaseKind::SobolevCorner | CaseKind::SobolevWall => Family::Sobolev,
            CaseKind::TrilinearWall | CaseKind::TrilinearInlet | CaseKind::Transport => Family::Trilinear,
            _ => Family::Poincare,
        }
    }

    pub fn name(self) -> String {
        let el = |e: Electrode| match e {
            Electrode::Anode => "anode",
            Electrode::Cathode => "cathode",
        };
        match self {
            CaseKind::PoincareFluid => "poincare_fluid".into(),
            CaseKind::PoincareGdl => "poincare_gdl".into(),
            CaseKind::PoincarePorous { r } => format!("poincare_porous_r{r}"),
            CaseKind::TraceSquare(e) => format!("trace_sq_{}", el(e)),
            CaseKind::TraceL1(e) => format!("trace_l1_{}", el(e)),
            CaseKind::SobolevCorner => "sobolev_corner".into(),
            CaseKind::SobolevWall => "sobolev_wall".into(),
            CaseKind::TrilinearWall => "trilinear_wall".into(),
            CaseKind::TrilinearInlet => "trilinear_inlet".into(),
            CaseKind::Transport => "transport".into(),
        }
    }

    /// Traces imposed by the sampler.
    pub fn constraint(self) -> &'static str {
        match self {
            CaseKind::PoincareFluid | CaseKind::SobolevWall => "v = 0 on the inlets",
            CaseKind::PoincareGdl => "none",
            CaseKind::PoincarePorous { .. } => "v = 0 on the anode channel interface",
            CaseKind::TraceSquare(_) | CaseKind::TraceL1(_) => "v = 0 on the channel interface of the layer",
            CaseKind::SobolevCorner => "v = 0 on the inlets and the outer walls",
            CaseKind::TrilinearWall => "v = 0 on the inlets",
            CaseKind::TrilinearInlet => "e = v = 0 on the inlets",
            CaseKind::Transport => "v = 0 and w = u_in e_2 on the inlets, w_1 = 0 on the outer walls",
        }
    }
}

/// One certification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCase {
    pub name: String,
    pub kind: CaseKind,
    pub constraint: String,
    /// The leading constant of the right-hand side.
    pub constant: f64,
    pub random_samples: usize,
    pub adversarial_samples: usize,
    pub random_worst: f64,
    pub adversarial_worst: f64,
    pub worst_ratio: f64,
}

impl InequalityCase {
    pub fn holds(&self, slack: f64) -> bool {
        self.worst_ratio <= 1.0 + slack
    }
}

/// Fields of one sample. Scalar cases use `[v]`, the trilinear cases
/// `[e, v, u_x, u_y]` and the transport case `[w_1, w_2, v]`, all on the
/// space of the case.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub fields: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ratio {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl Ratio {
    fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 {
            0.0
        } else if rhs == 0.0 {
            f64::INFINITY
        } else {
            lhs / rhs
        };
        Ratio { lhs, rhs, ratio }
    }
}

fn quad(m: &CsrMatrix, v: &[f64]) -> f64 {
    m.bilinear(v, v)
}

fn facet_mask(mesh: &MultidomainMesh, space: &Space, pred: impl Fn(FacetTag) -> bool) -> Vec<bool> {
    let mut mask = vec![false; space.n_dofs()];
    for f in mesh.facets.iter().filter(|f| pred(f.tag)) {
        if let Some(c) = space.facet_cell(f, None) {
            if let Some(d) = space.facet_dofs(mesh, f, c) {
                mask[d[0]] = true;
                mask[d[1]] = true;
            }
        }
    }
    mask
}

fn or_mask(a: &[bool], b: &[bool]) -> Vec<bool> {
    a.iter().zip(b).map(|(x, y)| *x || *y).collect()
}

fn free_indices(mask: &[bool]) -> Vec<usize> {
    (0..mask.len()).filter(|&i| !mask[i]).collect()
}

fn scatter(n: usize, idx: &[usize], x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (k, &i) in idx.iter().enumerate() {
        out[i] = x[k];
    }
    out
}

fn gather(idx: &[usize], x: &[f64]) -> Vec<f64> {
    idx.iter().map(|&i| x[i]).collect()
}

fn electrode_index(e: Electrode) -> usize {
    match e {
        Electrode::Anode => 0,
        Electrode::Cathode => 1,
    }
}

/// Mesh, spaces, constraint masks and Gram matrices shared by all cases.
pub struct InequalityLab {
    pub mesh: MultidomainMesh,
    fluid: Space,
    gdl: Space,
    porous: Space,
    electrode: [Space; 2],
    fluid_inlet: Vec<bool>,
    fluid_corner: Vec<bool>,
    porous_gamma: Vec<bool>,
    electrode_gamma: [Vec<bool>; 2],
    fluid_m: CsrMatrix,
    fluid_k: CsrMatrix,
    /// Outer channel walls.
    fluid_mw: CsrMatrix,
    /// Channel / diffusion-layer interfaces.
    fluid_mg: CsrMatrix,
    fluid_div: [[CsrMatrix; 2]; 2],
    gdl_m: CsrMatrix,
    gdl_k: CsrMatrix,
    gdl_mw: CsrMatrix,
    porous_m: CsrMatrix,
    porous_k: CsrMatrix,
    electrode_k: [CsrMatrix; 2],
    electrode_mcat: [CsrMatrix; 2],
}

impl InequalityLab {
    pub fn new(spec: &GeometrySpec, res: Resolution) -> Result<Self> {
        Self::on(build_mesh(spec, res)?)
    }

    pub fn on(mesh: MultidomainMesh) -> Result<Self> {
        use Subdomain::*;
        let fluid = Space::continuous(&mesh, "fluid", &[Fuel, Air]);
        let gdl = Space::broken(&mesh, "gdl", &[&[Anode], &[Cathode]]);
        let porous = Space::continuous(&mesh, "porous", &[Anode, Membrane, Cathode]);
        let electrode = [
            Space::continuous(&mesh, "anode", &[Anode]),
            Space::continuous(&mesh, "cathode", &[Cathode]),
        ];
        let inlet = |t: FacetTag| matches!(t, FacetTag::Inlet(_));
        let outer = |f: &crate::geometry::Facet| f.vertical && f.tag == FacetTag::Wall;
        let fluid_inlet = facet_mask(&mesh, &fluid, inlet);
        let mut wall = vec![false; fluid.n_dofs()];
        for f in mesh.facets.iter().filter(|f| outer(f)) {
            if let Some(c) = fluid.facet_cell(f, None) {
                for d in fluid.facet_dofs(&mesh, f, c).into_iter().flatten() {
                    wall[d] = true;
                }
            }
        }
        let fluid_corner = or_mask(&fluid_inlet, &wall);
        let porous_gamma = facet_mask(&mesh, &porous, |t| {
            t == FacetTag::FluidPorous(crate::geometry::Channel::Fuel)
        });
        let electrode_gamma = [
            facet_mask(&mesh, &electrode[0], |t| matches!(t, FacetTag::FluidPorous(_))),
            facet_mask(&mesh, &electrode[1], |t| matches!(t, FacetTag::FluidPorous(_))),
        ];

        let one = |_: Subdomain, _: [f64; 2]| 1.0;
        let mass = |s: &Space| assemble_form(&mesh, s, s, &Integrand::Mass(&one), 3);
        let stiff = |s: &Space| assemble_form(&mesh, s, s, &Integrand::Stiffness(&one), 3);
        let facet_mass = |s: &Space, pred: &dyn Fn(&crate::geometry::Facet) -> bool| {
            assemble_form(
                &mesh,
                s,
                s,
                &Integrand::FacetMass {
                    facets: pred,
                    coef: &one,
                },
                3,
            )
        };
        let gdl_wall = |f: &crate::geometry::Facet| {
            !f.vertical
                && f.tag.is_wall()
                && f.cells.iter().flatten().any(|&c| mesh.cells[c].subdomain.is_gdl())
        };
        let fluid_mw = facet_mass(&fluid, &outer)?;
        let fluid_mg = facet_mass(&fluid, &|f| matches!(f.tag, FacetTag::FluidPorous(_)))?;
        let fluid_div = assemble_vector_form(&mesh, &fluid, &fluid, &VectorForm::Divergence(&one), 3)?;
        let cat = |e: Electrode| move |f: &crate::geometry::Facet| f.tag == FacetTag::Catalyst(e);
        Ok(InequalityLab {
            fluid_m: mass(&fluid)?,
            fluid_k: stiff(&fluid)?,
            fluid_mw,
            fluid_mg,
            fluid_div,
            gdl_m: mass(&gdl)?,
            gdl_k: stiff(&gdl)?,
            gdl_mw: facet_mass(&gdl, &gdl_wall)?,
            porous_m: mass(&porous)?,
            porous_k: stiff(&porous)?,
            electrode_k: [stiff(&electrode[0])?, stiff(&electrode[1])?],
            electrode_mcat: [
                facet_mass(&electrode[0], &cat(Electrode::Anode))?,
                facet_mass(&electrode[1], &cat(Electrode::Cathode))?,
            ],
            fluid,
            gdl,
            porous,
            electrode,
            fluid_inlet,
            fluid_corner,
            porous_gamma,
            electrode_gamma,
            mesh,
        })
    }

    fn spec(&self) -> &GeometrySpec {
        &self.mesh.spec
    }

    /// Leading constant of the right-hand side.
    pub fn constant(&self, case: CaseKind) -> f64 {
        let s = self.spec();
        let (l, lf) = (s.length, s.l_f);
        match case {
            CaseKind::PoincareFluid => l / 2f64.sqrt(),
            CaseKind::PoincareGdl => 2.0,
            CaseKind::PoincarePorous { r } => (s.l_a + s.l_m + s.l_c) / (r as f64).powf(1.0 / r as f64),
            CaseKind::TraceSquare(e) => self.layer_width(e),
            CaseKind::TraceL1(e) => (self.layer_width(e) * l).sqrt(),
            CaseKind::SobolevCorner => (lf * l).sqrt() / 2.0,
            CaseKind::SobolevWall => lf.max(l),
            CaseKind::TrilinearWall => (2.0 * l).sqrt(),
            CaseKind::TrilinearInlet => l.sqrt(),
            CaseKind::Transport => (0.5 + 2f64.sqrt()) * l.sqrt(),
        }
    }

    fn layer_width(&self, e: Electrode) -> f64 {
        match e {
            Electrode::Anode => self.spec().l_a,
            Electrode::Cathode => self.spec().l_c,
        }
    }

    /// Space of each field of a sample.
    pub fn spaces(&self, case: CaseKind) -> Vec<&Space> {
        match case {
            CaseKind::PoincareFluid | CaseKind::SobolevCorner | CaseKind::SobolevWall => vec![&self.fluid],
            CaseKind::PoincareGdl => vec![&self.gdl],
            CaseKind::PoincarePorous { .. } => vec![&self.porous],
            CaseKind::TraceSquare(e) | CaseKind::TraceL1(e) => vec![&self.electrode[electrode_index(e)]],
            CaseKind::TrilinearWall | CaseKind::TrilinearInlet => vec![&self.fluid; 4],
            CaseKind::Transport => vec![&self.fluid; 3],
        }
    }

    /// Constrained dofs of each field of a sample.
    pub fn masks(&self, case: CaseKind) -> Vec<Vec<bool>> {
        let none = |s: &Space| vec![false; s.n_dofs()];
        match case {
            CaseKind::PoincareFluid | CaseKind::SobolevWall => vec![self.fluid_inlet.clone()],
            CaseKind::SobolevCorner => vec![self.fluid_corner.clone()],
            CaseKind::PoincareGdl => vec![none(&self.gdl)],
            CaseKind::PoincarePorous { .. } => vec![self.porous_gamma.clone()],
            CaseKind::TraceSquare(e) | CaseKind::TraceL1(e) => vec![self.electrode_gamma[electrode_index(e)].clone()],
            CaseKind::TrilinearWall => vec![
                none(&self.fluid),
                self.fluid_inlet.clone(),
                none(&self.fluid),
                none(&self.fluid),
            ],
            CaseKind::TrilinearInlet => vec![
                self.fluid_inlet.clone(),
                self.fluid_inlet.clone(),
                none(&self.fluid),
                none(&self.fluid),
            ],
            CaseKind::Transport => vec![
                self.fluid_corner.clone(),
                self.fluid_inlet.clone(),
                self.fluid_inlet.clone(),
            ],
        }
    }

    /// Check that a sample satisfies the constraints of `case`. The second
    /// transport field may carry a constant inlet value.
    pub fn check_sample(&self, case: CaseKind, s: &Sample) -> Result<()> {
        let spaces = self.spaces(case);
        let masks = self.masks(case);
        if s.fields.len() != spaces.len() || s.fields.iter().zip(&spaces).any(|(f, sp)| f.len() != sp.n_dofs()) {
            return Err(Error::Dimension(format!("sample does not fit case {}", case.name())));
        }
        for (k, (f, m)) in s.fields.iter().zip(&masks).enumerate() {
            let inlet_value = (case == CaseKind::Transport && k == 1)
                .then(|| f.iter().zip(m).find(|(_, b)| **b).map(|(v, _)| *v))
                .flatten();
            let want = inlet_value.unwrap_or(0.0);
            if f.iter().zip(m).any(|(v, b)| *b && *v != want) {
                return Err(Error::Degenerate(format!(
                    "sample violates the constraint of case {} ({})",
                    case.name(),
                    case.constraint()
                )));
            }
        }
        Ok(())
    }

    /// Both sides of the inequality on one sample.
    pub fn ratio(&self, case: CaseKind, s: &Sample) -> Ratio {
        let sp = self.spec();
        let (l, lf) = (sp.length, sp.l_f);
        let c = self.constant(case);
        let f = &s.fields;
        fn fl<'a>(s: &'a Space, x: &'a [f64]) -> Field<'a> {
            Field::new(s, x)
        }
        let sf = &self.fluid;
        let all = |_: Subdomain| true;
        match case {
            CaseKind::PoincareFluid => Ratio::new(quad(&self.fluid_m, &f[0]).sqrt(), c * quad(&self.fluid_k, &f[0]).sqrt()),
            CaseKind::PoincareGdl => Ratio::new(
                quad(&self.gdl_m, &f[0]).sqrt(),
                (c * quad(&self.gdl_mw, &f[0]) + l * l * quad(&self.gdl_k, &f[0])).sqrt(),
            ),
            CaseKind::PoincarePorous { r } => {
                if r == 2 {
                    Ratio::new(quad(&self.porous_m, &f[0]).sqrt(), c * quad(&self.porous_k, &f[0]).sqrt())
                } else {
                    let v = Field::new(&self.porous, &f[0]);
                    let p = r as f64;
                    Ratio::new(
                        norms::lp_pow(&self.mesh, v, p, all).powf(1.0 / p),
                        c * norms::grad_lp_pow(&self.mesh, v, p, all).powf(1.0 / p),
                    )
                }
            }
            CaseKind::TraceSquare(e) => {
                let i = electrode_index(e);
                Ratio::new(quad(&self.electrode_mcat[i], &f[0]), c * quad(&self.electrode_k[i], &f[0]))
            }
            CaseKind::TraceL1(e) => {
                let i = electrode_index(e);
                let v = Field::new(&self.electrode[i], &f[0]);
                let lhs = norms::facet_l1(&self.mesh, v, |fc| fc.tag == FacetTag::Catalyst(e));
                Ratio::new(lhs, c * quad(&self.electrode_k[i], &f[0]).sqrt())
            }
            CaseKind::SobolevCorner => Ratio::new(
                norms::lp_pow(&self.mesh, fl(sf, &f[0]), 4.0, all).sqrt(),
                c * quad(&self.fluid_k, &f[0]),
            ),
            CaseKind::SobolevWall => Ratio::new(
                norms::lp_pow(&self.mesh, fl(sf, &f[0]), 4.0, all).sqrt(),
                quad(&self.fluid_mw, &f[0]) + c * quad(&self.fluid_k, &f[0]),
            ),
            CaseKind::TrilinearWall | CaseKind::TrilinearInlet => {
                let (e, v, ux, uy) = (&f[0], &f[1], &f[2], &f[3]);
                let lhs = norms::trilinear_div(&self.mesh, fl(sf, e), fl(sf, v), fl(sf, ux), fl(sf, uy), all).abs();
                let weight = if case == CaseKind::TrilinearWall { lf } else { l };
                let e_norm = (quad(&self.fluid_mw, e) + weight * quad(&self.fluid_k, e)).sqrt();
                let div = norms::div_sq(&self.mesh, fl(sf, ux), fl(sf, uy), all).sqrt();
                Ratio::new(lhs, c * e_norm * quad(&self.fluid_k, v).sqrt() * div)
            }
            CaseKind::Transport => {
                let (w1, w2, v) = (&f[0], &f[1], &f[2]);
                let lhs = norms::transport(&self.mesh, fl(sf, w1), fl(sf, w2), fl(sf, v), all).abs();
                let w_norm = (quad(&self.fluid_mg, w2) + lf * (quad(&self.fluid_k, w1) + quad(&self.fluid_k, w2))).sqrt();
                Ratio::new(lhs, c * w_norm * quad(&self.fluid_k, v))
            }
        }
    }

    /// I.i.d. normal nodal values (`smooth = false`) or a random
    /// low-frequency trigonometric field, with the constrained dofs zeroed
    /// and a random overall magnitude.
    pub fn random_sample(&self, case: CaseKind, rng: &mut ChaCha8Rng, smooth: bool) -> Sample {
        let spaces = self.spaces(case);
        let masks = self.masks(case);
        let sp = self.spec();
        let (w, l) = (sp.width(), sp.length);
        let mut fields = Vec::with_capacity(spaces.len());
        for (k, (space, mask)) in spaces.iter().zip(&masks).enumerate() {
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let mut v: Vec<f64> = if smooth {
                let mut modes = Vec::new();
                for a in 0..4 {
                    for b in 0..4 {
                        let amp: f64 = rng.sample::<f64, _>(StandardNormal) / (1.0 + (a + b) as f64);
                        let px: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        let py: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                        modes.push((a as f64, b as f64, amp, px, py));
                    }
                }
                space.interpolate(&self.mesh, |x, y, _| {
                    modes
                        .iter()
                        .map(|(a, b, amp, px, py)| {
                            amp * (a * std::f64::consts::PI * x / w + px).cos() * (b * std::f64::consts::PI * y / l + py).cos()
                        })
                        .sum()
                })
            } else {
                (0..space.n_dofs()).map(|_| rng.sample(StandardNormal)).collect()
            };
            let inlet_value = if case == CaseKind::Transport && k == 1 {
                rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            for (x, m) in v.iter_mut().zip(mask) {
                *x = if *m { inlet_value } else { *x * scale };
            }
            if inlet_value != 0.0 {
                for (x, m) in v.iter_mut().zip(mask) {
                    if *m {
                        *x = inlet_value * scale;
                    }
                }
            }
            fields.push(v);
        }
        Sample { fields }
    }

    /// Maximiser of `x^T A x / x^T B x` over the dofs left free by `mask`.
    fn pencil_max(&self, a: &CsrMatrix, b: &CsrMatrix, mask: &[bool], start: &[f64], which: Which) -> Result<(f64, Vec<f64>)> {
        let idx = free_indices(mask);
        let ar = a.restrict(&idx, &idx);
        let br = b.restrict(&idx, &idx);
        let opts = LanczosOptions {
            max_steps: 150,
            tol: 1e-9,
        };
        let p = match lanczos(&ar, &br, &gather(&idx, start), which, &opts) {
            Ok(p) => p,
            // An unconverged Ritz vector is still a useful probe.
            Err(Error::EigenStagnation(_)) => lanczos(
                &ar,
                &br,
                &gather(&idx, start),
                which,
                &LanczosOptions {
                    tol: f64::INFINITY,
                    ..opts
                },
            )?,
            Err(e) => return Err(e),
        };
        Ok((p.value, scatter(a.n_rows, &idx, &p.vector)))
    }

    fn smooth_start(&self, space: &Space, mask: &[bool], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..space.n_dofs()).map(|_| 1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        for (x, m) in v.iter_mut().zip(mask) {
            if *m {
                *x = 0.0;
            }
        }
        v
    }

    /// Distance to the outer wall of the channel containing `x`.
    fn wall_distance(&self, x: f64, sub: Subdomain) -> f64 {
        if sub == Subdomain::Air {
            self.spec().width() - x
        } else {
            x
        }
    }

    /// Closed-form and eigenproblem-based adversarial samples.
    pub fn adversarial(&self, case: CaseKind, seed: u64) -> Result<Vec<Sample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ad5e);
        let sp = *self.spec();
        let (l, lf) = (sp.length, sp.l_f);
        let one = |v: Vec<f64>| Sample { fields: vec![v] };
        let fluid_y = self.fluid.interpolate(&self.mesh, |_, y, _| y);
        let corner = self.fluid.interpolate(&self.mesh, |x, y, s| self.wall_distance(x, s) * y);
        let mut out = Vec::new();
        match case {
            CaseKind::PoincareFluid => {
                out.push(one(fluid_y.clone()));
                let start = self.smooth_start(&self.fluid, &self.fluid_inlet, &mut rng);
                let (_, v) = self.pencil_max(&self.fluid_m, &self.fluid_k, &self.fluid_inlet, &start, Which::Largest)?;
                out.push(one(v));
            }
            CaseKind::PoincareGdl => {
                out.push(one(vec![1.0; self.gdl.n_dofs()]));
                let b = self.gdl_mw.add_scaled(&self.gdl_k, l * l / 2.0)?;
                let mask = vec![false; self.gdl.n_dofs()];
                let start = self.smooth_start(&self.gdl, &mask, &mut rng);
                let (_, v) = self.pencil_max(&self.gdl_m, &b, &mask, &start, Which::Largest)?;
                out.push(one(v));
            }
            CaseKind::PoincarePorous { .. } => {
                out.push(one(self.porous.interpolate(&self.mesh, |x, _, _| x - lf)));
                let start = self.smooth_start(&self.porous, &self.porous_gamma, &mut rng);
                let (_, v) = self.pencil_max(&self.porous_m, &self.porous_k, &self.porous_gamma, &start, Which::Largest)?;
                out.push(one(v));
            }
            CaseKind::TraceSquare(e) | CaseKind::TraceL1(e) => {
                let i = electrode_index(e);
                let (x0, x1) = sp.x_range(if i == 0 { Subdomain::Anode } else { Subdomain::Cathode });
                out.push(one(self.electrode[i].interpolate(&self.mesh, |x, _, _| {
                    if i == 0 {
                        x - x0
                    } else {
                        x1 - x
                    }
                })));
                let mask = &self.electrode_gamma[i];
                let start = self.smooth_start(&self.electrode[i], mask, &mut rng);
                // Rescaled trace mass keeps the pencil well conditioned.
                let (_, v) = self.pencil_max(&self.electrode_mcat[i], &self.electrode_k[i], mask, &start, Which::Largest)?;
                out.push(one(v));
            }
            CaseKind::SobolevCorner | CaseKind::SobolevWall => {
                let (mask, b) = if case == CaseKind::SobolevCorner {
                    (&self.fluid_corner, self.fluid_k.clone())
                } else {
                    (&self.fluid_inlet, self.fluid_mw.add_scaled(&self.fluid_k, lf.max(l))?)
                };
                if case == CaseKind::SobolevCorner {
                    out.push(one(corner.clone()));
                } else {
                    out.push(one(fluid_y.clone()));
                }
                let start = self.smooth_start(&self.fluid, mask, &mut rng);
                let (_, v0) = self.pencil_max(&self.fluid_m, &b, mask, &start, Which::Largest)?;
                for s in self.cubic_ascent(&b, mask, v0, 12)? {
                    out.push(one(s));
                }
            }
            CaseKind::TrilinearWall | CaseKind::TrilinearInlet => {
                let starts = [
                    (
                        if case == CaseKind::TrilinearWall {
                            vec![1.0; self.fluid.n_dofs()]
                        } else {
                            fluid_y.clone()
                        },
                        fluid_y.clone(),
                        self.fluid.interpolate(&self.mesh, |x, _, _| x),
                        vec![0.0; self.fluid.n_dofs()],
                    ),
                    (
                        corner.clone(),
                        fluid_y.clone(),
                        vec![0.0; self.fluid.n_dofs()],
                        self.fluid.interpolate(&self.mesh, |_, y, _| y * y),
                    ),
                ];
                for (e, v, ux, uy) in starts {
                    out.push(Sample {
                        fields: vec![e.clone(), v.clone(), ux.clone(), uy.clone()],
                    });
                    out.extend(self.trilinear_ascent(case, [e, v, ux, uy], 8)?);
                }
                let r = self.random_sample(case, &mut rng, true);
                let f = r.fields.clone();
                out.extend(self.trilinear_ascent(case, [f[0].clone(), f[1].clone(), f[2].clone(), f[3].clone()], 8)?);
            }
            CaseKind::Transport => {
                let n = self.fluid.n_dofs();
                let w1 = self.fluid.interpolate(&self.mesh, |x, y, s| {
                    let d = self.wall_distance(x, s);
                    d * y * if s == Subdomain::Air { -1.0 } else { 1.0 }
                });
                let starts = [(vec![0.0; n], vec![1.0; n]), (w1, self.fluid.interpolate(&self.mesh, |_, y, _| 1.0 + y / l))];
                for (w1, w2) in starts {
                    out.extend(self.transport_ascent([w1, w2], fluid_y.clone(), 8)?);
                }
            }
        }
        // Closed-form probes may carry roundoff on the constrained dofs.
        let masks = self.masks(case);
        for s in &mut out {
            for (k, (f, m)) in s.fields.iter_mut().zip(&masks).enumerate() {
                if case == CaseKind::Transport && k == 1 {
                    continue;
                }
                for (x, b) in f.iter_mut().zip(m) {
                    if *b {
                        *x = 0.0;
                    }
                }
            }
            self.check_sample(case, s)?;
        }
        Ok(out)
    }

    /// `v <- B^{-1} (v^3, phi)` on the free dofs, normalised; a nonlinear
    /// power iteration towards large `||v||_4^2 / v^T B v`.
    fn cubic_ascent(&self, b: &CsrMatrix, mask: &[bool], mut v: Vec<f64>, steps: usize) -> Result<Vec<Vec<f64>>> {
        let idx = free_indices(mask);
        let lu = DirectSolver::factor(&b.restrict(&idx, &idx))?;
        let table = ElementTable::new(5)?;
        let mut out = vec![v.clone()];
        for _ in 0..steps {
            let mut load = vec![0.0; v.len()];
            for (c, cell) in self.mesh.cells.iter().enumerate() {
                let Some(d) = self.fluid.cell_dofs(c) else { continue };
                let cv = table.eval(cell);
                let lv = d.map(|i| v[i]);
                for q in 0..cv.nq {
                    let x = cv.value(q, &lv);
                    for a in 0..4 {
                        load[d[a]] += cv.jw[q] * x * x * x * cv.phi[q][a];
                    }
                }
            }
            let x = lu.solve(&gather(&idx, &load));
            let n = x.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            if !(n > 0.0) || !n.is_finite() {
                break;
            }
            v = scatter(v.len(), &idx, &x.iter().map(|y| y / n).collect::<Vec<_>>());
            out.push(v.clone());
        }
        Ok(out)
    }

    /// Alternating maximisation of the trilinear ratio in `e`, `v` and `u`.
    fn trilinear_ascent(&self, case: CaseKind, start: [Vec<f64>; 4], rounds: usize) -> Result<Vec<Sample>> {
        let lf = self.spec().l_f;
        let l = self.spec().length;
        let masks = self.masks(case);
        let n = self.fluid.n_dofs();
        let weight = if case == CaseKind::TrilinearWall { lf } else { l };
        let be = self.fluid_mw.add_scaled(&self.fluid_k, weight)?;
        let e_idx = free_indices(&masks[0]);
        let v_idx = free_indices(&masks[1]);
        let e_lu = DirectSolver::factor(&be.restrict(&e_idx, &e_idx))?;
        let v_lu = DirectSolver::factor(&self.fluid_k.restrict(&v_idx, &v_idx))?;
        // div-div plus a small H^1 shift so the block is invertible.
        let shift = {
            let dmax = self.fluid_div[0][0].diagonal().into_iter().fold(0.0f64, f64::max);
            let kmax = self.fluid_k.diagonal().into_iter().fold(0.0f64, f64::max);
            1e-6 * dmax / kmax.max(f64::MIN_POSITIVE)
        };
        let h1 = self.fluid_k.add_scaled(&self.fluid_m, 1.0 / (l * l))?;
        let mut t = Triplets::new(2 * n, 2 * n);
        for bi in 0..2 {
            for bj in 0..2 {
                let m = &self.fluid_div[bi][bj];
                for i in 0..n {
                    for (j, v) in m.row(i) {
                        t.push(bi * n + i, bj * n + j, v);
                    }
                }
            }
            for i in 0..n {
                for (j, v) in h1.row(i) {
                    t.push(bi * n + i, bi * n + j, shift * v);
                }
            }
        }
        let u_lu = DirectSolver::factor(&t.to_csr())?;
        let [mut e, mut v, mut ux, mut uy] = start;
        let mut out = Vec::new();
        for _ in 0..rounds {
            let g = self.trilinear_loads(&e, &v, &ux, &uy);
            let u = u_lu.solve(&[g.2.clone(), g.3.clone()].concat());
            ux = u[..n].to_vec();
            uy = u[n..].to_vec();
            let g = self.trilinear_loads(&e, &v, &ux, &uy);
            e = scatter(n, &e_idx, &e_lu.solve(&gather(&e_idx, &g.0)));
            let g = self.trilinear_loads(&e, &v, &ux, &uy);
            v = scatter(n, &v_idx, &v_lu.solve(&gather(&v_idx, &g.1)));
            for f in [&mut e, &mut v, &mut ux, &mut uy] {
                let m = f.iter().fold(0.0f64, |a, x| a.max(x.abs()));
                if m > 0.0 {
                    f.iter_mut().for_each(|x| *x /= m);
                }
            }
            out.push(Sample {
                fields: vec![e.clone(), v.clone(), ux.clone(), uy.clone()],
            });
        }
        Ok(out)
    }

    /// Gradients of `int e v div u` with respect to the nodal values of
    /// `e`, `v`, `u_x` and `u_y`.
    fn trilinear_loads(&self, e: &[f64], v: &[f64], ux: &[f64], uy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.fluid.n_dofs();
        let (mut ge, mut gv, mut gx, mut gy) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let table = ElementTable::new(5).expect("order 5 is supported");
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            let Some(d) = self.fluid.cell_dofs(c) else { continue };
            let cv = table.eval(cell);
            let (le, lv, lx, ly) = (d.map(|i| e[i]), d.map(|i| v[i]), d.map(|i| ux[i]), d.map(|i| uy[i]));
            for q in 0..cv.nq {
                let (eq, vq) = (cv.value(q, &le), cv.value(q, &lv));
                let div = cv.gradient(q, &lx)[0] + cv.gradient(q, &ly)[1];
                let w = cv.jw[q];
                for a in 0..4 {
                    let p = cv.phi[q][a];
                    let g = cv.grad[q][a];
                    ge[d[a]] += w * p * vq * div;
                    gv[d[a]] += w * eq * p * div;
                    gx[d[a]] += w * eq * vq * g[0];
                    gy[d[a]] += w * eq * vq * g[1];
                }
            }
        }
        (ge, gv, gx, gy)
    }

    /// Alternating maximisation of the transport ratio in `v` (top pencil
    /// eigenvector of the symmetrised transport form) and `w`.
    fn transport_ascent(&self, start: [Vec<f64>; 2], v0: Vec<f64>, rounds: usize) -> Result<Vec<Sample>> {
        let lf = self.spec().l_f;
        let n = self.fluid.n_dofs();
        let [mut w1, mut w2] = start;
        let mut v = v0;
        let w1_idx = free_indices(&self.fluid_corner);
        let w2_idx = free_indices(&self.fluid_inlet);
        let lu1 = DirectSolver::factor(&self.fluid_k.restrict(&w1_idx, &w1_idx))?;
        let b2 = self.fluid_mg.add_scaled(&self.fluid_k, lf)?;
        let lu2 = DirectSolver::factor(&b2.restrict(&w2_idx, &w2_idx))?;
        let table = ElementTable::new(5)?;
        let mut out = Vec::new();
        for _ in 0..rounds {
            // v-step.
            let mut t = Triplets::new(n, n);
            for (c, cell) in self.mesh.cells.iter().enumerate() {
                let Some(d) = self.fluid.cell_dofs(c) else { continue };
                let cv = table.eval(cell);
                let (l1, l2) = (d.map(|i| w1[i]), d.map(|i| w2[i]));
                let mut k = [[0.0; 4]; 4];
                for q in 0..cv.nq {
                    let w = [cv.value(q, &l1), cv.value(q, &l2)];
                    for a in 0..4 {
                        for b in 0..4 {
                            let g = cv.grad[q][b];
                            k[a][b] += cv.jw[q] * cv.phi[q][a] * (w[0] * g[0] + w[1] * g[1]);
                        }
                    }
                }
                for a in 0..4 {
                    for b in 0..4 {
                        t.push(d[a], d[b], 0.5 * k[a][b]);
                        t.push(d[b], d[a], 0.5 * k[a][b]);
                    }
                }
            }
            let (_, vn) = self.pencil_max(&t.to_csr(), &self.fluid_k, &self.fluid_inlet, &v, Which::LargestMagnitude)?;
            v = vn;
            out.push(Sample {
                fields: vec![w1.clone(), w2.clone(), v.clone()],
            });
            // w-step: loads (phi, v d_x v) and (phi, v d_y v).
            let (mut g1, mut g2) = (vec![0.0; n], vec![0.0; n]);
            for (c, cell) in self.mesh.cells.iter().enumerate() {
                let Some(d) = self.fluid.cell_dofs(c) else { continue };
                let cv = table.eval(cell);
                let lv = d.map(|i| v[i]);
                for q in 0..cv.nq {
                    let vq = cv.value(q, &lv);
                    let g = cv.gradient(q, &lv);
                    for a in 0..4 {
                        g1[d[a]] += cv.jw[q] * cv.phi[q][a] * g[0] * vq;
                        g2[d[a]] += cv.jw[q] * cv.phi[q][a] * g[1] * vq;
                    }
                }
            }
            w1 = scatter(n, &w1_idx, &lu1.solve(&gather(&w1_idx, &g1)));
            w2 = scatter(n, &w2_idx, &lu2.solve(&gather(&w2_idx, &g2)));
            let m = w1.iter().chain(&w2).fold(0.0f64, |a, x| a.max(x.abs()));
            if m > 0.0 {
                w1.iter_mut().chain(w2.iter_mut()).for_each(|x| *x /= m);
            }
            out.push(Sample {
                fields: vec![w1.clone(), w2.clone(), v.clone()],
            });
        }
        Ok(out)
    }

    /// `n_samples` random samples (alternating rough and smooth) plus the
    /// adversarial set.
    pub fn certify(&self, case: CaseKind, n_samples: usize, seed: u64) -> Result<InequalityCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random_worst = 0.0f64;
        for i in 0..n_samples {
            let s = self.random_sample(case, &mut rng, i % 2 == 1);
            random_worst = random_worst.max(self.ratio(case, &s).ratio);
        }
        let adv = self.adversarial(case, seed)?;
        let adversarial_worst = adv.iter().map(|s| self.ratio(case, s).ratio).fold(0.0f64, f64::max);
        Ok(InequalityCase {
            name: case.name(),
            kind: case,
            constraint: case.constraint().into(),
            constant: self.constant(case),
            random_samples: n_samples,
            adversarial_samples: adv.len(),
            random_worst,
            adversarial_worst,
            worst_ratio: random_worst.max(adversarial_worst),
        })
    }

    fn certify_family(&self, family: Family, case: CaseKind, n_samples: usize, seed: u64) -> Result<InequalityCase> {
        if case.family() != family {
            return Err(Error::Degenerate(format!(
                "case {} does not belong to the {family:?} family",
                case.name()
            )));
        }
        self.certify(case, n_samples, seed)
    }

    pub fn verify_poincare(&self, case: CaseKind, n_samples: usize, seed: u64) -> Result<InequalityCase> {
        self.certify_family(Family::Poincare, case, n_samples, seed)
    }

    pub fn verify_sobolev_2d(&self, case: CaseKind, n_samples: usize, seed: u64) -> Result<InequalityCase> {
        self.certify_family(Family::Sobolev, case, n_samples, seed)
    }

    pub fn verify_trilinear(&self, case: CaseKind, n_samples: usize, seed: u64) -> Result<InequalityCase> {
        self.certify_family(Family::Trilinear, case, n_samples, seed)
    }

    /// Every case, in [`CaseKind::all`] order.
    pub fn certify_all(&self, n_samples: usize, seed: u64) -> Result<Vec<InequalityCase>> {
        CaseKind::all()
            .into_iter()
            .enumerate()
            .map(|(i, c)| self.certify(c, n_samples, seed.wrapping_add(i as u64)))
            .collect()
    }
}

/// CSV table of certification results.
pub fn cases_csv(cases: &[InequalityCase], slack: f64) -> String {
    let mut s = String::from("case,constraint,constant,random_samples,adversarial_samples,random_worst,adversarial_worst,worst_ratio,holds\n");
    for c in cases {
        s.push_str(&format!(
            "{},\"{}\",{:e},{},{},{:e},{:e},{:e},{}\n",
            c.name,
            c.constraint,
            c.constant,
            c.random_samples,
            c.adversarial_samples,
            c.random_worst,
            c.adversarial_worst,
            c.worst_ratio,
            c.holds(slack)
        ));
    }
    s
}

/// Lower bound on the Korn constant of the homogeneous discrete velocity
/// space (both components clamped on inlets and outlets, `u_x` on the
/// outer walls).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KornEstimate {
    pub value: f64,
    pub lanczos_steps: usize,
    pub residual: f64,
    pub n_dofs: usize,
    pub resolution: Resolution,
    /// Maximiser `[u_x | u_y]` on the velocity space.
    #[serde(skip)]
    pub vector: Vec<f64>,
}

impl KornEstimate {
    /// Value handed to the ledger: the estimate plus 10 %.
    pub fn with_safety(&self) -> f64 {
        1.1 * self.value
    }
}

/// The two Gram matrices `(grad u, grad v)` and `(Du, Dv)` on the free
/// velocity dofs.
pub struct KornPencil {
    pub space: Space,
    pub free: Vec<usize>,
    pub grad: CsrMatrix,
    pub sym: CsrMatrix,
}

impl KornPencil {
    pub fn new(disc: &Discretization) -> Result<Self> {
        let mesh = &disc.mesh;
        let space = disc.ux.clone();
        if disc.uy.n_dofs() != space.n_dofs() {
            return Err(Error::Dimension("velocity components use different layouts".into()));
        }
        let n = space.n_dofs();
        let one = |_: Subdomain, _: [f64; 2]| 1.0;
        let k = assemble_form(mesh, &space, &space, &Integrand::Stiffness(&one), 3)?;
        let d = assemble_vector_form(mesh, &space, &disc.uy, &VectorForm::SymmetricGradient(&one), 3)?;
        let mut tg = Triplets::new(2 * n, 2 * n);
        let mut ts = Triplets::new(2 * n, 2 * n);
        for b in 0..2 {
            for i in 0..n {
                for (j, v) in k.row(i) {
                    tg.push(b * n + i, b * n + j, v);
                }
            }
            for c in 0..2 {
                for i in 0..n {
                    for (j, v) in d[b][c].row(i) {
                        ts.push(b * n + i, c * n + j, v);
                    }
                }
            }
        }
        let free: Vec<usize> = (0..2 * n)
            .filter(|&i| if i < n { !disc.ux.is_fixed(i) } else { !disc.uy.is_fixed(i - n) })
            .collect();
        Ok(KornPencil {
            grad: tg.to_csr().restrict(&free, &free),
            sym: ts.to_csr().restrict(&free, &free),
            space,
            free,
        })
    }

    pub fn n_full(&self) -> usize {
        2 * self.space.n_dofs()
    }

    /// `||grad u||^2 / ||Du||^2` for a full `[u_x | u_y]` vector, after
    /// zeroing its constrained entries.
    pub fn ratio(&self, u: &[f64]) -> f64 {
        let x = gather(&self.free, u);
        self.grad.bilinear(&x, &x) / self.sym.bilinear(&x, &x)
    }

    /// Zero the constrained entries of a full vector.
    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        scatter(self.n_full(), &self.free, &gather(&self.free, u))
    }
}

/// Largest `||grad u||^2 / ||Du||^2` over the discrete velocity space, by
/// Lanczos on the pencil. `start` is a full `[u_x | u_y]` vector; the
/// default is a smooth admissible field.
pub fn estimate_korn_constant(disc: &Discretization, start: Option<&[f64]>, opts: &LanczosOptions) -> Result<KornEstimate> {
    let p = KornPencil::new(disc)?;
    let n = p.space.n_dofs();
    let spec = disc.mesh.spec;
    let default;
    let start = match start {
        Some(s) => s,
        None => {
            let (w, l) = (spec.width(), spec.length);
            let ux = p.space.interpolate(&disc.mesh, |x, y, _| (x / w + 0.3) * (y / l) * (1.0 - y / l));
            let uy = p.space.interpolate(&disc.mesh, |x, y, _| (1.0 - x / w) * (y / l) * (1.0 - y / l));
            default = [ux, uy].concat();
            &default
        }
    };
    if start.len() != 2 * n {
        return Err(Error::Dimension("Korn start vector size".into()));
    }
    let pair = lanczos(&p.grad, &p.sym, &gather(&p.free, start), Which::Largest, opts)?;
    // The Rayleigh quotient of the returned vector is what is certified.
    let value = p.grad.bilinear(&pair.vector, &pair.vector) / p.sym.bilinear(&pair.vector, &pair.vector);
    Ok(KornEstimate {
        value,
        lanczos_steps: pair.steps,
        residual: pair.residual,
        n_dofs: p.free.len(),
        resolution: disc.mesh.resolution,
        vector: scatter(2 * n, &p.free, &pair.vector),
    })
}

/// Nodal values of a continuous fluid field after dyadic refinement.
fn prolong(coarse: &MultidomainMesh, cs: &Space, v: &[f64], fine: &MultidomainMesh, fs: &Space) -> Vec<f64> {
    let nxt = coarse.xs.len() - 1;
    fs.interpolate(fine, |x, y, sub| {
        let i = (0..nxt)
            .find(|&i| coarse.column_subdomain(i) == sub && x >= coarse.xs[i] - 1e-15 && x <= coarse.xs[i + 1] + 1e-15)
            .expect("fine node lies in a coarse column of its subdomain");
        let j = match coarse.ys.binary_search_by(|p| p.total_cmp(&y)) {
            Ok(j) => j.min(coarse.ys.len() - 2),
            Err(j) => j.saturating_sub(1).min(coarse.ys.len() - 2),
        };
        let c = j * nxt + i;
        let cell = &coarse.cells[c];
        let d = cs.cell_dofs(c).expect("fluid cell");
        let s = 2.0 * (x - cell.x[0]) / cell.hx() - 1.0;
        let t = 2.0 * (y - cell.y[0]) / cell.hy() - 1.0;
        let phi = crate::fem::element::shape(s, t);
        (0..4).map(|a| phi[a] * v[d[a]]).sum()
    })
}

/// Korn estimates on `levels` dyadic refinements of `res`. Each level
/// starts Lanczos from the prolonged maximiser of the previous one; the
/// spaces are nested, so the sequence is non-decreasing.
pub fn korn_refinement_sweep(spec: &GeometrySpec, res: Resolution, levels: usize, opts: &LanczosOptions) -> Result<Vec<KornEstimate>> {
    let mut out: Vec<KornEstimate> = Vec::new();
    let mut prev: Option<Discretization> = None;
    let mut r = res;
    for _ in 0..levels {
        let disc = Discretization::new(spec, r)?;
        let est = match (&prev, out.last()) {
            (Some(c), Some(last)) => {
                let n = c.ux.n_dofs();
                let ux = prolong(&c.mesh, &c.ux, &last.vector[..n], &disc.mesh, &disc.ux);
                let uy = prolong(&c.mesh, &c.ux, &last.vector[n..], &disc.mesh, &disc.ux);
                estimate_korn_constant(&disc, Some(&[ux, uy].concat()), opts)?
            }
            _ => estimate_korn_constant(&disc, None, opts)?,
        };
        out.push(est);
        prev = Some(disc);
        r = r.refined();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_lab(n: usize) -> InequalityLab {
        InequalityLab::new(&GeometrySpec::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), Resolution::uniform(n, n)).unwrap()
    }

    fn desk_lab() -> InequalityLab {
        InequalityLab::new(&GeometrySpec::desk(), Resolution::uniform(6, 16)).unwrap()
    }

    fn only_fuel(lab: &InequalityLab, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        lab.fluid.interpolate(&lab.mesh, |x, y, s| if s == Subdomain::Fuel { f(x, y) } else { 0.0 })
    }

    #[test]
    fn linear_profile_poincare_ratio() {
        let lab = desk_lab();
        let v = lab.fluid.interpolate(&lab.mesh, |_, y, _| y);
        let r = lab.ratio(CaseKind::PoincareFluid, &Sample { fields: vec![v] });
        assert!((r.ratio - (2.0f64 / 3.0).sqrt()).abs() < 1e-12, "{}", r.ratio);
    }

    #[test]
    fn zero_fields_give_zero_ratio() {
        let lab = unit_lab(2);
        for case in CaseKind::all() {
            let fields = lab.spaces(case).iter().map(|s| vec![0.0; s.n_dofs()]).collect();
            assert_eq!(lab.ratio(case, &Sample { fields }).ratio, 0.0, "{}", case.name());
        }
    }

    #[test]
    fn corner_sobolev_monomial() {
        // v = xy on the unit fuel channel: ||v||_4^2 = 1/5, ||grad v||^2 = 2/3.
        let lab = unit_lab(3);
        let v = only_fuel(&lab, |x, y| x * y);
        let r = lab.ratio(CaseKind::SobolevCorner, &Sample { fields: vec![v] });
        assert!((r.lhs - 0.2).abs() < 1e-13 && (r.ratio - 0.6).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn trilinear_monomials() {
        // e = 1, v = y, u = (x, 0): int e v div u = 1/2 against sqrt 2.
        let lab = unit_lab(2);
        let e = only_fuel(&lab, |_, _| 1.0);
        let v = only_fuel(&lab, |_, y| y);
        let ux = only_fuel(&lab, |x, _| x);
        let uy = vec![0.0; ux.len()];
        let s = Sample {
            fields: vec![e, v, ux, uy],
        };
        lab.check_sample(CaseKind::TrilinearWall, &s).unwrap();
        let r = lab.ratio(CaseKind::TrilinearWall, &s);
        assert!((r.lhs - 0.5).abs() < 1e-14);
        assert!((r.ratio - 0.5 / 2f64.sqrt()).abs() < 1e-12);
        assert!(lab.check_sample(CaseKind::TrilinearInlet, &s).is_err());
    }

    #[test]
    fn ratios_are_scale_invariant() {
        let lab = desk_lab();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in CaseKind::all() {
            let s = lab.random_sample(case, &mut rng, true);
            lab.check_sample(case, &s).unwrap();
            let big = Sample {
                fields: s.fields.iter().map(|f| f.iter().map(|x| 1e6 * x).collect()).collect(),
            };
            let (a, b) = (lab.ratio(case, &s).ratio, lab.ratio(case, &big).ratio);
            assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "{}: {a} {b}", case.name());
        }
    }

    #[test]
    fn all_cases_certify_on_a_small_mesh() {
        let lab = desk_lab();
        for case in CaseKind::all() {
            let c = lab.certify(case, 40, 11).unwrap();
            assert!(c.holds(1e-10), "{c:?}");
            assert!(c.adversarial_samples > 0);
        }
    }

    #[test]
    fn adversarial_seeds_beat_random_sampling() {
        let lab = desk_lab();
        let c = lab.certify(CaseKind::PoincareFluid, 40, 1).unwrap();
        assert!(c.adversarial_worst > c.random_worst);
        // Discrete maximiser approaches 2 sqrt 2 / pi from below.
        let limit = 2.0 * 2f64.sqrt() / std::f64::consts::PI;
        assert!(c.adversarial_worst <= limit + 1e-12 && c.adversarial_worst > 0.85 * limit);
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let lab = unit_lab(1);
        assert!(lab.verify_sobolev_2d(CaseKind::PoincareFluid, 1, 0).is_err());
        assert!(lab.verify_trilinear(CaseKind::Transport, 1, 0).is_ok());
    }

    #[test]
    fn literal_gdl_bound_needs_short_channels() {
        // Constants: ||1||^2 = l L per layer against 2 ||1||^2_{Gamma_w} = 4 l.
        let lab = InequalityLab::new(&GeometrySpec::new(1.0, 0.5, 0.5, 0.5, 3.0).unwrap(), Resolution::uniform(1, 2)).unwrap();
        let one = Sample {
            fields: vec![vec![1.0; lab.gdl.n_dofs()]],
        };
        let r = lab.ratio(CaseKind::PoincareGdl, &one);
        assert!((r.ratio - (3.0f64 / 4.0).sqrt()).abs() < 1e-12);
        let lab = InequalityLab::new(&GeometrySpec::new(1.0, 0.5, 0.5, 0.5, 5.0).unwrap(), Resolution::uniform(1, 2)).unwrap();
        let one = Sample {
            fields: vec![vec![1.0; lab.gdl.n_dofs()]],
        };
        assert!(lab.ratio(CaseKind::PoincareGdl, &one).ratio > 1.0);
    }

    #[test]
    fn korn_shear_probe_and_kernel_exclusion() {
        // u = (y, 0): |grad u|^2 = 1 and |Du|^2 = 1/2 pointwise.
        let disc = Discretization::new(&GeometrySpec::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), Resolution::uniform(4, 4)).unwrap();
        let m = &disc.mesh;
        let y = disc.ux.interpolate(m, |_, y, _| y);
        let z = vec![0.0; y.len()];
        let (fx, fy) = (Field::new(&disc.ux, &y), Field::new(&disc.uy, &z));
        let fl = |s: Subdomain| s.is_fluid();
        assert!((norms::vector_grad_sq(m, fx, fy, fl) / norms::sym_grad_sq(m, fx, fy, fl) - 2.0).abs() < 1e-12);

        let p = KornPencil::new(&disc).unwrap();
        let n = p.space.n_dofs();
        let rotation = [disc.ux.interpolate(m, |_, y, _| -y), disc.ux.interpolate(m, |x, _, _| x)].concat();
        assert_ne!(p.project(&rotation), rotation);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let k = p.free[rng.random_range(0..p.free.len())];
            let mut e = vec![0.0; 2 * n];
            e[k] = 1.0;
            let x = gather(&p.free, &e);
            assert!(p.sym.bilinear(&x, &x) > 0.0);
        }
        let est = estimate_korn_constant(&disc, None, &LanczosOptions::default()).unwrap();
        assert!(est.value >= 1.0, "{est:?}");
        // Any admissible field is a lower bound.
        let probe = p.project(&[disc.ux.interpolate(m, |x, y, _| x * y * (1.0 - y)), z.clone()].concat());
        assert!(est.value >= p.ratio(&probe) * (1.0 - 1e-12));
    }

    #[test]
    fn korn_sweep_is_monotone() {
        let sweep = korn_refinement_sweep(&GeometrySpec::desk(), Resolution::uniform(2, 4), 3, &LanczosOptions::default()).unwrap();
        assert!(sweep.iter().all(|k| k.value >= 1.0));
        for w in sweep.windows(2) {
            assert!(w[1].value >= w[0].value * (1.0 - 1e-9), "{} {}", w[0].value, w[1].value);
        }
    }
}
