//! The map `T : (pi, upsilon, Phi) -> (p, Upsilon, Theta, |grad phi|^2)` and
//! the relaxed outer iteration built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::norms::{self, Field};
use crate::fem::solve::LinearOptions;
use crate::flow::{check_flow_energy_estimate, solve_flow, FlowEstimate, FlowInputs, FlowSolution};
use crate::geometry::Subdomain;
use crate::ledger::{Bounds, LedgerReport};
use crate::problem::Problem;
use crate::tec::{check_tec_energy_estimate, solve_tec, NewtonOptions, QpField, TecEstimate, TecInputs, TecSolution};

/// One point of the fixed-point space: pressure iterate, homogeneous parts
/// of densities and temperature, and the Joule datum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub pi: Vec<f64>,
    /// `upsilon_1, upsilon_2, upsilon_3` on the state space.
    pub upsilon: [Vec<f64>; 3],
    pub phi_data: QpField,
}

impl CellState {
    pub fn zero(p: &Problem) -> Self {
        let n = p.disc.state.n_dofs();
        CellState {
            pi: vec![0.0; p.disc.pressure.n_dofs()],
            upsilon: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            phi_data: QpField::zero(&p.disc.mesh),
        }
    }

    fn check(&self, p: &Problem) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if self.pi.len() != p.disc.pressure.n_dofs()
            || self.upsilon.iter().any(|u| u.len() != p.disc.state.n_dofs())
            || self.phi_data.values.len() != self.phi_data.nq * p.disc.mesh.n_cells()
        {
            return Err(Error::Dimension("state does not match the problem".into()));
        }
        if !finite(&self.pi) || !self.upsilon.iter().all(|u| finite(u)) || !finite(&self.phi_data.values) {
            return Err(Error::Degenerate("state has non-finite entries".into()));
        }
        if self.phi_data.min() < 0.0 {
            return Err(Error::Degenerate("Joule datum must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Radii of the invariant set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
}

/// Norms of a state against the radii.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMembership {
    pub grad_pi: f64,
    pub upsilon: f64,
    pub phi_l2: f64,
    pub pi_ok: bool,
    pub upsilon_ok: bool,
    /// `||Phi||_2 <= R_3`.
    pub phi_ok: bool,
    /// `||Phi||_2 <= R_3^2`, the bound suggested by the potential estimate.
    pub phi_ok_squared: bool,
}

impl KMembership {
    pub fn holds(&self) -> bool {
        self.pi_ok && self.upsilon_ok && self.phi_ok
    }
}

pub fn k_membership(p: &Problem, s: &CellState, r: &Radii) -> KMembership {
    let mesh = &p.disc.mesh;
    let grad_pi = norms::grad_sq(mesh, Field::new(&p.disc.pressure, &s.pi), |x: Subdomain| x.is_porous()).sqrt();
    let upsilon = s
        .upsilon
        .iter()
        .map(|u| norms::grad_sq(mesh, Field::new(&p.disc.state, u), |_| true))
        .sum::<f64>()
        .sqrt();
    let phi_l2 = s.phi_data.l2_sq(mesh).sqrt();
    KMembership {
        grad_pi,
        upsilon,
        phi_l2,
        pi_ok: grad_pi <= r.r1,
        upsilon_ok: upsilon <= r.r2,
        phi_ok: phi_l2 <= r.r3,
        phi_ok_squared: phi_l2 <= r.r3 * r.r3,
    }
}

/// Ledger quantities needed for the a-posteriori checks.
#[derive(Clone, Debug)]
pub struct EstimateContext {
    pub bounds: Bounds,
    pub report: LedgerReport,
}

impl EstimateContext {
    pub fn radii(&self) -> Option<Radii> {
        self.report.r3.map(|r3| Radii {
            r1: self.report.r1,
            r2: self.report.r2,
            r3,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardConfig {
    pub max_outer_iters: usize,
    /// Bound on the largest relative L2 change between `x` and `T(x)`.
    pub tol: f64,
    pub omega: f64,
    /// Halve `omega` when the residual grows.
    pub auto_relax: bool,
    /// Abort when the velocity leaves the transport gate.
    pub strict_gate: bool,
    /// Relative slack of the energy-estimate comparisons.
    pub estimate_slack: f64,
    pub linear: LinearOptions,
    pub newton: NewtonOptions,
}

impl Default for PicardConfig {
    fn default() -> Self {
        PicardConfig {
            max_outer_iters: 50,
            tol: 1e-8,
            omega: 1.0,
            auto_relax: true,
            strict_gate: false,
            estimate_slack: 1e-9,
            linear: LinearOptions::default(),
            newton: NewtonOptions::default(),
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.tol > 0.0) {
            errs.push(format!("solver.tol = {} must be positive", self.tol));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            errs.push(format!("solver.omega = {} must lie in (0, 1]", self.omega));
        }
        if self.max_outer_iters == 0 {
            errs.push("solver.max_outer_iters must be at least 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// Everything one application of `T` produces.
#[derive(Clone, Debug)]
pub struct TOutput {
    pub next: CellState,
    pub flow: FlowSolution,
    pub tec: TecSolution,
    pub flow_estimate: Option<FlowEstimate>,
    pub tec_estimate: Option<TecEstimate>,
}

fn physical(u: &[f64], lift: &[f64]) -> Vec<f64> {
    u.iter().zip(lift).map(|(a, b)| a + b).collect()
}

/// One flow solve followed by one coupled solve.
pub fn apply_t(p: &Problem, s: &CellState, cfg: &PicardConfig, ctx: Option<&EstimateContext>) -> Result<TOutput> {
    s.check(p)?;
    let rho1 = physical(&s.upsilon[0], &p.lift.rho0[0]);
    let rho2 = physical(&s.upsilon[1], &p.lift.rho0[1]);
    let xi = physical(&s.upsilon[2], &p.lift.theta0);
    let total: Vec<f64> = rho1.iter().zip(&rho2).map(|(a, b)| a + b).collect();
    let fin = FlowInputs {
        pi: &s.pi,
        rho: &total,
        xi: &xi,
    };
    let flow = solve_flow(&p.disc, &p.coeffs, &p.consts, fin, &p.lift, &cfg.linear)?;
    let tin = TecInputs {
        w: [&flow.u[0], &flow.u[1]],
        rho: [&rho1, &rho2],
        xi: &xi,
        phi_data: &s.phi_data,
    };
    if cfg.strict_gate {
        if let Some(c) = ctx {
            let g = crate::tec::velocity_gate(&p.disc, tin.w, c.report.root1);
            if !g.holds {
                return Err(Error::Gate(format!(
                    "velocity gate fails: lower = {:e}, ||w||_{{1,2}} = {:e}, root_1 = {:e}",
                    g.lower,
                    g.w_norm,
                    g.root1
                )));
            }
        }
    }
    let tec = solve_tec(&p.disc, &p.coeffs, &p.consts, tin, &p.lift, &p.data, &cfg.newton)?;
    let (flow_estimate, tec_estimate) = match ctx {
        Some(c) => (
            Some(check_flow_energy_estimate(
                &p.disc,
                &p.coeffs,
                &p.consts,
                &flow,
                fin,
                &p.lift,
                c.report.c_k,
                cfg.estimate_slack,
            )),
            Some(check_tec_energy_estimate(
                &p.disc,
                &c.bounds,
                &c.report.a_params(),
                c.report.b0,
                c.report.root1,
                &tec,
                tin,
                &p.data,
                cfg.estimate_slack,
            )),
        ),
        None => (None, None),
    };
    let next = CellState {
        pi: flow.p.iter().map(|v| v + flow.p_mean).collect(),
        upsilon: [tec.upsilon[0].clone(), tec.upsilon[1].clone(), tec.theta_hom.clone()],
        phi_data: tec.phi_grad_sq.clone(),
    };
    Ok(TOutput {
        next,
        flow,
        tec,
        flow_estimate,
        tec_estimate,
    })
}

/// Relative L2 distances between two states: pressure, the three state
/// components and the Joule datum.
pub fn state_differences(p: &Problem, a: &CellState, b: &CellState) -> [f64; 5] {
    let mesh = &p.disc.mesh;
    let rel = |d: f64, x: f64, y: f64| {
        let s = x.max(y);
        if s > 0.0 {
            (d / s).sqrt()
        } else {
            0.0
        }
    };
    let diff = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let mut out = [0.0; 5];
    {
        let sp = &p.disc.pressure;
        let por = |s: Subdomain| s.is_porous();
        let d = diff(&a.pi, &b.pi);
        out[0] = rel(
            norms::l2_sq(mesh, Field::new(sp, &d), por),
            norms::l2_sq(mesh, Field::new(sp, &a.pi), por),
            norms::l2_sq(mesh, Field::new(sp, &b.pi), por),
        );
    }
    for i in 0..3 {
        let st = &p.disc.state;
        let d = diff(&a.upsilon[i], &b.upsilon[i]);
        out[1 + i] = rel(
            norms::l2_sq(mesh, Field::new(st, &d), |_| true),
            norms::l2_sq(mesh, Field::new(st, &a.upsilon[i]), |_| true),
            norms::l2_sq(mesh, Field::new(st, &b.upsilon[i]), |_| true),
        );
    }
    let dq = QpField {
        nq: a.phi_data.nq,
        values: diff(&a.phi_data.values, &b.phi_data.values),
    };
    out[4] = rel(dq.l2_sq(mesh), a.phi_data.l2_sq(mesh), b.phi_data.l2_sq(mesh));
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `||T(x) - x|| / max(||T(x)||, ||x||)` for pressure, `upsilon_1..3`, `Phi`.
    pub differences: [f64; 5],
    pub residual: f64,
    pub omega: f64,
    pub newton_iterations: usize,
    pub flow_margin: Option<f64>,
    pub flow_estimate_holds: Option<bool>,
    pub tec_margin: Option<f64>,
    pub tec_estimate_holds: Option<bool>,
    pub gate: Option<bool>,
    /// Membership of the input iterate.
    pub in_k: Option<KMembership>,
    /// Membership of its image under `T`.
    pub image_in_k: Option<KMembership>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub records: Vec<IterationRecord>,
    pub status: SolveStatus,
    pub final_residual: f64,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Every recorded iterate and image in `K`.
    pub fn always_in_k(&self) -> Option<bool> {
        let mut any = false;
        let mut ok = true;
        for r in &self.records {
            for k in [r.in_k, r.image_in_k].into_iter().flatten() {
                any = true;
                ok &= k.holds();
            }
        }
        any.then_some(ok)
    }

    pub fn estimates_hold(&self) -> Option<bool> {
        let mut any = false;
        let mut ok = true;
        for r in &self.records {
            for h in [r.flow_estimate_holds, r.tec_estimate_holds].into_iter().flatten() {
                any = true;
                ok &= h;
            }
        }
        any.then_some(ok)
    }
}

/// Converged (or last) state with the solutions of its final `T` step.
#[derive(Clone, Debug)]
pub struct CellSolution {
    pub state: CellState,
    pub flow: FlowSolution,
    pub tec: TecSolution,
}

/// Relaxed Picard iteration `x <- x + omega (T(x) - x)` from the zero state.
pub fn run_picard(p: &Problem, cfg: &PicardConfig, ctx: Option<&EstimateContext>) -> Result<(CellSolution, SolveReport)> {
    run_picard_from(p, CellState::zero(p), cfg, ctx)
}

pub fn run_picard_from(
    p: &Problem,
    start: CellState,
    cfg: &PicardConfig,
    ctx: Option<&EstimateContext>,
) -> Result<(CellSolution, SolveReport)> {
    cfg.validate()?;
    let radii = ctx.and_then(|c| c.radii());
    let mut x = start;
    let mut omega = cfg.omega;
    let mut records = Vec::new();
    let mut prev_residual = f64::INFINITY;
    for it in 0..cfg.max_outer_iters {
        let out = apply_t(p, &x, cfg, ctx).map_err(|e| Error::Outer {
            iteration: it,
            source: Box::new(e),
        })?;
        let d = state_differences(p, &x, &out.next);
        let residual = d.iter().copied().fold(0.0, f64::max);
        records.push(IterationRecord {
            iteration: it,
            differences: d,
            residual,
            omega,
            newton_iterations: out.tec.report.iterations,
            flow_margin: out.flow_estimate.map(|e| e.relative_margin),
            flow_estimate_holds: out.flow_estimate.map(|e| e.holds),
            tec_margin: out.tec_estimate.map(|e| e.relative_margin),
            tec_estimate_holds: out.tec_estimate.map(|e| e.holds),
            gate: out.tec_estimate.map(|e| e.gate.holds),
            in_k: radii.map(|r| k_membership(p, &x, &r)),
            image_in_k: radii.map(|r| k_membership(p, &out.next, &r)),
        });
        if residual <= cfg.tol {
            let sol = CellSolution {
                state: out.next,
                flow: out.flow,
                tec: out.tec,
            };
            return Ok((
                sol,
                SolveReport {
                    records,
                    status: SolveStatus::Converged,
                    final_residual: residual,
                },
            ));
        }
        if cfg.auto_relax && residual > prev_residual && omega > 1.0 / 64.0 {
            omega *= 0.5;
        }
        prev_residual = residual;
        x = relax(&x, &out.next, omega);
        if it + 1 == cfg.max_outer_iters {
            let sol = CellSolution {
                state: x,
                flow: out.flow,
                tec: out.tec,
            };
            return Ok((
                sol,
                SolveReport {
                    records,
                    status: SolveStatus::MaxIterations,
                    final_residual: residual,
                },
            ));
        }
    }
    unreachable!("the loop returns on its last iteration")
}

fn relax(x: &CellState, t: &CellState, omega: f64) -> CellState {
    let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u + omega * (v - u)).collect::<Vec<f64>>();
    CellState {
        pi: mix(&x.pi, &t.pi),
        upsilon: [
            mix(&x.upsilon[0], &t.upsilon[0]),
            mix(&x.upsilon[1], &t.upsilon[1]),
            mix(&x.upsilon[2], &t.upsilon[2]),
        ],
        phi_data: QpField {
            nq: x.phi_data.nq,
            values: mix(&x.phi_data.values, &t.phi_data.values),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{BoundaryData, CoefficientSet, PhysicalConstants};
    use crate::discretization::ScalarLifting;
    use crate::geometry::{GeometrySpec, Resolution};
    use crate::ledger::{EpsilonVector, LedgerOptions};
    use crate::problem::{desk_boundary_data, scale_until_verdict};

    fn desk(res: Resolution, data: BoundaryData) -> Problem {
        let mut c = CoefficientSet::desk();
        c.phi_ref = 0.0;
        Problem::new(
            &GeometrySpec::desk(),
            res,
            c,
            PhysicalConstants::default(),
            data,
            ScalarLifting::default(),
        )
        .unwrap()
    }

    #[test]
    fn trivial_data_is_a_fixed_point() {
        let p = desk(Resolution::uniform(2, 6), BoundaryData::zero());
        let out = apply_t(&p, &CellState::zero(&p), &PicardConfig::default(), None).unwrap();
        assert_eq!(out.next, CellState::zero(&p));
        let (_, rep) = run_picard(&p, &PicardConfig::default(), None).unwrap();
        assert!(rep.converged() && rep.records.len() <= 2);
    }

    #[test]
    fn rejects_negative_joule_datum_and_bad_config() {
        let p = desk(Resolution::uniform(2, 4), BoundaryData::zero());
        let mut s = CellState::zero(&p);
        s.phi_data.values[0] = -1.0;
        assert!(apply_t(&p, &s, &PicardConfig::default(), None).is_err());
        let cfg = PicardConfig {
            omega: 1.5,
            ..PicardConfig::default()
        };
        assert!(matches!(run_picard(&p, &cfg, None), Err(Error::Config(_))));
    }

    fn scaled_desk() -> (Problem, EstimateContext) {
        let p = desk(Resolution::uniform(3, 12), desk_boundary_data());
        let opts = LedgerOptions::default();
        let eps = EpsilonVector::default();
        let (q, s) = scale_until_verdict(&p, 0.1, 40, &eps, 1.5, &opts).unwrap();
        let ctx = EstimateContext {
            bounds: q.bounds(&opts),
            report: s.report,
        };
        (q, ctx)
    }

    #[test]
    fn relaxed_runs_agree_and_stay_in_k() {
        let (p, ctx) = scaled_desk();
        let cfg = PicardConfig::default();
        let (a, ra) = run_picard(&p, &cfg, Some(&ctx)).unwrap();
        let half = PicardConfig {
            omega: 0.5,
            ..cfg
        };
        let (b, rb) = run_picard(&p, &half, Some(&ctx)).unwrap();
        assert!(ra.converged() && rb.converged(), "{:?} {:?}", ra.final_residual, rb.final_residual);
        let d = state_differences(&p, &a.state, &b.state);
        assert!(d.iter().all(|v| *v <= 10.0 * cfg.tol), "{d:?}");
        assert_eq!(ra.always_in_k(), Some(true));
        assert_eq!(ra.estimates_hold(), Some(true));
        // Idempotence probe.
        let again = apply_t(&p, &a.state, &cfg, None).unwrap();
        let d = state_differences(&p, &a.state, &again.next);
        assert!(d.iter().all(|v| *v <= cfg.tol), "{d:?}");
    }
}
