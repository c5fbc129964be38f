//! A complete problem instance: mesh and spaces, coefficients, boundary
//! data and liftings, plus the ledger evaluated on it.

use serde::{Deserialize, Serialize};

use crate::coefficients::{BoundaryData, CoefficientSet, InletProfile, PhysicalConstants};
use crate::discretization::{Discretization, Liftings, ScalarLifting};
use crate::error::{Error, Result};
use crate::geometry::{GeometrySpec, Resolution};
use crate::ledger::{build_report, Bounds, DataNorms, EpsilonVector, LedgerOptions, LedgerReport};

#[derive(Clone, Debug)]
pub struct Problem {
    pub disc: Discretization,
    pub coeffs: CoefficientSet,
    pub consts: PhysicalConstants,
    pub data: BoundaryData,
    pub scalar_lifting: ScalarLifting,
    pub lift: Liftings,
}

impl Problem {
    pub fn new(
        spec: &GeometrySpec,
        res: Resolution,
        coeffs: CoefficientSet,
        consts: PhysicalConstants,
        data: BoundaryData,
        scalar_lifting: ScalarLifting,
    ) -> Result<Self> {
        let disc = Discretization::new(spec, res)?;
        Ok(Self::on(disc, coeffs, consts, data, scalar_lifting))
    }

    pub fn on(
        disc: Discretization,
        coeffs: CoefficientSet,
        consts: PhysicalConstants,
        data: BoundaryData,
        scalar_lifting: ScalarLifting,
    ) -> Self {
        let lift = Liftings::new(&disc, &data, scalar_lifting);
        Problem {
            disc,
            coeffs,
            consts,
            data,
            scalar_lifting,
            lift,
        }
    }

    /// Same mesh and coefficients with other boundary data.
    pub fn with_data(&self, data: BoundaryData) -> Self {
        Self::on(self.disc.clone(), self.coeffs.clone(), self.consts, data, self.scalar_lifting)
    }

    pub fn bounds(&self, opts: &LedgerOptions) -> Bounds {
        Bounds::from_coefficients(&self.coeffs, &self.consts, opts.kappa)
    }

    pub fn data_norms(&self) -> DataNorms {
        DataNorms::compute(&self.disc, &self.coeffs, &self.lift, &self.data)
    }

    pub fn ledger(&self, eps: &EpsilonVector, c_k: f64, opts: &LedgerOptions) -> Result<LedgerReport> {
        build_report(&self.bounds(opts), eps, &self.data_norms(), c_k, opts)
    }
}

/// Operating point of the desk cell before any scaling.
pub fn desk_boundary_data() -> BoundaryData {
    BoundaryData {
        u_in: 0.2,
        profile: InletProfile::Plug,
        rho_in: [0.08, 0.3],
        rho_out: [0.05, 0.35],
        theta_in: 353.0,
        theta_out: 353.0,
        theta_e: 353.0,
        e_cell: 0.7,
    }
}

/// Result of shrinking the data until the smallness verdict holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledData {
    pub scale: f64,
    pub steps: usize,
    pub data: BoundaryData,
    pub report: LedgerReport,
}

/// Multiply `data` by `factor` repeatedly until the verdict passes.
pub fn scale_until_verdict(
    base: &Problem,
    factor: f64,
    max_steps: usize,
    eps: &EpsilonVector,
    c_k: f64,
    opts: &LedgerOptions,
) -> Result<(Problem, ScaledData)> {
    if !(factor > 0.0 && factor < 1.0) {
        return Err(Error::Degenerate(format!("scaling factor {factor} must lie in (0, 1)")));
    }
    let mut scale = 1.0;
    let mut last = None;
    for steps in 0..=max_steps {
        let data = base.data.scaled(scale);
        let p = base.with_data(data);
        let report = p.ledger(eps, c_k, opts)?;
        if report.verdict {
            return Ok((
                p,
                ScaledData {
                    scale,
                    steps,
                    data,
                    report,
                },
            ));
        }
        last = Some(report.margin);
        scale *= factor;
    }
    Err(Error::Degenerate(format!(
        "smallness verdict still fails after {max_steps} scalings (last margin {:e})",
        last.unwrap_or(f64::NAN)
    )))
}
