//! Two-dimensional finite-element model of a PEM fuel cell.
//!
//! The cell is five strips (fuel channel, anode, membrane, cathode, air
//! channel) meshed with bilinear quadrilaterals. [`fixed_point::run_picard`]
//! alternates a Stokes-Darcy solve ([`flow`]) with a coupled species, heat
//! and potential solve ([`tec`]). [`ledger`] evaluates the explicit constants
//! of the existence argument and the smallness verdict; [`inequality`]
//! checks the functional inequalities those constants rest on.
//!
//! ```
//! use pemcell::coefficients::{BoundaryData, CoefficientSet, PhysicalConstants};
//! use pemcell::discretization::ScalarLifting;
//! use pemcell::geometry::{GeometrySpec, Resolution};
//! use pemcell::ledger::{EpsilonVector, LedgerOptions};
//! use pemcell::problem::Problem;
//!
//! let p = Problem::new(
//!     &GeometrySpec::desk(),
//!     Resolution::uniform(2, 4),
//!     CoefficientSet::desk(),
//!     PhysicalConstants::default(),
//!     BoundaryData::zero(),
//!     ScalarLifting::default(),
//! )?;
//! let r = p.ledger(&EpsilonVector::default(), 4.0, &LedgerOptions::default())?;
//! assert!(r.verdict);
//! # Ok::<(), pemcell::Error>(())
//! ```

pub mod cli_io;
pub mod coefficients;
pub mod convergence;
pub mod discretization;
pub mod error;
pub mod fem;
pub mod flow;
pub mod fixed_point;
pub mod geometry;
pub mod inequality;
pub mod ledger;
pub mod problem;
pub mod tec;

pub use error::{Error, Result};
