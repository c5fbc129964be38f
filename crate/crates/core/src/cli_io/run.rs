//! One subcommand per invocation: build the problem from the configuration,
//! run, and write `report.json` plus the subcommand's own files.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::coefficients::check_hypotheses;
use crate::coefficients::HypothesisReport;
use crate::convergence::{convergence_study, verification_coefficients, verification_geometry, ConvergenceStudy};
use crate::error::{Error, Result};
use crate::fem::eigen::LanczosOptions;
use crate::fixed_point::{run_picard, EstimateContext, SolveReport};
use crate::geometry::Resolution;
use crate::inequality::{cases_csv, estimate_korn_constant, InequalityCase, InequalityLab, KornEstimate};
use crate::ledger::{epsilon_objective, optimize_epsilons, sanity_checks, EpsilonVector, LedgerReport, SanityChecks};
use crate::problem::{scale_until_verdict, Problem};

use super::artifacts::{fields_vtk, probes_csv, write_text, FieldBundle};
use super::config::{EpsilonMode, KornSource, RunConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    CheckHypotheses,
    Ledger,
    Simulate,
    VerifyInequalities,
    ConvergenceStudy,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::CheckHypotheses => "check-hypotheses",
            Subcommand::Ledger => "ledger",
            Subcommand::Simulate => "simulate",
            Subcommand::VerifyInequalities => "verify-inequalities",
            Subcommand::ConvergenceStudy => "convergence-study",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonSearch {
    pub value: f64,
    pub accepted_moves: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DataScaling {
    pub scale: f64,
    pub steps: usize,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub subcommand: Subcommand,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub timestamp_unix: u64,
    pub seed: u64,
    /// Whether the subcommand's own check passed: hypotheses, smallness
    /// verdict, inequality certificates or observed orders.
    pub passed: bool,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<HypothesisReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub korn: Option<KornEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_search: Option<EpsilonSearch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_scaling: Option<DataScaling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sanity: Option<SanityChecks>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger: Option<LedgerReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inequalities: Option<Vec<InequalityCase>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceStudy>,
    pub files: Vec<String>,
}

impl RunReport {
    fn new(sub: Subcommand, cfg: &RunConfig) -> Self {
        RunReport {
            tool: format!("pemcell {}", env!("CARGO_PKG_VERSION")),
            subcommand: sub,
            timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            seed: cfg.seed,
            passed: false,
            config: cfg.clone(),
            hypotheses: None,
            korn: None,
            epsilon_search: None,
            data_scaling: None,
            sanity: None,
            ledger: None,
            solve: None,
            inequalities: None,
            convergence: None,
            files: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("the report is plain data") + "\n"
    }
}

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VERDICT: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

/// Process exit status for an error that ended a run.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::EpsilonBox(_) | Error::Geometry(_) | Error::InfeasibleRegularity { .. } => EXIT_CONFIG,
        Error::NewtonDivergence { .. } | Error::LinearSolver { .. } | Error::EigenStagnation(_) => EXIT_NONCONVERGENCE,
        Error::Gate(_) => EXIT_VERDICT,
        Error::Outer { source, .. } => match exit_code_for(source) {
            EXIT_CONFIG | EXIT_FAILURE => EXIT_NONCONVERGENCE,
            c => c,
        },
        _ => EXIT_FAILURE,
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub exit_code: i32,
    pub files: Vec<PathBuf>,
}

/// Problem, Korn constant, epsilons and ledger for the configured cell.
struct Prepared {
    problem: Problem,
    korn: Option<KornEstimate>,
    c_k: f64,
    epsilon: EpsilonVector,
    search: Option<EpsilonSearch>,
    scaling: Option<DataScaling>,
    ledger: LedgerReport,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let base = Problem::new(
        &cfg.geometry.spec(),
        cfg.geometry.resolution(),
        cfg.coefficients.clone(),
        cfg.constants,
        cfg.boundary.data(),
        cfg.boundary.lifting,
    )?;
    let (korn, c_k) = match cfg.ledger.c_k {
        KornSource::Value(v) => (None, v),
        KornSource::Named(_) => {
            let k = estimate_korn_constant(&base.disc, None, &LanczosOptions::default())?;
            let c = k.with_safety().max(1.0);
            (Some(k), c)
        }
    };
    let l = &cfg.ledger;
    let (epsilon, search) = match l.epsilon_mode {
        EpsilonMode::Fixed => (l.epsilon, None),
        EpsilonMode::Optimize => {
            let bounds = base.bounds(&l.options);
            let norms = base.data_norms();
            let obj = epsilon_objective(l.objective, &bounds, &norms, c_k, &l.options);
            let mut opts = l.search;
            opts.seed = opts.seed.wrapping_add(cfg.seed);
            let r = optimize_epsilons(&obj, &opts);
            if !r.value.is_finite() {
                return Err(Error::EpsilonBox("the search found no admissible epsilon vector".into()));
            }
            (
                r.epsilon,
                Some(EpsilonSearch {
                    value: r.value,
                    accepted_moves: r.history.len(),
                }),
            )
        }
    };
    let s = &cfg.boundary.scale_to_verdict;
    let (problem, scaling, ledger) = if s.enabled {
        let (p, sd) = scale_until_verdict(&base, s.factor, s.max_steps, &epsilon, c_k, &l.options)?;
        let scaling = DataScaling {
            scale: sd.scale,
            steps: sd.steps,
        };
        (p, Some(scaling), sd.report)
    } else {
        let r = base.ledger(&epsilon, c_k, &l.options)?;
        (base, None, r)
    };
    Ok(Prepared {
        problem,
        korn,
        c_k,
        epsilon,
        search,
        scaling,
        ledger,
    })
}

fn sanity(cfg: &RunConfig) -> SanityChecks {
    let c = &cfg.coefficients;
    sanity_checks(
        c.sigma.upper,
        c.k.fluid.lower.min(c.k.porous.lower),
        c.seebeck.bound,
        c.beta.upper,
        cfg.boundary.u_in,
        cfg.ledger.slip_gamma_range,
    )
}

/// Run `sub` and write its artifacts into `out`. With `strict`, a failed
/// check turns into exit code 2; solver non-convergence is always 3.
pub fn run_subcommand(sub: Subcommand, cfg: &RunConfig, out: &Path, strict: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut report = RunReport::new(sub, cfg);
    let mut files: Vec<PathBuf> = Vec::new();
    let mut converged = true;
    match sub {
        Subcommand::CheckHypotheses => {
            let h = &cfg.hypotheses;
            let r = check_hypotheses(
                &cfg.coefficients,
                &cfg.constants,
                &cfg.boundary.data(),
                h.samples,
                &h.sampling_box,
                cfg.seed,
            );
            report.passed = r.all_passed();
            report.hypotheses = Some(r);
        }
        Subcommand::Ledger => {
            let p = prepare(cfg)?;
            report.passed = p.ledger.verdict;
            report.korn = p.korn;
            report.epsilon_search = p.search;
            report.data_scaling = p.scaling;
            report.sanity = Some(sanity(cfg));
            report.ledger = Some(p.ledger);
        }
        Subcommand::Simulate => {
            let p = prepare(cfg)?;
            let ctx = EstimateContext {
                bounds: p.problem.bounds(&cfg.ledger.options),
                report: p.ledger.clone(),
            };
            debug_assert_eq!(ctx.report.c_k, p.c_k);
            debug_assert_eq!(ctx.report.epsilon, p.epsilon);
            let (sol, solve) = run_picard(&p.problem, &cfg.solver, Some(&ctx))?;
            converged = solve.converged();
            let bundle = FieldBundle::new(&p.problem.disc, &sol);
            if cfg.output.fields_vtk {
                files.push(write_text(out, "fields.vtk", &fields_vtk(&bundle))?);
            }
            if cfg.output.probes_csv {
                files.push(write_text(out, "probes.csv", &probes_csv(&bundle, cfg.output.probe_y))?);
            }
            report.passed = p.ledger.verdict;
            report.korn = p.korn;
            report.epsilon_search = p.search;
            report.data_scaling = p.scaling;
            report.ledger = Some(p.ledger);
            report.solve = Some(solve);
        }
        Subcommand::VerifyInequalities => {
            let q = &cfg.inequalities;
            let lab = InequalityLab::new(&cfg.geometry.spec(), Resolution::uniform(q.nx, q.ny))?;
            let cases = lab.certify_all(q.samples, cfg.seed)?;
            report.passed = cases.iter().all(|c| c.holds(q.slack));
            files.push(write_text(out, "inequalities.csv", &cases_csv(&cases, q.slack))?);
            report.inequalities = Some(cases);
        }
        Subcommand::ConvergenceStudy => {
            let c = &cfg.convergence;
            let s = convergence_study(
                &verification_geometry(),
                Resolution::uniform(c.nx, c.ny),
                c.levels,
                &verification_coefficients(),
                &cfg.constants,
            )?;
            report.passed = s.passes(c.min_order);
            report.convergence = Some(s);
        }
    }
    let report_path = out.join("report.json");
    files.push(report_path.clone());
    report.files = files
        .iter()
        .map(|f| f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    write_text(out, "report.json", &report.to_json())?;
    let exit_code = if !converged {
        EXIT_NONCONVERGENCE
    } else if strict && !report.passed {
        EXIT_VERDICT
    } else {
        EXIT_SUCCESS
    };
    Ok(RunOutcome {
        report,
        exit_code,
        files,
    })
}
