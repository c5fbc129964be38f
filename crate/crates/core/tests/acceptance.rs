//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pemcell::coefficients::{butler_volmer, BoundaryData, CoefficientSet, InletProfile, InterfaceLaw, PhysicalConstants};
use pemcell::convergence::{convergence_study, verification_coefficients, verification_geometry};
use pemcell::discretization::{Discretization, ScalarLifting};
use pemcell::fem::eigen::LanczosOptions;
use pemcell::fixed_point::{run_picard, EstimateContext, PicardConfig};
use pemcell::geometry::{GeometrySpec, Resolution};
use pemcell::inequality::{estimate_korn_constant, korn_refinement_sweep, InequalityLab};
use pemcell::ledger::{
    compute_roots, positive_root, positive_root_bisection, sanity_checks, EpsilonVector, LedgerOptions,
};
use pemcell::problem::{desk_boundary_data, scale_until_verdict, Problem};

const SEED: u64 = 20_240_611;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn fail(e: impl std::fmt::Display) -> Outcome {
    outcome(false, format!("error: {e}"))
}

fn desk_res() -> Resolution {
    Resolution::uniform(32, 128)
}

fn desk_problem(res: Resolution, data: BoundaryData) -> Problem {
    Problem::new(
        &GeometrySpec::desk(),
        res,
        CoefficientSet::desk(),
        PhysicalConstants::default(),
        data,
        ScalarLifting::default(),
    )
    .expect("desk problem")
}

/// Inequality certification at 32x128, worst ratio <= 1 + 1e-10, <= 120 s.
fn inequalities() -> Outcome {
    const SLACK: f64 = 1e-10;
    const LIMIT: Duration = Duration::from_secs(120);
    let t = Instant::now();
    let lab = match InequalityLab::new(&GeometrySpec::desk(), desk_res()) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let cases = match lab.certify_all(1000, SEED) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let dt = t.elapsed();
    let worst = cases.iter().max_by(|a, b| a.worst_ratio.total_cmp(&b.worst_ratio)).unwrap();
    let all = cases.iter().all(|c| c.holds(SLACK));
    outcome(
        all && dt <= LIMIT,
        format!(
            "{} cases, worst ratio {:.12} ({}) <= 1 + {SLACK:e}; {:.1} s <= {} s",
            cases.len(),
            worst.worst_ratio,
            worst.name,
            dt.as_secs_f64(),
            LIMIT.as_secs()
        ),
    )
}

/// Seebeck limit and slip bracket arithmetic.
fn sanity() -> Outcome {
    const SEEBECK_TOL: f64 = 1e-3;
    let c = CoefficientSet::desk();
    let k_lower = c.k.fluid.lower.min(c.k.porous.lower);
    let s = sanity_checks(c.sigma.upper, k_lower, c.seebeck.bound, c.beta.upper, 0.2, [9e-4, 1e-2]);
    let inputs_ok = c.sigma.upper == 120.0 && k_lower == 0.2 && c.seebeck.bound == 0.3 / 320.0;
    let limit_ok = ((s.seebeck_limit - 0.0408) / 0.0408).abs() <= SEEBECK_TOL;
    let bracket_ok = s.slip_range_rounded == [1.9, 6.3];
    outcome(
        inputs_ok && s.seebeck_ok && limit_ok && bracket_ok,
        format!(
            "alpha# = {:.6e} < sqrt(k#/sigma#) = {:.6} (vs 0.0408, rel tol {SEEBECK_TOL:e}); slip bracket [{:.4}, {:.4}] -> [{}, {}] vs [1.9, 6.3]",
            s.seebeck_upper, s.seebeck_limit, s.slip_range[0], s.slip_range[1], s.slip_range_rounded[0], s.slip_range_rounded[1]
        ),
    )
}

/// Random admissible data: zero inlet densities, everything else drawn
/// around the operating point.
fn random_data(rng: &mut ChaCha8Rng) -> BoundaryData {
    BoundaryData {
        u_in: rng.random_range(0.05..0.5),
        profile: if rng.random_bool(0.5) {
            InletProfile::Plug
        } else {
            InletProfile::Parabolic
        },
        rho_in: [0.0, 0.0],
        rho_out: [rng.random_range(0.0..0.2), rng.random_range(0.0..0.5)],
        theta_in: rng.random_range(330.0..370.0),
        theta_out: rng.random_range(330.0..370.0),
        theta_e: rng.random_range(330.0..370.0),
        e_cell: rng.random_range(0.4..1.0),
    }
}

fn desk_korn(disc: &Discretization) -> Result<f64, pemcell::Error> {
    Ok(estimate_korn_constant(disc, None, &LanczosOptions::default())?.with_safety().max(1.0))
}

/// A-posteriori energy estimates on 20 random datasets at 32x128, <= 300 s.
fn energy_estimates() -> Outcome {
    const DATASETS: usize = 20;
    const SLACK: f64 = 1e-9;
    const LIMIT: Duration = Duration::from_secs(300);
    let t = Instant::now();
    let base = desk_problem(desk_res(), BoundaryData::zero());
    let c_k = match desk_korn(&base.disc) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let opts = LedgerOptions::default();
    let eps = EpsilonVector::default();
    let cfg = PicardConfig {
        estimate_slack: SLACK,
        ..PicardConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut flow_checks, mut tec_checks, mut bad) = (0usize, 0usize, 0usize);
    let mut min_flow = f64::INFINITY;
    let mut min_tec = f64::INFINITY;
    for _ in 0..DATASETS {
        let p = base.with_data(random_data(&mut rng));
        let (q, scaled) = match scale_until_verdict(&p, 0.1, 40, &eps, c_k, &opts) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let ctx = EstimateContext {
            bounds: q.bounds(&opts),
            report: scaled.report,
        };
        let rep = match run_picard(&q, &cfg, Some(&ctx)) {
            Ok((_, r)) => r,
            Err(e) => return fail(e),
        };
        for r in &rep.records {
            if let (Some(h), Some(m)) = (r.flow_estimate_holds, r.flow_margin) {
                flow_checks += 1;
                bad += usize::from(!h);
                min_flow = min_flow.min(m);
            }
            if let (Some(h), Some(m)) = (r.tec_estimate_holds, r.tec_margin) {
                tec_checks += 1;
                bad += usize::from(!h);
                min_tec = min_tec.min(m);
            }
        }
    }
    let dt = t.elapsed();
    outcome(
        bad == 0 && flow_checks > 0 && tec_checks > 0 && dt <= LIMIT,
        format!(
            "{DATASETS} datasets, {flow_checks} flow + {tec_checks} TEC checks, {bad} violated (slack {SLACK:e}); min margins {min_flow:.3e} / {min_tec:.3e}; {:.1} s <= {} s",
            dt.as_secs_f64(),
            LIMIT.as_secs()
        ),
    )
}

/// Picard on the scaled desk data at 32x128.
fn fixed_point() -> Outcome {
    const LIMIT: Duration = Duration::from_secs(600);
    let t = Instant::now();
    let p = desk_problem(desk_res(), desk_boundary_data());
    let c_k = match desk_korn(&p.disc) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    let opts = LedgerOptions::default();
    let (q, scaled) = match scale_until_verdict(&p, 0.1, 40, &EpsilonVector::default(), c_k, &opts) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let ctx = EstimateContext {
        bounds: q.bounds(&opts),
        report: scaled.report.clone(),
    };
    let cfg = PicardConfig::default();
    let rep = match run_picard(&q, &cfg, Some(&ctx)) {
        Ok((_, r)) => r,
        Err(e) => return fail(e),
    };
    let dt = t.elapsed();
    let last = rep.records.last().map(|r| r.differences.iter().copied().fold(0.0f64, f64::max));
    let in_k = rep.always_in_k() == Some(true);
    outcome(
        scaled.report.verdict && rep.converged() && rep.records.len() <= 50 && in_k && dt <= LIMIT,
        format!(
            "data scale {:.0e}, verdict {}, {} iterations <= 50, last max difference {:.3e} <= 1e-8, K membership at every iterate: {in_k}; {:.1} s <= {} s",
            scaled.scale,
            scaled.report.verdict,
            rep.records.len(),
            last.unwrap_or(f64::NAN),
            dt.as_secs_f64(),
            LIMIT.as_secs()
        ),
    )
}

/// Observed L2 orders over three dyadic refinements.
fn manufactured() -> Outcome {
    const MIN_ORDER: f64 = 1.8;
    match convergence_study(
        &verification_geometry(),
        Resolution::uniform(2, 4),
        4,
        &verification_coefficients(),
        &PhysicalConstants::default(),
    ) {
        Ok(s) => {
            let orders: Vec<String> = s
                .fields
                .iter()
                .map(|f| format!("{:?} {:.3}", f.field, f.final_order()))
                .collect();
            outcome(
                s.passes(MIN_ORDER),
                format!("final orders [{}] >= {MIN_ORDER}", orders.join(", ")),
            )
        }
        Err(e) => fail(e),
    }
}

/// Oddness, saturation bound and reference values of the interface law.
fn butler_volmer_properties() -> Outcome {
    const POINTS: usize = 100_000;
    const ETA_MAX: f64 = 1.0;
    let c = CoefficientSet::desk();
    let k = PhysicalConstants::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, law, j0_expected) in [("anode", &c.anode, 1800.0), ("cathode", &c.cathode, 0.0132)] {
        let InterfaceLaw::ButlerVolmer { j0, j_lim, theta_ref } = *law else {
            return outcome(false, format!("{name} law is not Butler-Volmer"));
        };
        let b = k.gas_constant * theta_ref / k.faraday;
        let mut odd = true;
        let mut below = true;
        let mut monotone = true;
        let mut prev = f64::NEG_INFINITY;
        for i in 0..POINTS {
            let eta = -ETA_MAX + 2.0 * ETA_MAX * i as f64 / (POINTS - 1) as f64;
            let j = butler_volmer(eta, j0, j_lim, b);
            odd &= butler_volmer(-eta, j0, j_lim, b) == -j;
            below &= j.abs() < j_lim;
            monotone &= j >= prev;
            prev = j;
        }
        let zero = butler_volmer(0.0, j0, j_lim, b) == 0.0;
        ok &= odd && below && monotone && zero && j0 == j0_expected;
        notes.push(format!(
            "{name}: j0 {j0} (expect {j0_expected}), odd {odd}, |j| < j_L {below}, monotone {monotone}, j(0) = 0 {zero}"
        ));
    }
    outcome(ok, format!("{POINTS} points on [-{ETA_MAX}, {ETA_MAX}] V; {}", notes.join("; ")))
}

/// Closed-form roots against bisection over a 10 x 10 grid of (L, a).
fn roots() -> Outcome {
    const TOL: f64 = 1e-12;
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(f64::MIN_POSITIVE);
    let mut worst = 0.0f64;
    let mut errors = 0;
    for i in 0..10 {
        for j in 0..10 {
            let l = 10f64.powf(-3.0 + 3.0 * i as f64 / 9.0);
            let a = 10f64.powf(-4.0 + 6.0 * j as f64 / 9.0);
            let s = l.sqrt();
            let c1 = (l, 2.0 * (1.0 + 2.0 * 2f64.sqrt()) * s, 4.0 * a);
            let c2 = (l / 4.0, (0.5 + 2f64.sqrt()) * s, 0.5 * a);
            for (qa, qb, qc) in [c1, c2] {
                worst = worst.max(rel(positive_root(qa, qb, qc), positive_root_bisection(qa, qb, qc)));
            }
            errors += usize::from(compute_roots(l, a, 0.5 * a).is_err());
        }
    }
    outcome(
        worst <= TOL && errors == 0,
        format!("100 (L, a) points, worst relative gap {worst:.3e} <= {TOL:e}, {errors} root errors"),
    )
}

/// Korn estimates over three refinements of the 8x32 desk mesh.
fn korn() -> Outcome {
    match korn_refinement_sweep(&GeometrySpec::desk(), Resolution::uniform(8, 32), 3, &LanczosOptions::default()) {
        Ok(v) => {
            let vals: Vec<f64> = v.iter().map(|k| k.value).collect();
            let ok = vals.len() == 3 && vals.iter().all(|&c| c >= 1.0) && vals.windows(2).all(|w| w[1] >= w[0]);
            let shown: Vec<String> = vals.iter().map(|c| format!("{c:.6}")).collect();
            outcome(ok, format!("C_K = [{}], each >= 1 and non-decreasing", shown.join(", ")))
        }
        Err(e) => fail(e),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("inequality certification", inequalities),
        ("ledger sanity arithmetic", sanity),
        ("energy estimates a posteriori", energy_estimates),
        ("fixed-point behaviour", fixed_point),
        ("manufactured-solution convergence", manufactured),
        ("Butler-Volmer properties", butler_volmer_properties),
        ("root computation", roots),
        ("Korn estimate", korn),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += usize::from(!o.passed);
        println!("[{}] {}. {name}: {}", if o.passed { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
