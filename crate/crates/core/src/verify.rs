//! The invariant catalogue: every structural property the solver and
//! the node coupling promise, run against one scenario and folded into
//! a single report.
//!
//! Checks never abort the run — anything that goes wrong (a solve
//! failure, a non-finite field) becomes a failed entry with the error
//! in its detail column. The one scheduling rule: the inner-node mass
//! balance is only meaningful when the signed node fluxes actually
//! cancel, so that check is skipped when the energy condition fails.
//!
//! Randomized checks draw from a fixed seeded generator recorded in the
//! report, so identical inputs always produce identical reports.

use crate::boundary::BoundaryTrace;
use crate::bounds::{build_envelope, check_solution_bounds};
use crate::exprs::{parse, Expr};
use crate::graph::boundary_points;
use crate::solver::{
    build_grid, renormalization_residual, solve_coupled, solve_picard, uniqueness_probe,
    weak_residual, BetaKind, Scenario, SolutionField, SolveError,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Seed of the random-trace generator (recorded in the report).
    pub seed: u64,
    /// Number of random traces per algebraic check.
    pub trace_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { seed: 42, trace_samples: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckStatus {
    Pass,
    Fail,
    Skipped(String),
}

impl CheckStatus {
    pub fn label(&self) -> String {
        match self {
            CheckStatus::Pass => "pass".to_string(),
            CheckStatus::Fail => "fail".to_string(),
            CheckStatus::Skipped(reason) => format!("skipped ({reason})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    /// What invariant the check verifies, in plain words.
    pub property: &'static str,
    /// Worst violation found (0 when the property holds with slack).
    pub measured: f64,
    pub tolerance: f64,
    pub status: CheckStatus,
    /// Sub-measurements or the error that stopped the check.
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub checks: Vec<CheckReport>,
    pub seed: u64,
    pub trace_samples: usize,
}

impl VerifyReport {
    /// Overall verdict: no failed entries. Skipped entries do not fail
    /// the verdict on their own; whatever caused the skip already did.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn to_json(&self) -> String {
        let checks: Vec<_> = self
            .checks
            .iter()
            .map(|c| {
                serde_json::json!({
                    "name": c.name,
                    "property": c.property,
                    "measured": c.measured,
                    "tolerance": c.tolerance,
                    "status": c.status.label(),
                    "detail": c.detail,
                })
            })
            .collect();
        let doc = serde_json::json!({
            "verdict": if self.passed() { "pass" } else { "fail" },
            "seed": self.seed,
            "trace_samples": self.trace_samples,
            "checks": checks,
        });
        serde_json::to_string_pretty(&doc).unwrap()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<24} {:>13} {:>13}  {}\n",
            "check", "measured", "tolerance", "status"
        ));
        for c in &self.checks {
            out.push_str(&format!(
                "{:<24} {:>13} {:>13}  {}\n",
                c.name,
                format!("{:.3e}", c.measured),
                format!("{:.3e}", c.tolerance),
                c.status.label()
            ));
        }
        out.push_str(&format!("overall: {}\n", if self.passed() { "pass" } else { "fail" }));
        out
    }
}

enum CheckAnswer {
    Value { measured: f64, detail: String },
    Skip { reason: String },
}

type CheckResult = Result<CheckAnswer, String>;

fn finish(name: &'static str, property: &'static str, tolerance: f64, r: CheckResult) -> CheckReport {
    match r {
        Ok(CheckAnswer::Value { measured, detail }) => CheckReport {
            name,
            property,
            measured,
            tolerance,
            status: if measured <= tolerance { CheckStatus::Pass } else { CheckStatus::Fail },
            detail,
        },
        Ok(CheckAnswer::Skip { reason }) => CheckReport {
            name,
            property,
            measured: 0.0,
            tolerance,
            status: CheckStatus::Skipped(reason),
            detail: String::new(),
        },
        Err(message) => CheckReport {
            name,
            property,
            measured: f64::NAN,
            tolerance,
            status: CheckStatus::Fail,
            detail: message,
        },
    }
}

fn value(measured: f64, detail: String) -> CheckResult {
    Ok(CheckAnswer::Value { measured, detail })
}

/// (nu u) at every boundary point at time `t`, straight from the
/// velocity expressions.
fn nu_row(scn: &Scenario, t: f64) -> Result<Vec<f64>, String> {
    let mut row = Vec::with_capacity(2 * scn.net.num_edges());
    for e in 0..scn.net.num_edges() {
        row.push(-scn.u[e].eval(t, 0.0).map_err(|e| e.to_string())?);
        row.push(scn.u[e].eval(t, 1.0).map_err(|e| e.to_string())?);
    }
    Ok(row)
}

fn sup_cell_distance(a: &SolutionField, b: &SolutionField, scale_b: f64) -> f64 {
    let grid = &a.grid;
    let mut worst = 0.0f64;
    for n in 0..grid.num_levels() {
        for e in 0..grid.cells.len() {
            for i in 0..grid.cells[e] {
                worst = worst.max((a.cells[n][e][i] - scale_b * b.cells[n][e][i]).abs());
            }
        }
        for p in 0..a.trace.num_points() {
            worst = worst.max((a.trace.gamma_rho[n][p] - scale_b * b.trace.gamma_rho[n][p]).abs());
        }
    }
    worst
}

/// Run the whole catalogue against one scenario. Report order is fixed;
/// failures are entries, never errors.
pub fn run_all(scn: &Scenario, cfg: &VerifyConfig) -> VerifyReport {
    let base: Result<SolutionField, String> = solve_coupled(scn).map_err(|e| e.to_string());
    let fine: Result<(Scenario, SolutionField), String> = {
        let mut s = scn.clone();
        for c in s.cells.iter_mut() {
            *c *= 2;
        }
        solve_coupled(&s).map(|sol| (s, sol)).map_err(|e| e.to_string())
    };

    let mut checks = Vec::with_capacity(15);

    checks.push(finish(
        "energy-condition",
        "signed node fluxes cancel at every inner node",
        1e-10,
        check_energy(scn),
    ));
    let energy_failed = checks[0].status == CheckStatus::Fail;

    checks.push(finish(
        "contraction",
        "mixing output never carries more weighted flux than its input",
        1e-12,
        check_contraction(scn, cfg),
    ));
    checks.push(finish(
        "causality",
        "node coupling uses no future trace values",
        0.0,
        check_causality(scn, &base),
    ));
    checks.push(finish(
        "positivity",
        "nonnegative data produce nonnegative states",
        0.0,
        check_positivity(scn, &base),
    ));
    checks.push(finish(
        "sub-distributivity",
        "mixing of absolute values dominates the absolute mixing value",
        0.0,
        check_sub_distributivity(scn, cfg),
    ));
    checks.push(finish(
        "adjoint-identity",
        "mixing and its adjoint pair identically against trace/dual pairs",
        1e-12,
        check_adjoint(scn, cfg),
    ));
    checks.push(if energy_failed {
        finish(
            "node-mass-balance",
            "flux arriving at each inner node equals flux leaving it",
            1e-12,
            Ok(CheckAnswer::Skip { reason: "dependency failed".to_string() }),
        )
    } else {
        finish(
            "node-mass-balance",
            "flux arriving at each inner node equals flux leaving it",
            1e-12,
            check_mass_balance(scn, &base),
        )
    });
    checks.push(finish(
        "discrete-conservation",
        "mass change per step equals boundary flux plus sources",
        1e-12,
        check_conservation(&base),
    ));
    checks.push(finish(
        "comparison-principle",
        "raising boundary data never lowers any state value",
        0.0,
        check_comparison(scn, &base),
    ));
    checks.push(finish(
        "picard",
        "fixed-point inflow iterates grow monotonically to the coupled run",
        1e-10,
        check_picard(scn, &base),
    ));
    checks.push(finish(
        "bound-envelopes",
        "states stay inside the exponential barrier envelopes",
        1e-10,
        check_envelopes(scn, &base),
    ));
    checks.push(finish(
        "weak-residual",
        "test-function residual halves under grid refinement",
        0.125,
        check_weak(scn, &base, &fine),
    ));
    checks.push(finish(
        "renorm-residual",
        "nonlinearly transformed residuals halve under grid refinement",
        0.125,
        check_renorm(scn, &base, &fine),
    ));
    checks.push(finish(
        "uniqueness-probe",
        "edge iteration order cannot change the run",
        0.0,
        check_uniqueness(scn),
    ));
    checks.push(finish(
        "linearity",
        "doubling all data exactly doubles the run",
        0.0,
        check_linearity(scn, &base),
    ));

    VerifyReport { checks, seed: cfg.seed, trace_samples: cfg.trace_samples }
}

fn check_energy(scn: &Scenario) -> CheckResult {
    let op = scn.coupling().map_err(|e| e.to_string())?;
    if scn.net.inner_nodes().is_empty() {
        return value(0.0, "no inner nodes".to_string());
    }
    let grid = build_grid(scn).map_err(|e| e.to_string())?;
    let mut rows = Vec::with_capacity(grid.num_levels());
    let mut scale = 1.0f64;
    for n in 0..grid.num_levels() {
        let row = nu_row(scn, grid.time(n))?;
        for &v in &row {
            scale = scale.max(v.abs());
        }
        rows.push(row);
    }
    let worst = op
        .check_energy_condition(&rows)
        .into_iter()
        .fold(0.0f64, f64::max);
    value(worst / scale, format!("{} time levels audited", rows.len()))
}

fn check_contraction(scn: &Scenario, cfg: &VerifyConfig) -> CheckResult {
    let op = scn.coupling().map_err(|e| e.to_string())?;
    let points = boundary_points(&scn.net);
    let identity_weights = (0..scn.net.num_edges()).all(|e| op.weights().edge(e) == 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst = f64::NEG_INFINITY;
    let mut eq_worst = 0.0f64;
    let mut eq_count = 0usize;
    for _ in 0..cfg.trace_samples {
        let t = rng.random_range(0.0..=scn.t_final);
        let nu = nu_row(scn, t)?;
        let gamma: Vec<f64> = (0..nu.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let trace = BoundaryTrace {
            dt: 1.0,
            gamma_rho: vec![gamma.clone()],
            nu_u: vec![nu.clone()],
        };
        let (lhs, rhs) = op.check_contraction(&trace, 1.0);
        worst = worst.max((lhs - rhs) / rhs.max(1.0));

        // Equality sub-claim: a nonnegative trace carried only on inner
        // nodes is forwarded without loss — provided the fluxes cancel,
        // every inner node has inflow capacity and the norm weights are
        // uniform (the mixing average itself is unweighted).
        let scale = nu.iter().fold(1.0f64, |s, &v| s.max(v.abs()));
        let energy_ok = op
            .check_energy_condition(std::slice::from_ref(&nu))
            .into_iter()
            .fold(0.0f64, f64::max)
            <= 1e-10 * scale;
        let m = op.assemble_m(&nu);
        if identity_weights && energy_ok && !m.is_empty() && m.iter().all(|&v| v > 0.0) {
            let inner_gamma: Vec<f64> = gamma
                .iter()
                .zip(&points)
                .map(|(&g, pt)| if scn.net.is_inner(pt.node) { g.abs() } else { 0.0 })
                .collect();
            let trace = BoundaryTrace {
                dt: 1.0,
                gamma_rho: vec![inner_gamma],
                nu_u: vec![nu.clone()],
            };
            let (lhs, rhs) = op.check_contraction(&trace, 1.0);
            eq_worst = eq_worst.max((lhs - rhs).abs() / rhs.max(1.0));
            eq_count += 1;
        }
    }
    let detail = if eq_count > 0 {
        format!("equality defect {eq_worst:.3e} on {eq_count} eligible samples")
    } else {
        "no equality-eligible samples".to_string()
    };
    value(worst.max(0.0), detail)
}

fn check_causality(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let op = scn.coupling().map_err(|e| e.to_string())?;
    let cutoff = scn.t_final / 2.0;
    value(op.check_causality(&sol.trace, cutoff), format!("cutoff t = {cutoff}"))
}

fn check_positivity(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let grid = &sol.grid;
    // The property only speaks about nonnegative data.
    for e in 0..scn.net.num_edges() {
        for i in 0..grid.cells[e] {
            if scn.rho0[e].eval(0.0, grid.center(e, i)).map_err(|e| e.to_string())? < 0.0 {
                return Ok(CheckAnswer::Skip { reason: "data are signed".to_string() });
            }
        }
        for n in 0..grid.num_levels() {
            let t = grid.time(n);
            for i in 0..grid.cells[e] {
                if scn.f[e].eval(t, grid.center(e, i)).map_err(|e| e.to_string())? < 0.0 {
                    return Ok(CheckAnswer::Skip { reason: "data are signed".to_string() });
                }
            }
        }
    }
    for (_, expr) in &scn.rho_out {
        for n in 0..grid.num_levels() {
            if expr.eval(grid.time(n), 0.0).map_err(|e| e.to_string())? < 0.0 {
                return Ok(CheckAnswer::Skip { reason: "data are signed".to_string() });
            }
        }
    }
    let mut worst = 0.0f64;
    for n in 0..grid.num_levels() {
        for e in 0..grid.cells.len() {
            for &v in &sol.cells[n][e] {
                worst = worst.max(-v);
            }
        }
    }
    // worst never goes below zero, but max(0.0, -0.0) can leave a negative zero behind;
    // abs() normalizes the sign for reports.
    value(worst.abs(), String::new())
}

fn check_sub_distributivity(scn: &Scenario, cfg: &VerifyConfig) -> CheckResult {
    let op = scn.coupling().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for _ in 0..cfg.trace_samples {
        let t = rng.random_range(0.0..=scn.t_final);
        let nu = nu_row(scn, t)?;
        let gamma: Vec<f64> = (0..nu.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let gamma_abs: Vec<f64> = gamma.iter().map(|g| g.abs()).collect();
        let g = op.apply_g(&gamma, &nu);
        let g_abs = op.apply_g(&gamma_abs, &nu);
        for (gv, av) in g.iter().zip(&g_abs) {
            worst = worst.max(gv.abs() - av);
        }
    }
    value(worst, String::new())
}

fn check_adjoint(scn: &Scenario, cfg: &VerifyConfig) -> CheckResult {
    let op = scn.coupling().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut worst = 0.0f64;
    for _ in 0..cfg.trace_samples {
        let t = rng.random_range(0.0..=scn.t_final);
        let nu = nu_row(scn, t)?;
        let rho: Vec<f64> = (0..nu.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let dual: Vec<f64> = (0..nu.len()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let gu = op.apply_gu(&rho, &nu);
        let gu_adj = op.apply_gu_adjoint(&dual, &nu);
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for p in 0..nu.len() {
            lhs += dual[p] * (-nu[p]).max(0.0) * gu[p];
            rhs += gu_adj[p] * nu[p].max(0.0) * rho[p];
        }
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0));
    }
    value(worst, String::new())
}

fn check_mass_balance(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let op = scn.coupling().map_err(|e| e.to_string())?;
    if scn.net.inner_nodes().is_empty() {
        return value(0.0, "no inner nodes".to_string());
    }
    let mut worst = 0.0f64;
    for n in 0..sol.trace.num_levels() {
        let defects = op.check_mass_balance(&sol.trace.gamma_rho[n], &sol.trace.nu_u[n]);
        worst = defects.into_iter().fold(worst, f64::max);
    }
    value(worst, String::new())
}

fn check_conservation(base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let grid = &sol.grid;
    let mut scale = 1.0f64;
    for d in &sol.diagnostics {
        scale = scale.max(d.mass.abs());
    }
    let mut worst = 0.0f64;
    for n in 0..grid.steps {
        let d = &sol.diagnostics[n];
        let next = &sol.diagnostics[n + 1];
        let residual = next.mass - d.mass - grid.dt * (d.source - d.boundary_flux);
        worst = worst.max(residual.abs());
    }
    value(worst / scale, format!("{} steps", grid.steps))
}

fn check_comparison(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let mut hi = scn.clone();
    for (_, expr) in hi.rho_out.iter_mut() {
        *expr = Expr::Add(Box::new(expr.clone()), Box::new(Expr::Num(0.5)));
    }
    let sol_hi = solve_coupled(&hi).map_err(|e| e.to_string())?;
    let grid = &sol.grid;
    let mut worst = 0.0f64;
    for n in 0..grid.num_levels() {
        for e in 0..grid.cells.len() {
            for i in 0..grid.cells[e] {
                worst = worst.max(sol.cells[n][e][i] - sol_hi.cells[n][e][i]);
            }
        }
    }
    value(worst.max(0.0), "outer data raised by 0.5".to_string())
}

fn check_picard(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    match solve_picard(scn, 1e-10, 100) {
        Err(SolveError::NegativeData { .. }) => {
            Ok(CheckAnswer::Skip { reason: "data are signed".to_string() })
        }
        Err(e) => Err(e.to_string()),
        Ok(outcome) => {
            let measured = sup_cell_distance(&outcome.solution, sol, 1.0);
            value(measured, format!("{} iterations", outcome.iterations))
        }
    }
}

fn check_envelopes(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let env = build_envelope(scn, &sol.grid).map_err(|e| e.to_string())?;
    let (upper, lower) = check_solution_bounds(sol, &env);
    let detail = match (env.extremes.rho_min, lower) {
        (Some(m), Some(l)) => format!(
            "rho_max {:.3e}, rho_min {m:.3e}, floor breach {l:.3e}",
            env.extremes.rho_max
        ),
        _ => format!("rho_max {:.3e}, no positive floor", env.extremes.rho_max),
    };
    value(upper.max(lower.unwrap_or(0.0)), detail)
}

const RESIDUAL_FLOOR: f64 = 1e-12;

fn refinement_ratio(coarse: f64, fine: f64) -> Option<f64> {
    if coarse.max(fine) <= RESIDUAL_FLOOR {
        None
    } else {
        Some(fine / coarse)
    }
}

fn check_weak(
    scn: &Scenario,
    base: &Result<SolutionField, String>,
    fine: &Result<(Scenario, SolutionField), String>,
) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let (scn_f, sol_f) = fine.as_ref().map_err(|e| e.clone())?;
    let phi_expr = parse("x*(1-x)*t").unwrap();
    let phi = vec![phi_expr; scn.net.num_edges()];
    let r_c = weak_residual(sol, scn, &phi, 0.0, scn.t_final).map_err(|e| e.to_string())?;
    let r_f = weak_residual(sol_f, scn_f, &phi, 0.0, scn.t_final).map_err(|e| e.to_string())?;
    match refinement_ratio(r_c, r_f) {
        None => value(0.0, "residuals at rounding floor".to_string()),
        Some(ratio) => value(
            (ratio - 0.5).abs(),
            format!("coarse {r_c:.3e}, fine {r_f:.3e}, ratio {ratio:.3}"),
        ),
    }
}

fn check_renorm(
    scn: &Scenario,
    base: &Result<SolutionField, String>,
    fine: &Result<(Scenario, SolutionField), String>,
) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let (scn_f, sol_f) = fine.as_ref().map_err(|e| e.clone())?;
    let phi_expr = parse("x*(1-x)*t").unwrap();
    let phi = vec![phi_expr; scn.net.num_edges()];
    let mut worst = 0.0f64;
    let mut details = Vec::new();
    for (beta, label) in [(BetaKind::Abs, "abs"), (BetaKind::Square, "square")] {
        let r_c = renormalization_residual(sol, scn, beta, &phi, 0.0, scn.t_final)
            .map_err(|e| e.to_string())?;
        let r_f = renormalization_residual(sol_f, scn_f, beta, &phi, 0.0, scn.t_final)
            .map_err(|e| e.to_string())?;
        match refinement_ratio(r_c, r_f) {
            None => details.push(format!("{label}: floor")),
            Some(ratio) => {
                worst = worst.max((ratio - 0.5).abs());
                details.push(format!("{label}: ratio {ratio:.3}"));
            }
        }
    }
    value(worst, details.join(", "))
}

fn check_uniqueness(scn: &Scenario) -> CheckResult {
    let d = uniqueness_probe(scn).map_err(|e| e.to_string())?;
    value(d, String::new())
}

fn check_linearity(scn: &Scenario, base: &Result<SolutionField, String>) -> CheckResult {
    let sol = base.as_ref().map_err(|e| e.clone())?;
    let double = |expr: &mut Expr| {
        *expr = Expr::Mul(Box::new(Expr::Num(2.0)), Box::new(expr.clone()));
    };
    let mut scaled = scn.clone();
    scaled.rho0.iter_mut().for_each(double);
    scaled.f.iter_mut().for_each(double);
    for (_, expr) in scaled.rho_out.iter_mut() {
        double(expr);
    }
    let sol2 = solve_coupled(&scaled).map_err(|e| e.to_string())?;
    value(sup_cell_distance(&sol2, sol, 2.0), "all data doubled".to_string())
}
