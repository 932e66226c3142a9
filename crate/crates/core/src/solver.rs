//! Explicit first-order upwind finite-volume discretization of the
//! coupled edge transport system, plus the studies built on top of it:
//! Picard iteration of the node coupling, weak/renormalized residual
//! quadratures, stability and uniqueness probes, and source splitting.
//!
//! The scheme is deliberately low-order: a monotone upwind update makes
//! the structural properties of the continuous problem (comparison,
//! positivity, max principle, node mass balance) hold *exactly* in
//! floating point — coefficients are nonnegative and every update is a
//! fixed-order sum of products with nonnegative weights — so the test
//! suite can assert them without tolerance fudge. Accuracy is first
//! order and that is a feature here, not a bug.
//!
//! Updates are written in coefficient form,
//!
//! ```text
//! rho_i' = a_i rho_i + p_i rho_{i-1} + q_i rho_{i+1} + dt f_i,
//! a_i = 1 - lam (u_R^+ + u_L^-) - dt c_i,   p_i = lam u_L^+,   q_i = lam u_R^-
//! ```
//!
//! with face velocities sampled at the left time endpoint. At boundary
//! faces the neighbor value is the coupling inflow value when flow
//! enters and the adjacent cell when it leaves; the leaving value is the
//! discrete trace.

use crate::boundary::{
    BoundaryTrace, CouplingError, CouplingMode, CouplingOperator, WeightMatrix,
};
use crate::exprs::{EvalError, Expr, Func2};
use crate::graph::{boundary_points, Network, NodeId};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt;

#[derive(Debug, Clone)]
pub enum SolveError {
    /// Time step too large for the velocities actually encountered.
    Cfl { step: usize, edge: usize, ratio: f64 },
    NonFinite { step: usize, edge: usize },
    Eval(EvalError),
    Coupling(CouplingError),
    /// The supplied du/dx expression disagrees with finite differences
    /// of u.
    VelocityDerivativeMismatch { edge: usize, t: f64, x: f64, expr_value: f64, fd_value: f64 },
    BadParameter { what: String },
    /// Positivity preconditions of the fixed-point iteration.
    NegativeData { what: String },
    /// Fixed-point inflow iterates must be nondecreasing; a breach is a
    /// solver bug, not a data problem.
    NonMonotoneIterates { iteration: usize, level: usize, point: usize },
    PicardExhausted { iterations: usize, last_delta: f64 },
    EnergyCondition { node: NodeId, residual: f64 },
    /// Stability studies only support perturbation shapes g = g(t).
    SpaceDependentPerturbation,
    SplitConditionFailed { detail: String },
}

impl fmt::Display for SolveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolveError::Cfl { step, edge, ratio } => write!(
                f,
                "CFL violation at step {step}, edge {edge}: lambda*|u| = {ratio} exceeds 1"
            ),
            SolveError::NonFinite { step, edge } => {
                write!(f, "non-finite state at step {step}, edge {edge}")
            }
            SolveError::Eval(e) => write!(f, "field evaluation failed: {e}"),
            SolveError::Coupling(e) => write!(f, "coupling setup failed: {e}"),
            SolveError::VelocityDerivativeMismatch { edge, t, x, expr_value, fd_value } => write!(
                f,
                "du/dx expression on edge {edge} disagrees with finite differences of u at (t={t}, x={x}): {expr_value} vs {fd_value}"
            ),
            SolveError::BadParameter { what } => write!(f, "bad parameter: {what}"),
            SolveError::NegativeData { what } => {
                write!(f, "fixed-point iteration needs nonnegative data: {what}")
            }
            SolveError::NonMonotoneIterates { iteration, level, point } => write!(
                f,
                "inflow iterate {iteration} decreased at level {level}, point {point}; this indicates a solver bug"
            ),
            SolveError::PicardExhausted { iterations, last_delta } => write!(
                f,
                "fixed-point iteration did not converge in {iterations} iterations (last delta {last_delta:e})"
            ),
            SolveError::EnergyCondition { node, residual } => write!(
                f,
                "perturbed velocity breaks the node energy condition at node {node} (residual {residual:e})"
            ),
            SolveError::SpaceDependentPerturbation => {
                write!(f, "stability perturbation shape must not depend on x")
            }
            SolveError::SplitConditionFailed { detail } => {
                write!(f, "source splitting precondition failed: {detail}")
            }
        }
    }
}

impl std::error::Error for SolveError {}

impl From<EvalError> for SolveError {
    fn from(e: EvalError) -> Self {
        SolveError::Eval(e)
    }
}

impl From<CouplingError> for SolveError {
    fn from(e: CouplingError) -> Self {
        SolveError::Coupling(e)
    }
}

/// A complete problem statement: network, per-edge fields, node data and
/// discretization parameters.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub net: Network,
    pub u: Vec<Expr>,
    pub u_x: Vec<Expr>,
    pub c: Vec<Expr>,
    pub f: Vec<Expr>,
    pub rho0: Vec<Expr>,
    /// Outer-node data, in `t`.
    pub rho_out: Vec<(NodeId, Expr)>,
    pub t_final: f64,
    pub cfl: f64,
    pub cells: Vec<usize>,
    pub mode: CouplingMode,
    pub weights: Option<WeightMatrix>,
    /// Requested snapshot times (mapped to nearest grid levels).
    pub snapshots: Vec<f64>,
    /// Norm exponents used by reporting code.
    pub p_norms: Vec<f64>,
}

impl Scenario {
    pub fn coupling(&self) -> Result<CouplingOperator, CouplingError> {
        CouplingOperator::new(
            self.net.clone(),
            self.mode,
            self.rho_out.clone(),
            self.weights.clone(),
        )
    }

    /// Structural checks plus the finite-difference audit of the
    /// user-supplied du/dx expressions. Sample points are drawn from a
    /// fixed-seed generator so validation is reproducible.
    pub fn validate(&self) -> Result<(), SolveError> {
        let e = self.net.num_edges();
        for (name, len) in [
            ("u", self.u.len()),
            ("u_x", self.u_x.len()),
            ("c", self.c.len()),
            ("f", self.f.len()),
            ("rho0", self.rho0.len()),
            ("cells", self.cells.len()),
        ] {
            if len != e {
                return Err(SolveError::BadParameter {
                    what: format!("{name} has {len} entries for {e} edges"),
                });
            }
        }
        if !(self.t_final.is_finite() && self.t_final > 0.0) {
            return Err(SolveError::BadParameter { what: format!("T = {}", self.t_final) });
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SolveError::BadParameter { what: format!("cfl = {}", self.cfl) });
        }
        for (e, &n) in self.cells.iter().enumerate() {
            if n == 0 {
                return Err(SolveError::BadParameter { what: format!("edge {e} has 0 cells") });
            }
        }
        // Builds and drops the operator to surface coupling data problems.
        self.coupling()?;

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        for edge in 0..e {
            for _ in 0..16 {
                let t = rng.random_range(0.0..1.0) * self.t_final;
                // Stay inside a band so the stencil never leaves [0,1].
                let x = 0.05 + 0.9 * rng.random_range(0.0..1.0);
                let up = self.u[edge].eval(t, x + h)?;
                let dn = self.u[edge].eval(t, x - h)?;
                let fd = (up - dn) / (2.0 * h);
                let ux = self.u_x[edge].eval(t, x)?;
                if (fd - ux).abs() > 1e-6 * ux.abs().max(1.0) {
                    return Err(SolveError::VelocityDerivativeMismatch {
                        edge,
                        t,
                        x,
                        expr_value: ux,
                        fd_value: fd,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Uniform-in-time grid: per-edge cell widths and one global time step.
#[derive(Debug, Clone)]
pub struct EdgeGrid {
    pub cells: Vec<usize>,
    pub dx: Vec<f64>,
    pub dt: f64,
    pub steps: usize,
    pub t_final: f64,
}

impl EdgeGrid {
    pub fn center(&self, e: usize, i: usize) -> f64 {
        (i as f64 + 0.5) / self.cells[e] as f64
    }

    pub fn face(&self, e: usize, j: usize) -> f64 {
        j as f64 / self.cells[e] as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }

    pub fn num_levels(&self) -> usize {
        self.steps + 1
    }

    /// Grid level closest to time `t`.
    pub fn level_near(&self, t: f64) -> usize {
        let n = (t / self.dt).round();
        (n.max(0.0) as usize).min(self.steps)
    }

    fn with_steps(scn: &Scenario, steps: usize) -> EdgeGrid {
        EdgeGrid {
            cells: scn.cells.clone(),
            dx: scn.cells.iter().map(|&n| 1.0 / n as f64).collect(),
            dt: scn.t_final / steps as f64,
            steps,
            t_final: scn.t_final,
        }
    }
}

/// Time-step count needed for the scenario (velocity CFL plus a cap on
/// dt*|c| so the reaction term cannot flip update coefficients).
fn required_steps(scn: &Scenario) -> Result<usize, SolveError> {
    let t_samples = 256;
    let mut umax = 0.0f64;
    let mut cmax = 0.0f64;
    for e in 0..scn.net.num_edges() {
        let n = scn.cells[e];
        for k in 0..=t_samples {
            let t = scn.t_final * k as f64 / t_samples as f64;
            for j in 0..=n {
                umax = umax.max(scn.u[e].eval(t, j as f64 / n as f64)?.abs());
            }
            for i in 0..n {
                cmax = cmax.max(scn.c[e].eval(t, (i as f64 + 0.5) / n as f64)?.abs());
            }
        }
    }
    let dx_min = scn.cells.iter().map(|&n| 1.0 / n as f64).fold(f64::INFINITY, f64::min);
    let mut steps = 1usize;
    if umax > 0.0 {
        let bound = scn.cfl * dx_min / umax;
        steps = steps.max((scn.t_final / bound - 1e-9).ceil() as usize);
    }
    if cmax > 0.0 {
        steps = steps.max((4.0 * scn.t_final * cmax - 1e-9).ceil() as usize);
    }
    Ok(steps)
}

pub fn build_grid(scn: &Scenario) -> Result<EdgeGrid, SolveError> {
    Ok(EdgeGrid::with_steps(scn, required_steps(scn)?))
}

/// Per-level bookkeeping: total mass, boundary flux sum and source
/// integral of the state at that level.
#[derive(Debug, Clone, Copy)]
pub struct StepDiagnostics {
    pub t: f64,
    pub mass: f64,
    /// Sum over all boundary points of (nu u) * (trace).
    pub boundary_flux: f64,
    /// Integral of f - c*rho over the network.
    pub source: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionField {
    pub grid: EdgeGrid,
    /// Cell averages, indexed [level][edge][cell].
    pub cells: Vec<Vec<Vec<f64>>>,
    pub trace: BoundaryTrace,
    /// Requested snapshot times with the level each was mapped to.
    pub snapshots: Vec<(f64, usize)>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl SolutionField {
    pub fn final_level(&self) -> usize {
        self.grid.steps
    }

    pub fn mass(&self, level: usize) -> f64 {
        let mut m = 0.0;
        for (e, cells) in self.cells[level].iter().enumerate() {
            let mut edge = 0.0;
            for &v in cells {
                edge += v;
            }
            m += edge * self.grid.dx[e];
        }
        m
    }
}

/// Where inflow values come from during a run: evaluated from the node
/// coupling each step, or read from a precomputed per-level table
/// (the fixed-point iteration drives the solver this way).
pub enum InflowMode<'a> {
    Coupled,
    Table(&'a [Vec<f64>]),
}

fn face_velocities(scn: &Scenario, grid: &EdgeGrid, t: f64) -> Result<Vec<Vec<f64>>, EvalError> {
    let mut out = Vec::with_capacity(scn.net.num_edges());
    for e in 0..scn.net.num_edges() {
        let n = grid.cells[e];
        let mut w = Vec::with_capacity(n + 1);
        for j in 0..=n {
            w.push(scn.u[e].eval(t, j as f64 / n as f64)?);
        }
        out.push(w);
    }
    Ok(out)
}

/// (nu u) at every boundary point, from per-edge face velocities.
fn nu_u_row(faces: &[Vec<f64>]) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * faces.len());
    for w in faces {
        row.push(-w[0]);
        row.push(w[w.len() - 1]);
    }
    row
}

pub fn solve_coupled(scn: &Scenario) -> Result<SolutionField, SolveError> {
    solve(scn, InflowMode::Coupled, None)
}

pub fn solve(
    scn: &Scenario,
    mode: InflowMode<'_>,
    edge_order: Option<&[usize]>,
) -> Result<SolutionField, SolveError> {
    scn.validate()?;
    let grid = build_grid(scn)?;
    solve_on_grid(scn, &grid, mode, edge_order)
}

fn solve_on_grid(
    scn: &Scenario,
    grid: &EdgeGrid,
    mode: InflowMode<'_>,
    edge_order: Option<&[usize]>,
) -> Result<SolutionField, SolveError> {
    let coupling = scn.coupling()?;
    let num_edges = scn.net.num_edges();
    let points = boundary_points(&scn.net);
    let default_order: Vec<usize> = (0..num_edges).collect();
    let order = edge_order.unwrap_or(&default_order);
    if let InflowMode::Table(tbl) = &mode {
        if tbl.len() != grid.num_levels() {
            return Err(SolveError::BadParameter {
                what: format!(
                    "inflow table has {} levels, grid has {}",
                    tbl.len(),
                    grid.num_levels()
                ),
            });
        }
    }

    // Initial state: midpoint sampling of rho0 (first-order consistent
    // with cell averages and preserves data bounds).
    let mut state: Vec<Vec<f64>> = Vec::with_capacity(num_edges);
    for e in 0..num_edges {
        let n = grid.cells[e];
        let mut cells = Vec::with_capacity(n);
        for i in 0..n {
            cells.push(scn.rho0[e].eval(0.0, grid.center(e, i))?);
        }
        state.push(cells);
    }

    let mut cells_hist = Vec::with_capacity(grid.num_levels());
    let mut gamma_levels: Vec<Vec<f64>> = Vec::with_capacity(grid.num_levels());
    let mut nu_levels: Vec<Vec<f64>> = Vec::with_capacity(grid.num_levels());
    let mut diagnostics = Vec::with_capacity(grid.num_levels());

    let mut faces = face_velocities(scn, grid, 0.0)?;
    for n in 0..=grid.steps {
        let t = grid.time(n);
        let nu_row = nu_u_row(&faces);

        // Trace candidates: adjacent cell value everywhere; inflow
        // entries are overwritten with the coupling value actually fed
        // to the step.
        let mut gamma: Vec<f64> = points
            .iter()
            .map(|p| {
                let cells = &state[p.edge];
                if p.endpoint == 0 {
                    cells[0]
                } else {
                    cells[cells.len() - 1]
                }
            })
            .collect();
        let inflow: Vec<f64> = match &mode {
            InflowMode::Coupled => coupling.apply_h(&gamma, &nu_row, t)?,
            InflowMode::Table(tbl) => tbl[n].clone(),
        };
        for (p, g) in gamma.iter_mut().enumerate() {
            if nu_row[p] < 0.0 {
                *g = inflow[p];
            }
        }

        // Diagnostics for this level (mass before the step, fluxes and
        // sources evaluated at the level time).
        let mut mass = 0.0;
        let mut source = 0.0;
        for e in 0..num_edges {
            let mut edge_mass = 0.0;
            let mut edge_src = 0.0;
            for (i, &rho) in state[e].iter().enumerate() {
                edge_mass += rho;
                let x = grid.center(e, i);
                edge_src += scn.f[e].eval(t, x)? - scn.c[e].eval(t, x)? * rho;
            }
            mass += edge_mass * grid.dx[e];
            source += edge_src * grid.dx[e];
        }
        let mut boundary_flux = 0.0;
        for p in 0..gamma.len() {
            boundary_flux += nu_row[p] * gamma[p];
        }
        diagnostics.push(StepDiagnostics { t, mass, boundary_flux, source });

        cells_hist.push(state.clone());
        gamma_levels.push(gamma.clone());
        nu_levels.push(nu_row.clone());
        if n == grid.steps {
            break;
        }

        let faces_next = face_velocities(scn, grid, grid.time(n + 1))?;
        for e in 0..num_edges {
            let lam = grid.dt / grid.dx[e];
            let mut m = 0.0f64;
            for j in 0..faces[e].len() {
                m = m.max(faces[e][j].abs()).max(faces_next[e][j].abs());
            }
            if lam * m > 1.0 + 1e-12 {
                return Err(SolveError::Cfl { step: n, edge: e, ratio: lam * m });
            }
        }

        let mut next = state.clone();
        for &e in order {
            let w = &faces[e];
            let nc = grid.cells[e];
            let lam = grid.dt / grid.dx[e];
            let left_in = inflow[2 * e];
            let right_in = inflow[2 * e + 1];
            let edge_state = &state[e];
            let out = &mut next[e];
            for i in 0..nc {
                let x = grid.center(e, i);
                let c_i = scn.c[e].eval(t, x)?;
                let f_i = scn.f[e].eval(t, x)?;
                let wl = w[i];
                let wr = w[i + 1];
                let s = lam * wr.max(0.0) + lam * (-wl).max(0.0);
                let a = (1.0 - s) - grid.dt * c_i;
                let left_val = if i == 0 { left_in } else { edge_state[i - 1] };
                let right_val = if i + 1 == nc { right_in } else { edge_state[i + 1] };
                // Fixed evaluation order; nonnegative coefficients make
                // this monotone in each input value.
                let mut v = a * edge_state[i];
                v += lam * wl.max(0.0) * left_val;
                v += lam * (-wr).max(0.0) * right_val;
                v += grid.dt * f_i;
                out[i] = v;
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(SolveError::NonFinite { step: n, edge: e });
            }
        }
        state = next;
        faces = faces_next;
    }

    let trace = BoundaryTrace { dt: grid.dt, gamma_rho: gamma_levels, nu_u: nu_levels };
    let snapshots = scn.snapshots.iter().map(|&t| (t, grid.level_near(t))).collect();
    Ok(SolutionField { grid: grid.clone(), cells: cells_hist, trace, snapshots, diagnostics })
}

/// Result of the node fixed-point iteration.
#[derive(Debug)]
pub struct PicardOutcome {
    pub solution: SolutionField,
    /// Number of full solves performed.
    pub iterations: usize,
    /// Inflow tables in iteration order, [iterate][level][point]. The
    /// last entry is the table whose change fell below tolerance.
    pub inflow_history: Vec<Vec<Vec<f64>>>,
}

/// Fixed-point iteration on the node inflow: start from a zero trace,
/// repeatedly solve with the inflow table H(previous trace). Requires
/// nonnegative data, which makes the iterates pointwise nondecreasing —
/// exactly, since the scheme is monotone in floating point too.
pub fn solve_picard(
    scn: &Scenario,
    tol: f64,
    max_iter: usize,
) -> Result<PicardOutcome, SolveError> {
    scn.validate()?;
    let grid = build_grid(scn)?;
    let coupling = scn.coupling()?;
    if max_iter == 0 {
        return Err(SolveError::BadParameter { what: "max_iter = 0".into() });
    }

    // Positivity preconditions, sampled on the full grid.
    for e in 0..scn.net.num_edges() {
        for i in 0..grid.cells[e] {
            let v = scn.rho0[e].eval(0.0, grid.center(e, i))?;
            if v < 0.0 {
                return Err(SolveError::NegativeData {
                    what: format!("rho0 on edge {e}: value {v}"),
                });
            }
        }
        for n in 0..=grid.steps {
            let t = grid.time(n);
            for i in 0..grid.cells[e] {
                let v = scn.f[e].eval(t, grid.center(e, i))?;
                if v < 0.0 {
                    return Err(SolveError::NegativeData {
                        what: format!("f on edge {e} at t={t}: value {v}"),
                    });
                }
            }
        }
    }
    for (v, expr) in &scn.rho_out {
        for n in 0..=grid.steps {
            let t = grid.time(n);
            let val = expr.eval(t, 0.0)?;
            if val < 0.0 {
                return Err(SolveError::NegativeData {
                    what: format!("outer data at node {v}, t={t}: value {val}"),
                });
            }
        }
    }

    let nu_rows: Vec<Vec<f64>> = (0..=grid.steps)
        .map(|n| Ok(nu_u_row(&face_velocities(scn, &grid, grid.time(n))?)))
        .collect::<Result<_, EvalError>>()?;
    let num_points = 2 * scn.net.num_edges();

    let zero_trace = vec![0.0; num_points];
    let mut table_prev: Vec<Vec<f64>> = (0..=grid.steps)
        .map(|n| coupling.apply_h(&zero_trace, &nu_rows[n], grid.time(n)))
        .collect::<Result<_, EvalError>>()?;
    let mut history = vec![table_prev.clone()];
    let mut sol = solve_on_grid(scn, &grid, InflowMode::Table(&table_prev), None)?;
    let mut iterations = 1usize;

    loop {
        let mut table_next = Vec::with_capacity(grid.num_levels());
        for n in 0..=grid.steps {
            table_next.push(coupling.apply_h(
                &sol.trace.gamma_rho[n],
                &nu_rows[n],
                grid.time(n),
            )?);
        }
        let mut delta = 0.0f64;
        for n in 0..=grid.steps {
            for p in 0..num_points {
                if table_next[n][p] < table_prev[n][p] {
                    return Err(SolveError::NonMonotoneIterates {
                        iteration: iterations,
                        level: n,
                        point: p,
                    });
                }
                delta = delta.max(table_next[n][p] - table_prev[n][p]);
            }
        }
        history.push(table_next.clone());
        if delta <= tol {
            return Ok(PicardOutcome { solution: sol, iterations, inflow_history: history });
        }
        if iterations >= max_iter {
            return Err(SolveError::PicardExhausted { iterations, last_delta: delta });
        }
        sol = solve_on_grid(scn, &grid, InflowMode::Table(&table_next), None)?;
        iterations += 1;
        table_prev = table_next;
    }
}

/// Nonlinearities for the renormalized residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaKind {
    Abs,
    Square,
    /// beta(s) = (s - s0)^+.
    PlusShift(f64),
}

impl BetaKind {
    pub fn beta(&self, s: f64) -> f64 {
        match *self {
            BetaKind::Abs => s.abs(),
            BetaKind::Square => s * s,
            BetaKind::PlusShift(s0) => (s - s0).max(0.0),
        }
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        match *self {
            BetaKind::Abs => {
                if s > 0.0 {
                    1.0
                } else if s < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            BetaKind::Square => 2.0 * s,
            BetaKind::PlusShift(s0) => {
                if s > s0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn residual_levels(grid: &EdgeGrid, t0: f64, t1: f64) -> Result<(usize, usize), SolveError> {
    let n0 = grid.level_near(t0);
    let n1 = grid.level_near(t1);
    if n1 <= n0 {
        return Err(SolveError::BadParameter {
            what: format!("empty residual interval [{t0}, {t1}]"),
        });
    }
    Ok((n0, n1))
}

/// Quadrature of the distributional identity the solution has to
/// satisfy against a test function: interior transport terms, source
/// term, boundary trace term and the initial/final pairing. First-order
/// consistent, and exactly telescoping for constant states.
pub fn weak_residual(
    sol: &SolutionField,
    scn: &Scenario,
    phi: &[Expr],
    t0: f64,
    t1: f64,
) -> Result<f64, SolveError> {
    renorm_core(sol, scn, None, phi, t0, t1)
}

/// Same quadrature with the state passed through the nonlinearity
/// `beta`, including the divergence correction
/// `-phi * du/dx * (beta'(rho) rho - beta(rho))` and the chain-rule
/// source `-phi * beta'(rho) (c rho - f)`.
pub fn renormalization_residual(
    sol: &SolutionField,
    scn: &Scenario,
    beta: BetaKind,
    phi: &[Expr],
    t0: f64,
    t1: f64,
) -> Result<f64, SolveError> {
    renorm_core(sol, scn, Some(beta), phi, t0, t1)
}

fn renorm_core(
    sol: &SolutionField,
    scn: &Scenario,
    beta: Option<BetaKind>,
    phi: &[Expr],
    t0: f64,
    t1: f64,
) -> Result<f64, SolveError> {
    if phi.len() != scn.net.num_edges() {
        return Err(SolveError::BadParameter {
            what: format!("{} test functions for {} edges", phi.len(), scn.net.num_edges()),
        });
    }
    let grid = &sol.grid;
    let (n0, n1) = residual_levels(grid, t0, t1)?;
    let b = |s: f64| beta.map_or(s, |k| k.beta(s));
    let dt = grid.dt;
    let mut r = 0.0;

    for e in 0..scn.net.num_edges() {
        let dx = grid.dx[e];
        for n in n0..n1 {
            let t = grid.time(n);
            let t_next = grid.time(n + 1);
            for i in 0..grid.cells[e] {
                let x = grid.center(e, i);
                let rho = sol.cells[n][e][i];
                let bs = b(rho);
                let phi_here = phi[e].eval(t, x)?;
                // Time difference quotient against beta(rho).
                r += bs * (phi[e].eval(t_next, x)? - phi_here) * dx;
                // Space difference quotient over the faces of the cell.
                let u_c = scn.u[e].eval(t, x)?;
                r += dt
                    * bs
                    * u_c
                    * (phi[e].eval(t, grid.face(e, i + 1))? - phi[e].eval(t, grid.face(e, i))?);
                match beta {
                    None => {
                        r += dt * (scn.f[e].eval(t, x)? - scn.c[e].eval(t, x)? * rho)
                            * phi_here
                            * dx;
                    }
                    Some(k) => {
                        let bp = k.beta_prime(rho);
                        let chain =
                            -bp * (scn.c[e].eval(t, x)? * rho - scn.f[e].eval(t, x)?);
                        let div = -scn.u_x[e].eval(t, x)? * (bp * rho - bs);
                        r += dt * (chain + div) * phi_here * dx;
                    }
                }
            }
        }
        // Initial / final pairing on this edge.
        let t_start = grid.time(n0);
        let t_end = grid.time(n1);
        for i in 0..grid.cells[e] {
            let x = grid.center(e, i);
            r += b(sol.cells[n0][e][i]) * phi[e].eval(t_start, x)? * dx;
            r -= b(sol.cells[n1][e][i]) * phi[e].eval(t_end, x)? * dx;
        }
    }

    // Boundary trace term.
    let points = boundary_points(&scn.net);
    for n in n0..n1 {
        let t = grid.time(n);
        for (p, bp) in points.iter().enumerate() {
            let x_end = if bp.endpoint == 0 { 0.0 } else { 1.0 };
            let nu_u = sol.trace.nu_u[n][p];
            let g = sol.trace.gamma_rho[n][p];
            r -= dt * nu_u * b(g) * phi[bp.edge].eval(t, x_end)?;
        }
    }
    Ok(r.abs())
}

/// Distance table of a velocity-perturbation family `u + delta_k g`
/// against the base solution, all runs on one common grid. `g` must not
/// depend on `x` so the supplied du/dx expressions stay valid, and each
/// perturbed velocity must still satisfy the inner-node energy
/// condition.
pub fn stability_study(
    scn: &Scenario,
    g: &Expr,
    deltas: &[f64],
    p: f64,
) -> Result<Vec<f64>, SolveError> {
    if g.depends_on_x() {
        return Err(SolveError::SpaceDependentPerturbation);
    }
    scn.validate()?;
    let perturbed: Vec<Scenario> = deltas
        .iter()
        .map(|&d| {
            let mut s = scn.clone();
            for u in s.u.iter_mut() {
                *u = Expr::Add(
                    Box::new(u.clone()),
                    Box::new(Expr::Mul(Box::new(Expr::Num(d)), Box::new(g.clone()))),
                );
            }
            s
        })
        .collect();

    // One time step for all runs, fine enough for the fastest velocity.
    let mut steps = required_steps(scn)?;
    for s in &perturbed {
        steps = steps.max(required_steps(s)?);
    }
    let grid = EdgeGrid::with_steps(scn, steps);

    // Energy condition audit of every perturbed velocity.
    let coupling = scn.coupling()?;
    for s in &perturbed {
        if s.net.inner_nodes().is_empty() {
            continue;
        }
        let mut rows = Vec::with_capacity(grid.num_levels());
        let mut scale = 1.0f64;
        for n in 0..=grid.steps {
            let row = nu_u_row(&face_velocities(s, &grid, grid.time(n))?);
            for &v in &row {
                scale = scale.max(v.abs());
            }
            rows.push(row);
        }
        let residuals = coupling.check_energy_condition(&rows);
        for (idx, &res) in residuals.iter().enumerate() {
            if res > 1e-10 * scale {
                return Err(SolveError::EnergyCondition {
                    node: s.net.inner_nodes()[idx],
                    residual: res,
                });
            }
        }
    }

    let base = solve_on_grid(scn, &grid, InflowMode::Coupled, None)?;
    let mut out = Vec::with_capacity(deltas.len());
    for s in &perturbed {
        let sol = solve_on_grid(s, &grid, InflowMode::Coupled, None)?;
        out.push(sup_lp_distance(&base, &sol, p));
    }
    Ok(out)
}

/// sup over time levels of the L^p distance between two solutions on
/// the same grid.
fn sup_lp_distance(a: &SolutionField, b: &SolutionField, p: f64) -> f64 {
    let grid = &a.grid;
    let mut sup = 0.0f64;
    for n in 0..=grid.steps {
        let mut acc = 0.0f64;
        let mut linf = 0.0f64;
        for e in 0..grid.cells.len() {
            for i in 0..grid.cells[e] {
                let d = (a.cells[n][e][i] - b.cells[n][e][i]).abs();
                linf = linf.max(d);
                acc += d.powf(p) * grid.dx[e];
            }
        }
        let dist = if p.is_finite() { acc.powf(1.0 / p) } else { linf };
        sup = sup.max(dist);
    }
    sup
}

/// Two full runs with different edge iteration orders; returns their
/// L1-in-space-and-time distance, which the determinism contract pins
/// at exactly zero.
pub fn uniqueness_probe(scn: &Scenario) -> Result<f64, SolveError> {
    let a = solve(scn, InflowMode::Coupled, None)?;
    let order: Vec<usize> = (0..scn.net.num_edges()).rev().collect();
    let b = solve(scn, InflowMode::Coupled, Some(&order))?;
    let grid = &a.grid;
    let mut dist = 0.0;
    for n in 0..=grid.steps {
        for e in 0..grid.cells.len() {
            for i in 0..grid.cells[e] {
                dist += (a.cells[n][e][i] - b.cells[n][e][i]).abs() * grid.dx[e] * grid.dt;
            }
        }
        for p in 0..a.trace.num_points() {
            dist += (a.trace.gamma_rho[n][p] - b.trace.gamma_rho[n][p]).abs() * grid.dt;
        }
    }
    Ok(dist)
}

/// Outcome of splitting a sign-changing source into nonnegative parts.
#[derive(Debug)]
pub struct SplitOutcome {
    /// Subproblem with f^+ and the original data.
    pub positive: Scenario,
    /// Subproblem with f^-, zero initial data and zero outer data (the
    /// node mixing stays active).
    pub negative: Scenario,
    /// Recombined field: positive minus negative, level by level.
    pub solution: SolutionField,
}

/// Solve by splitting `f = f^+ - f^-` into two nonnegative-source
/// subproblems and recombining linearly. The negative subproblem keeps
/// only the node mixing in its boundary condition, so a solvability
/// condition on the mixing operator is checked first: some nonnegative
/// per-edge shift `rhat` must satisfy `G(F_- + rhat) <= F_- + rhat` at
/// every inflow point, where `F_-` is the damped cumulative sup of
/// `f^-`. Candidates tried: zero, the deficit against the largest
/// final `F_-`, and a uniform shift.
pub fn split_signed_source(scn: &Scenario) -> Result<SplitOutcome, SolveError> {
    scn.validate()?;
    let grid = build_grid(scn)?;
    split_condition_check(scn, &grid)?;

    let mut positive = scn.clone();
    for f in positive.f.iter_mut() {
        *f = Expr::Call2(Func2::Max, Box::new(f.clone()), Box::new(Expr::Num(0.0)));
    }
    let mut negative = scn.clone();
    for f in negative.f.iter_mut() {
        *f = Expr::Call2(
            Func2::Max,
            Box::new(Expr::Neg(Box::new(f.clone()))),
            Box::new(Expr::Num(0.0)),
        );
    }
    for r in negative.rho0.iter_mut() {
        *r = Expr::Num(0.0);
    }
    for (_, expr) in negative.rho_out.iter_mut() {
        *expr = Expr::Num(0.0);
    }

    let sol_pos = solve_on_grid(&positive, &grid, InflowMode::Coupled, None)?;
    let sol_neg = solve_on_grid(&negative, &grid, InflowMode::Coupled, None)?;

    let mut combined = sol_pos.clone();
    for n in 0..=grid.steps {
        for e in 0..grid.cells.len() {
            for i in 0..grid.cells[e] {
                combined.cells[n][e][i] -= sol_neg.cells[n][e][i];
            }
        }
        for p in 0..combined.trace.num_points() {
            combined.trace.gamma_rho[n][p] -= sol_neg.trace.gamma_rho[n][p];
        }
        let d_neg = &sol_neg.diagnostics[n];
        let d = &mut combined.diagnostics[n];
        d.mass -= d_neg.mass;
        d.boundary_flux -= d_neg.boundary_flux;
        d.source -= d_neg.source;
    }
    Ok(SplitOutcome { positive, negative, solution: combined })
}

/// Check of the mixing solvability condition for the negative
/// subproblem. Vacuously true without inner nodes or with the mixing
/// switched off.
fn split_condition_check(scn: &Scenario, grid: &EdgeGrid) -> Result<(), SolveError> {
    if scn.net.inner_nodes().is_empty() || scn.mode == CouplingMode::ZeroG {
        return Ok(());
    }
    let coupling = scn.coupling()?;
    let num_edges = scn.net.num_edges();

    // F_-[level][edge]: cumulative damped sup of f^-, with damping
    // exponent from the global sup of (du/dx + c)^-.
    let mut nu_rows = Vec::with_capacity(grid.num_levels());
    let mut alpha = Vec::with_capacity(grid.num_levels());
    let mut fm_sup = Vec::with_capacity(grid.num_levels());
    for n in 0..=grid.steps {
        let t = grid.time(n);
        nu_rows.push(nu_u_row(&face_velocities(scn, grid, t)?));
        let mut a = 0.0f64;
        let mut row = Vec::with_capacity(num_edges);
        for e in 0..num_edges {
            let samples = 2 * grid.cells[e];
            let mut sup_f = 0.0f64;
            for k in 0..=samples {
                let x = k as f64 / samples as f64;
                let v = scn.u_x[e].eval(t, x)? + scn.c[e].eval(t, x)?;
                a = a.max((-v).max(0.0));
                sup_f = sup_f.max((-scn.f[e].eval(t, x)?).max(0.0));
            }
            row.push(sup_f);
        }
        alpha.push(a);
        fm_sup.push(row);
    }
    let mut big_a = vec![0.0f64; grid.num_levels()];
    let mut f_minus = vec![vec![0.0f64; num_edges]; grid.num_levels()];
    for n in 0..grid.steps {
        big_a[n + 1] = big_a[n] + grid.dt * alpha[n];
        for e in 0..num_edges {
            f_minus[n + 1][e] = f_minus[n][e] + grid.dt * (-big_a[n]).exp() * fm_sup[n][e];
        }
    }

    let f_final_max = f_minus[grid.steps].iter().cloned().fold(0.0f64, f64::max);
    let candidates: Vec<Vec<f64>> = vec![
        vec![0.0; num_edges],
        (0..num_edges).map(|e| f_final_max - f_minus[grid.steps][e]).collect(),
        vec![f_final_max; num_edges],
    ];

    let mut worst = f64::NEG_INFINITY;
    for rhat in &candidates {
        let mut violation = 0.0f64;
        for n in 0..=grid.steps {
            let vals: Vec<f64> = (0..2 * num_edges)
                .map(|p| f_minus[n][p / 2] + rhat[p / 2])
                .collect();
            let g = coupling.apply_gu(&vals, &nu_rows[n]);
            for p in 0..vals.len() {
                if nu_rows[n][p] < 0.0 {
                    let slack = vals[p] + 1e-12 * vals[p].abs().max(1.0) - g[p];
                    violation = violation.min(slack);
                }
            }
        }
        if violation >= 0.0 {
            return Ok(());
        }
        worst = worst.max(violation);
    }
    Err(SolveError::SplitConditionFailed {
        detail: format!(
            "no tested shift makes the mixing sub-invariant for the negative source; worst slack {worst:e}"
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exprs::parse;
    use crate::graph::build_network;

    fn single_edge(
        u: &str,
        c: &str,
        f: &str,
        rho0: &str,
        left: &str,
        right: &str,
        cells: usize,
        t_final: f64,
        cfl: f64,
    ) -> Scenario {
        Scenario {
            net: build_network(2, &[(0, 1)]).unwrap(),
            u: vec![parse(u).unwrap()],
            u_x: vec![parse("0").unwrap()],
            c: vec![parse(c).unwrap()],
            f: vec![parse(f).unwrap()],
            rho0: vec![parse(rho0).unwrap()],
            rho_out: vec![(0, parse(left).unwrap()), (1, parse(right).unwrap())],
            t_final,
            cfl,
            cells: vec![cells],
            mode: CouplingMode::Mixing,
            weights: None,
            snapshots: vec![],
            p_norms: vec![1.0],
        }
    }

    fn loop_scenario(rho0: &[&str], cells: usize, t_final: f64, cfl: f64) -> Scenario {
        Scenario {
            net: build_network(2, &[(0, 1), (1, 0)]).unwrap(),
            u: vec![parse("1").unwrap(), parse("1").unwrap()],
            u_x: vec![parse("0").unwrap(), parse("0").unwrap()],
            c: vec![parse("0").unwrap(), parse("0").unwrap()],
            f: vec![parse("0").unwrap(), parse("0").unwrap()],
            rho0: rho0.iter().map(|s| parse(s).unwrap()).collect(),
            rho_out: vec![],
            t_final,
            cfl,
            cells: vec![cells, cells],
            mode: CouplingMode::Mixing,
            weights: None,
            snapshots: vec![],
            p_norms: vec![1.0],
        }
    }

    #[test]
    fn constant_state_is_preserved_exactly() {
        let scn = single_edge("1", "0", "0", "3", "3", "0", 8, 0.5, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        for level in &sol.cells {
            for &v in &level[0] {
                assert_eq!(v, 3.0);
            }
        }
    }

    #[test]
    fn zero_velocity_freezes_the_state() {
        let scn = single_edge("0", "0", "0", "1+x", "7", "7", 10, 1.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let first = &sol.cells[0];
        let last = &sol.cells[sol.final_level()];
        assert_eq!(first, last);
        for row in &sol.trace.nu_u {
            assert!(row.iter().all(|&v| v == 0.0));
        }
        for d in &sol.diagnostics {
            assert_eq!(d.boundary_flux, 0.0);
        }
    }

    #[test]
    fn one_decay_step_from_unit_state() {
        // u = 1, c = 1, rho = 1: interior update gives 1 - dt exactly on
        // a dyadic grid.
        let scn = single_edge("1", "1", "0", "1", "exp(0-t)", "0", 8, 0.25, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let dt = sol.grid.dt;
        assert_eq!(dt, 0.0625);
        for i in 1..8 {
            assert_eq!(sol.cells[1][0][i], 1.0 - dt);
        }
    }

    #[test]
    fn inflow_fills_the_edge_to_a_constant() {
        let scn = single_edge("1", "0", "0", "0", "5", "0", 16, 1.25, 1.0);
        let sol = solve_coupled(&scn).unwrap();
        assert_eq!(sol.grid.dt, 0.0625);
        for &v in &sol.cells[sol.final_level()][0] {
            assert_eq!(v, 5.0);
        }
    }

    #[test]
    fn circulating_constant_stays_exactly_constant() {
        let scn = loop_scenario(&["1", "1"], 8, 2.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        for level in &sol.cells {
            for edge in level {
                for &v in edge {
                    assert_eq!(v, 1.0);
                }
            }
        }
    }

    #[test]
    fn max_principle_is_exact_on_dyadic_grids() {
        let scn = loop_scenario(&["1+4*x*(1-x)", "1"], 32, 3.0, 1.0);
        let sol = solve_coupled(&scn).unwrap();
        for level in &sol.cells {
            for edge in level {
                for &v in edge {
                    assert!((1.0..=2.0).contains(&v), "{v} outside [1, 2]");
                }
            }
        }
    }

    #[test]
    fn comparison_principle_is_exact() {
        let lo = single_edge("1", "0", "0", "x", "1", "0", 16, 1.0, 0.5);
        let hi = single_edge("1", "0", "0", "x", "2", "0", 16, 1.0, 0.5);
        let a = solve_coupled(&lo).unwrap();
        let b = solve_coupled(&hi).unwrap();
        for n in 0..=a.grid.steps {
            for i in 0..16 {
                assert!(b.cells[n][0][i] >= a.cells[n][0][i]);
            }
            for p in 0..a.trace.num_points() {
                assert!(b.trace.gamma_rho[n][p] >= a.trace.gamma_rho[n][p]);
            }
        }
    }

    #[test]
    fn mass_balance_per_step() {
        let scn = single_edge("1", "0", "0", "1+x", "2", "0", 32, 1.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let dt = sol.grid.dt;
        for n in 0..sol.grid.steps {
            let before = sol.diagnostics[n].mass;
            let after = sol.diagnostics[n + 1].mass;
            let expected = before - dt * sol.diagnostics[n].boundary_flux;
            assert!(
                (after - expected).abs() <= 1e-12 * before.abs().max(1.0),
                "step {n}: {after} vs {expected}"
            );
        }
    }

    #[test]
    fn cfl_violation_aborts() {
        let scn = single_edge("1", "0", "0", "0", "0", "0", 8, 1.0, 0.5);
        let grid = EdgeGrid::with_steps(&scn, 2); // dt = 0.5 >> dx
        let err = solve_on_grid(&scn, &grid, InflowMode::Coupled, None).unwrap_err();
        assert!(matches!(err, SolveError::Cfl { .. }), "{err:?}");
    }

    #[test]
    fn velocity_derivative_audit_catches_lies() {
        let mut scn = single_edge("1", "0", "0", "0", "0", "0", 8, 1.0, 0.5);
        scn.u = vec![parse("x*t").unwrap()];
        scn.u_x = vec![parse("1").unwrap()];
        let err = scn.validate().unwrap_err();
        assert!(matches!(err, SolveError::VelocityDerivativeMismatch { .. }), "{err:?}");
    }

    #[test]
    fn table_length_is_checked() {
        let scn = single_edge("1", "0", "0", "0", "0", "0", 8, 1.0, 0.5);
        let table = vec![vec![0.0, 0.0]; 3];
        let err = solve(&scn, InflowMode::Table(&table), None).unwrap_err();
        assert!(matches!(err, SolveError::BadParameter { .. }));
    }

    #[test]
    fn picard_on_a_plain_inflow_edge_converges_immediately() {
        let mut scn = single_edge("1", "0", "0", "x", "1+t", "0", 16, 1.0, 0.5);
        scn.mode = CouplingMode::ZeroG;
        let direct = solve_coupled(&scn).unwrap();
        let picard = solve_picard(&scn, 1e-10, 100).unwrap();
        assert_eq!(picard.iterations, 1);
        assert_eq!(picard.inflow_history.len(), 2);
        for n in 0..=direct.grid.steps {
            assert_eq!(picard.solution.cells[n], direct.cells[n]);
        }
    }

    #[test]
    fn picard_on_a_loop_reaches_the_coupled_solution() {
        let scn = loop_scenario(&["1+4*x*(1-x)", "1"], 8, 2.0, 1.0);
        let direct = solve_coupled(&scn).unwrap();
        let picard = solve_picard(&scn, 1e-10, 100).unwrap();
        assert!(picard.iterations <= 6, "took {} iterations", picard.iterations);
        let last = direct.final_level();
        for e in 0..2 {
            for i in 0..8 {
                let d = (picard.solution.cells[last][e][i] - direct.cells[last][e][i]).abs();
                assert!(d <= 1e-9, "cell ({e},{i}): {d}");
            }
        }
        // Iterates grow monotonically by construction; spot-check the
        // recorded history.
        for w in picard.inflow_history.windows(2) {
            for (row_a, row_b) in w[0].iter().zip(&w[1]) {
                for (a, b) in row_a.iter().zip(row_b) {
                    assert!(b >= a);
                }
            }
        }
    }

    #[test]
    fn picard_rejects_negative_data() {
        let scn = single_edge("1", "0", "0", "0-1", "1", "0", 8, 0.5, 0.5);
        let err = solve_picard(&scn, 1e-10, 100).unwrap_err();
        assert!(matches!(err, SolveError::NegativeData { .. }));
    }

    #[test]
    fn weak_residual_zero_test_function() {
        let scn = single_edge("1", "0", "0", "x", "1", "0", 8, 0.5, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let r = weak_residual(&sol, &scn, &[parse("0").unwrap()], 0.0, 0.5).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn weak_residual_telescopes_for_constants() {
        let scn = single_edge("1", "0", "0", "2", "2", "0", 16, 1.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let phi = parse("sin(3*x)*exp(t)+x*t").unwrap();
        let r = weak_residual(&sol, &scn, &[phi], 0.0, 1.0).unwrap();
        assert!(r <= 1e-10, "residual {r}");
    }

    #[test]
    fn renorm_square_telescopes_for_constants() {
        let scn = single_edge("1", "0", "0", "2", "2", "0", 16, 1.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let phi = parse("x*(1-x)*t+1").unwrap();
        let r =
            renormalization_residual(&sol, &scn, BetaKind::Square, &[phi], 0.0, 1.0).unwrap();
        assert!(r <= 1e-10, "residual {r}");
    }

    #[test]
    fn renorm_plus_shift_above_the_range_vanishes() {
        let scn = single_edge("1", "0", "0", "x", "1", "0", 16, 1.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let phi = parse("x*t+1").unwrap();
        let r = renormalization_residual(
            &sol,
            &scn,
            BetaKind::PlusShift(10.0),
            &[phi],
            0.0,
            1.0,
        )
        .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn abs_equals_identity_on_nonnegative_solutions() {
        // For rho >= 0 the abs nonlinearity is the identity, so its
        // residual coincides with the plain weak residual when c == 0
        // (the chain-rule source then matches the plain source term).
        let scn = single_edge("1", "0", "0", "x", "1", "0", 16, 1.0, 0.5);
        let sol = solve_coupled(&scn).unwrap();
        let phi = parse("x*(1-x)*t").unwrap();
        let a = weak_residual(&sol, &scn, std::slice::from_ref(&phi), 0.0, 1.0).unwrap();
        let b = renormalization_residual(
            &sol,
            &scn,
            BetaKind::Abs,
            std::slice::from_ref(&phi),
            0.0,
            1.0,
        )
        .unwrap();
        assert!((a - b).abs() <= 1e-13, "{a} vs {b}");
    }

    #[test]
    fn uniqueness_probe_is_bitwise_zero() {
        let scn = loop_scenario(&["1+4*x*(1-x)", "1"], 16, 2.0, 0.5);
        assert_eq!(uniqueness_probe(&scn).unwrap(), 0.0);
        let scn = single_edge("1", "0", "0", "x", "1", "0", 16, 1.0, 0.5);
        assert_eq!(uniqueness_probe(&scn).unwrap(), 0.0);
    }

    #[test]
    fn stability_distances_shrink_linearly() {
        let scn = single_edge("1", "0", "0", "1+x", "1", "0", 32, 1.0, 0.25);
        let g = parse("1").unwrap();
        let deltas = [0.25, 0.125, 0.0625, 0.03125];
        let d = stability_study(&scn, &g, &deltas, 1.0).unwrap();
        for w in d.windows(2) {
            assert!(w[1] <= w[0], "{d:?}");
        }
        assert!(d[3] < d[0] / 2.0, "{d:?}");
        let zero = stability_study(&scn, &g, &[0.0], 1.0).unwrap();
        assert_eq!(zero[0], 0.0);
    }

    #[test]
    fn stability_rejects_space_dependent_shapes() {
        let scn = single_edge("1", "0", "0", "0", "0", "0", 8, 0.5, 0.5);
        let err = stability_study(&scn, &parse("x").unwrap(), &[0.1], 1.0).unwrap_err();
        assert!(matches!(err, SolveError::SpaceDependentPerturbation));
    }

    #[test]
    fn split_reduces_to_direct_solve_for_nonnegative_sources() {
        let scn = single_edge("1", "0", "1+t", "x", "1", "0", 16, 1.0, 0.5);
        let direct = solve_coupled(&scn).unwrap();
        let split = split_signed_source(&scn).unwrap();
        for n in 0..=direct.grid.steps {
            assert_eq!(split.solution.cells[n], direct.cells[n]);
        }
    }

    #[test]
    fn split_matches_direct_solve_for_signed_sources() {
        let scn = single_edge("1", "0", "sin(6*t)+sin(7*x)", "x", "1", "0", 16, 1.0, 0.5);
        let direct = solve_coupled(&scn).unwrap();
        let split = split_signed_source(&scn).unwrap();
        for n in 0..=direct.grid.steps {
            for i in 0..16 {
                let d = (split.solution.cells[n][0][i] - direct.cells[n][0][i]).abs();
                assert!(d <= 1e-12, "level {n} cell {i}: {d}");
            }
        }
    }

    #[test]
    fn split_of_nonpositive_source_is_minus_the_mirrored_solve() {
        let scn = single_edge("1", "0", "0-1-x", "0", "0", "0", 16, 1.0, 0.5);
        let split = split_signed_source(&scn).unwrap();
        let mut mirrored = scn.clone();
        mirrored.f = vec![parse("1+x").unwrap()];
        let m = solve_coupled(&mirrored).unwrap();
        for n in 0..=m.grid.steps {
            for i in 0..16 {
                assert_eq!(split.solution.cells[n][0][i], -m.cells[n][0][i]);
            }
        }
    }

    #[test]
    fn snapshot_levels_round_to_grid() {
        let mut scn = single_edge("1", "0", "0", "x", "1", "0", 8, 1.0, 0.5);
        scn.snapshots = vec![0.0, 0.5, 1.0];
        let sol = solve_coupled(&scn).unwrap();
        let levels: Vec<usize> = sol.snapshots.iter().map(|&(_, l)| l).collect();
        assert_eq!(levels, vec![0, sol.grid.steps / 2, sol.grid.steps]);
    }

    #[test]
    fn validation_rejects_shape_mismatches() {
        let mut scn = single_edge("1", "0", "0", "0", "0", "0", 8, 1.0, 0.5);
        scn.c = vec![];
        assert!(matches!(scn.validate().unwrap_err(), SolveError::BadParameter { .. }));
        let mut scn = single_edge("1", "0", "0", "0", "0", "0", 8, 1.0, 0.5);
        scn.cfl = 1.5;
        assert!(matches!(scn.validate().unwrap_err(), SolveError::BadParameter { .. }));
    }
}
