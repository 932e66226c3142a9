//! A priori solution envelopes: exponential upper and lower barriers
//! computed from the data alone, tabulated on the solver's time grid.
//!
//! The rates are sampled sup-norms,
//!
//! ```text
//! alpha(t) = max_e sup_x (du/dx + c)^-(t, x)       (growth rate)
//! zeta(t)  = max_e sup_x (du/dx + c)^+(t, x)       (decay rate)
//! ```
//!
//! with cumulative integrals `A`, `Z` by the left-endpoint rule, damped
//! source envelopes per edge
//!
//! ```text
//! F+_e(t) = int_0^t exp(-A(s)) sup_x f_e^+(s, x) ds
//! F-_e(t) = int_0^t exp(-A(s)) sup_x f_e^-(s, x) ds
//! ```
//!
//! and the barrier scalars rho_max / rho_min certified by the coupling
//! module's substitution check. The barriers themselves are
//!
//! ```text
//! U_e(t) = (rho_max + F+_e(t)) exp(A(t)),    L(t) = rho_min exp(-Z(t)).
//! ```

use crate::boundary::{ExtremesError, ExtremesInput, ExtremesReport};
use crate::exprs::EvalError;
use crate::solver::{EdgeGrid, Scenario, SolutionField};
use std::fmt;

#[derive(Debug)]
pub enum BoundsError {
    Eval(EvalError),
    Extremes(ExtremesError),
}

impl fmt::Display for BoundsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundsError::Eval(e) => write!(f, "field evaluation failed: {e}"),
            BoundsError::Extremes(e) => write!(f, "barrier computation failed: {e}"),
        }
    }
}

impl std::error::Error for BoundsError {}

impl From<EvalError> for BoundsError {
    fn from(e: EvalError) -> Self {
        BoundsError::Eval(e)
    }
}

#[derive(Debug, Clone)]
pub struct BoundEnvelope {
    pub times: Vec<f64>,
    pub alpha: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Cumulative integral of alpha (A(0) = 0).
    pub big_a: Vec<f64>,
    /// Cumulative integral of zeta.
    pub big_z: Vec<f64>,
    /// Damped positive-source envelope, [level][edge].
    pub f_plus: Vec<Vec<f64>>,
    /// Damped negative-source envelope, [level][edge].
    pub f_minus: Vec<Vec<f64>>,
    /// exp(-A(t)).
    pub r: Vec<f64>,
    /// exp(Z(t)).
    pub r_bar: Vec<f64>,
    pub extremes: ExtremesReport,
}

impl BoundEnvelope {
    /// Upper barrier on one edge at one time level.
    pub fn upper(&self, level: usize, edge: usize) -> f64 {
        (self.extremes.rho_max + self.f_plus[level][edge]) * self.big_a[level].exp()
    }

    /// Lower barrier (edge-independent), when the data admit one.
    pub fn lower(&self, level: usize) -> Option<f64> {
        self.extremes.rho_min.map(|m| m * (-self.big_z[level]).exp())
    }

    pub fn num_levels(&self) -> usize {
        self.times.len()
    }
}

/// Sup of a sampled field over one edge: cell centers plus both
/// endpoints. The expression grammar only produces fields that are
/// smooth between samples.
fn sup_edge(
    n_cells: usize,
    mut f: impl FnMut(f64) -> Result<f64, EvalError>,
) -> Result<f64, EvalError> {
    let mut m = f(0.0)?.max(f(1.0)?);
    for i in 0..n_cells {
        m = m.max(f((i as f64 + 0.5) / n_cells as f64)?);
    }
    Ok(m)
}

fn inf_edge(
    n_cells: usize,
    mut f: impl FnMut(f64) -> Result<f64, EvalError>,
) -> Result<f64, EvalError> {
    let mut m = f(0.0)?.min(f(1.0)?);
    for i in 0..n_cells {
        m = m.min(f((i as f64 + 0.5) / n_cells as f64)?);
    }
    Ok(m)
}

pub fn build_envelope(scn: &Scenario, grid: &EdgeGrid) -> Result<BoundEnvelope, BoundsError> {
    let coupling = scn.coupling().expect("scenario validated before envelope construction");
    let num_edges = scn.net.num_edges();
    let levels = grid.num_levels();
    let times: Vec<f64> = (0..levels).map(|n| grid.time(n)).collect();

    let mut alpha = Vec::with_capacity(levels);
    let mut zeta = Vec::with_capacity(levels);
    let mut fp_sup = Vec::with_capacity(levels);
    let mut fm_sup = Vec::with_capacity(levels);
    let mut nu_u = Vec::with_capacity(levels);
    for &t in &times {
        let mut a = 0.0f64;
        let mut z = 0.0f64;
        let mut fp_row = Vec::with_capacity(num_edges);
        let mut fm_row = Vec::with_capacity(num_edges);
        for e in 0..num_edges {
            let n = grid.cells[e];
            let rate_neg =
                sup_edge(n, |x| Ok((-(scn.u_x[e].eval(t, x)? + scn.c[e].eval(t, x)?)).max(0.0)))?;
            let rate_pos =
                sup_edge(n, |x| Ok((scn.u_x[e].eval(t, x)? + scn.c[e].eval(t, x)?).max(0.0)))?;
            a = a.max(rate_neg);
            z = z.max(rate_pos);
            fp_row.push(sup_edge(n, |x| Ok(scn.f[e].eval(t, x)?.max(0.0)))?);
            fm_row.push(sup_edge(n, |x| Ok((-scn.f[e].eval(t, x)?).max(0.0)))?);
        }
        alpha.push(a);
        zeta.push(z);
        fp_sup.push(fp_row);
        fm_sup.push(fm_row);

        let mut row = Vec::with_capacity(2 * num_edges);
        for e in 0..num_edges {
            row.push(-scn.u[e].eval(t, 0.0)?);
            row.push(scn.u[e].eval(t, 1.0)?);
        }
        nu_u.push(row);
    }

    let mut big_a = vec![0.0f64; levels];
    let mut big_z = vec![0.0f64; levels];
    let mut f_plus = vec![vec![0.0f64; num_edges]; levels];
    let mut f_minus = vec![vec![0.0f64; num_edges]; levels];
    for n in 0..levels - 1 {
        big_a[n + 1] = big_a[n] + grid.dt * alpha[n];
        big_z[n + 1] = big_z[n] + grid.dt * zeta[n];
        let damp = (-big_a[n]).exp();
        for e in 0..num_edges {
            f_plus[n + 1][e] = f_plus[n][e] + grid.dt * damp * fp_sup[n][e];
            f_minus[n + 1][e] = f_minus[n][e] + grid.dt * damp * fm_sup[n][e];
        }
    }
    let r: Vec<f64> = big_a.iter().map(|&a| (-a).exp()).collect();
    let r_bar: Vec<f64> = big_z.iter().map(|&z| z.exp()).collect();

    let mut rho0_inf = f64::INFINITY;
    let mut rho0_sup = f64::NEG_INFINITY;
    for e in 0..num_edges {
        rho0_inf = rho0_inf.min(inf_edge(grid.cells[e], |x| scn.rho0[e].eval(0.0, x))?);
        rho0_sup = rho0_sup.max(sup_edge(grid.cells[e], |x| scn.rho0[e].eval(0.0, x))?);
    }

    let input = ExtremesInput {
        times: &times,
        nu_u: &nu_u,
        r: &r,
        r_bar: &r_bar,
        big_a: &big_a,
        big_z: &big_z,
        f_plus: &f_plus,
        rho0_inf,
        rho0_sup,
    };
    let extremes = match coupling.compute_rho_extremes(&input, true) {
        Ok(rep) => rep,
        // Data without a positive floor: keep the upper barrier, drop
        // the lower one.
        Err(ExtremesError::NonpositiveData { .. }) => coupling
            .compute_rho_extremes(&input, false)
            .map_err(BoundsError::Extremes)?,
        Err(e) => return Err(BoundsError::Extremes(e)),
    };

    Ok(BoundEnvelope {
        times,
        alpha,
        zeta,
        big_a,
        big_z,
        f_plus,
        f_minus,
        r,
        r_bar,
        extremes,
    })
}

/// Worst excess of a solution over the upper barrier, and below the
/// lower one when the envelope has it. Both are zero for solutions that
/// respect the bounds.
pub fn check_solution_bounds(sol: &SolutionField, env: &BoundEnvelope) -> (f64, Option<f64>) {
    let grid = &sol.grid;
    let mut upper = 0.0f64;
    let mut lower = env.extremes.rho_min.map(|_| 0.0f64);
    for n in 0..grid.num_levels() {
        let floor = env.lower(n);
        for e in 0..grid.cells.len() {
            let cap = env.upper(n, e);
            for &v in &sol.cells[n][e] {
                upper = upper.max(v - cap);
                if let (Some(l), Some(acc)) = (floor, lower.as_mut()) {
                    *acc = acc.max(l - v);
                }
            }
        }
    }
    (upper, lower)
}
