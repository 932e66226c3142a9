//! The node coupling operator and its axiom checks.
//!
//! Inflow boundary values on the network are produced by an affine map
//! `H(rho) = rho_in + G(rho)`: externally prescribed data `rho_out` enters
//! at outer nodes, and the mixing operator `G` redistributes the flux
//! arriving at each inner node onto the edges leaving it. The concrete
//! `G` for networks averages arriving flux with the node's total inflow
//! capacity:
//!
//! ```text
//! value at inflow points of node i  =  q_i / m_ii
//! q_i   = sum over points owned by i of (nu*u)^+ * gamma_rho
//! m_ii  = sum over points owned by i of (nu*u)^-
//! ```
//!
//! `m_ii = 0` is legitimate (no inflow capacity at the node); the
//! pseudo-inverse convention maps it to a zero output. Everything here is
//! a pure function of the trace and flux data at one time level, which is
//! what makes the causality check trivially exact.

use crate::exprs::{EvalError, Expr};
use crate::graph::{
    boundary_points, canonical_nu, endpoint_incidence, mat_mul, mat_neg_part, mat_scale_cols,
    mat_transpose, neg_part, pos_part, BoundaryPoint, Network, NodeId,
};
use std::fmt;

/// Positive diagonal weights, one per edge, entering the boundary norms
/// `int |rho|^T W (nu*u)^{+/-}`. Identity unless configured otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    per_edge: Vec<f64>,
}

impl WeightMatrix {
    pub fn identity(num_edges: usize) -> Self {
        WeightMatrix { per_edge: vec![1.0; num_edges] }
    }

    pub fn new(per_edge: Vec<f64>) -> Result<Self, CouplingError> {
        for (e, &w) in per_edge.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(CouplingError::NonpositiveWeight { edge: e, value: w });
            }
        }
        Ok(WeightMatrix { per_edge })
    }

    pub fn edge(&self, e: usize) -> f64 {
        self.per_edge[e]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// The network operator: `H = rho_in + G_u`.
    Mixing,
    /// `H = rho_in` only; inner inflow points receive 0.
    ZeroG,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CouplingError {
    MissingOuterData { node: NodeId },
    DataAtInnerNode { node: NodeId },
    NonpositiveWeight { edge: usize, value: f64 },
}

impl fmt::Display for CouplingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CouplingError::MissingOuterData { node } => {
                write!(f, "outer node {node} has no boundary data")
            }
            CouplingError::DataAtInnerNode { node } => {
                write!(f, "boundary data given for inner node {node}")
            }
            CouplingError::NonpositiveWeight { edge, value } => {
                write!(f, "weight for edge {edge} must be positive, got {value}")
            }
        }
    }
}

impl std::error::Error for CouplingError {}

/// Discrete boundary trace history: per time level, the trace value and
/// the signed flux `nu*u` at every boundary point (index `2e + omega`),
/// on a uniform grid with step `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub dt: f64,
    /// `gamma_rho[level][point]`.
    pub gamma_rho: Vec<Vec<f64>>,
    /// `nu_u[level][point]`, same shape.
    pub nu_u: Vec<Vec<f64>>,
}

impl BoundaryTrace {
    pub fn num_levels(&self) -> usize {
        self.gamma_rho.len()
    }

    pub fn num_points(&self) -> usize {
        self.gamma_rho.first().map_or(0, |row| row.len())
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt
    }
}

#[derive(Debug, Clone)]
pub struct CouplingOperator {
    net: Network,
    mode: CouplingMode,
    /// Indexed by node id; `Some` exactly at outer nodes.
    rho_out: Vec<Option<Expr>>,
    weights: WeightMatrix,
    points: Vec<BoundaryPoint>,
}

impl CouplingOperator {
    /// `rho_out` pairs outer node ids with their data expressions (in `t`).
    /// Every outer node needs one; inner nodes must not appear.
    pub fn new(
        net: Network,
        mode: CouplingMode,
        rho_out: Vec<(NodeId, Expr)>,
        weights: Option<WeightMatrix>,
    ) -> Result<Self, CouplingError> {
        let mut data: Vec<Option<Expr>> = vec![None; net.num_nodes()];
        for (v, expr) in rho_out {
            if net.is_inner(v) {
                return Err(CouplingError::DataAtInnerNode { node: v });
            }
            data[v] = Some(expr);
        }
        for &v in net.outer_nodes() {
            if data[v].is_none() {
                return Err(CouplingError::MissingOuterData { node: v });
            }
        }
        let weights = match weights {
            Some(w) => w,
            None => WeightMatrix::identity(net.num_edges()),
        };
        if weights.per_edge.len() != net.num_edges() {
            return Err(CouplingError::NonpositiveWeight {
                edge: weights.per_edge.len(),
                value: f64::NAN,
            });
        }
        let points = boundary_points(&net);
        Ok(CouplingOperator { net, mode, rho_out: data, weights, points })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn mode(&self) -> CouplingMode {
        self.mode
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    /// Data expression of an outer node.
    pub fn rho_out_expr(&self, v: NodeId) -> Option<&Expr> {
        self.rho_out[v].as_ref()
    }

    /// Diagonal of the inner-node inflow-capacity matrix at one time
    /// level, in `inner_nodes()` order. The matrix is assembled as the
    /// full product `S diag((nu u)^-) S^T` with `S` the inner selector,
    /// and its off-diagonal entries are asserted to vanish rather than
    /// assumed to.
    pub fn assemble_m(&self, nu_u: &[f64]) -> Vec<f64> {
        assert_eq!(nu_u.len(), self.points.len());
        let nu = canonical_nu(&self.net);
        let full = endpoint_incidence(&self.net, &nu);
        let sel_rows: Vec<Vec<f64>> = self
            .net
            .inner_nodes()
            .iter()
            .map(|&v| full[v].clone())
            .collect();
        let sel = mat_neg_part(&sel_rows);
        let flux_minus: Vec<f64> = nu_u.iter().map(|&x| neg_part(x)).collect();
        let m = mat_mul(&mat_scale_cols(&sel, &flux_minus), &mat_transpose(&sel));
        for (i, row) in m.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(x, 0.0, "inflow-capacity matrix must be diagonal");
                }
            }
        }
        (0..m.len()).map(|i| m[i][i]).collect()
    }

    /// Pseudo-inverse of a nonnegative diagonal: reciprocal where the
    /// entry clears the relative threshold `1e-14 * max`, zero otherwise.
    pub fn pseudo_inverse_diag(m: &[f64]) -> Vec<f64> {
        let max = m.iter().cloned().fold(0.0f64, f64::max);
        let eps = 1e-14 * max;
        m.iter()
            .map(|&v| if v > eps { 1.0 / v } else { 0.0 })
            .collect()
    }

    /// The mixing operator at one time level. Returns a value for every
    /// boundary point; nonzero only at inner-node points with
    /// `(nu u)^- > 0`, where all points of node `i` share `q_i / m_ii`.
    pub fn apply_gu(&self, gamma_rho: &[f64], nu_u: &[f64]) -> Vec<f64> {
        assert_eq!(gamma_rho.len(), self.points.len());
        assert_eq!(nu_u.len(), self.points.len());
        let m = self.assemble_m(nu_u);
        let m_inv = Self::pseudo_inverse_diag(&m);
        // Arriving flux per inner node, summed in boundary-point order so
        // results are independent of any caller-side edge ordering.
        let mut q = vec![0.0; self.net.inner_nodes().len()];
        let inner_index = self.inner_index();
        for (p, pt) in self.points.iter().enumerate() {
            if let Some(i) = inner_index[pt.node] {
                q[i] += pos_part(nu_u[p]) * gamma_rho[p];
            }
        }
        let mut out = vec![0.0; self.points.len()];
        for (p, pt) in self.points.iter().enumerate() {
            if neg_part(nu_u[p]) > 0.0 {
                if let Some(i) = inner_index[pt.node] {
                    out[p] = q[i] * m_inv[i];
                }
            }
        }
        out
    }

    /// The adjoint of the mixing operator: node values
    /// `r_i = (sum of (nu u)^- dual over points of i) / m_ii`, placed at
    /// the node's points with `(nu u)^+ > 0`.
    pub fn apply_gu_adjoint(&self, dual: &[f64], nu_u: &[f64]) -> Vec<f64> {
        assert_eq!(dual.len(), self.points.len());
        assert_eq!(nu_u.len(), self.points.len());
        let m = self.assemble_m(nu_u);
        let m_inv = Self::pseudo_inverse_diag(&m);
        let inner_index = self.inner_index();
        let mut r = vec![0.0; self.net.inner_nodes().len()];
        for (p, pt) in self.points.iter().enumerate() {
            if let Some(i) = inner_index[pt.node] {
                r[i] += neg_part(nu_u[p]) * dual[p];
            }
        }
        let mut out = vec![0.0; self.points.len()];
        for (p, pt) in self.points.iter().enumerate() {
            if pos_part(nu_u[p]) > 0.0 {
                if let Some(i) = inner_index[pt.node] {
                    out[p] = r[i] * m_inv[i];
                }
            }
        }
        out
    }

    /// The `G` part of `H` under the operator's mode.
    pub fn apply_g(&self, gamma_rho: &[f64], nu_u: &[f64]) -> Vec<f64> {
        match self.mode {
            CouplingMode::Mixing => self.apply_gu(gamma_rho, nu_u),
            CouplingMode::ZeroG => vec![0.0; self.points.len()],
        }
    }

    /// External data mapped onto the boundary: `rho_out` of the owning
    /// outer node at points with `(nu u)^- > 0`, zero everywhere else.
    pub fn rho_in(&self, t: f64, nu_u: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.points.len()];
        for (p, pt) in self.points.iter().enumerate() {
            if neg_part(nu_u[p]) > 0.0 {
                if let Some(expr) = &self.rho_out[pt.node] {
                    out[p] = expr.eval(t, 0.0)?;
                }
            }
        }
        Ok(out)
    }

    /// Full inflow assignment `H(rho) = rho_in + G(rho)` at time `t`.
    /// Values are produced exactly at points with `(nu u)^- > 0`.
    pub fn apply_h(&self, gamma_rho: &[f64], nu_u: &[f64], t: f64) -> Result<Vec<f64>, EvalError> {
        let mut out = self.rho_in(t, nu_u)?;
        let g = self.apply_g(gamma_rho, nu_u);
        for (o, gv) in out.iter_mut().zip(&g) {
            *o += gv;
        }
        Ok(out)
    }

    /// Per inner node, the worst signed flux imbalance
    /// `max over levels of |sum of nu*u over the node's points|`.
    /// Zero residual is the conservation property the mixing average
    /// relies on to be mass-preserving.
    pub fn check_energy_condition(&self, nu_u_levels: &[Vec<f64>]) -> Vec<f64> {
        let inner_index = self.inner_index();
        let mut worst = vec![0.0f64; self.net.inner_nodes().len()];
        for nu_u in nu_u_levels {
            assert_eq!(nu_u.len(), self.points.len());
            let mut sums = vec![0.0f64; worst.len()];
            for (p, pt) in self.points.iter().enumerate() {
                if let Some(i) = inner_index[pt.node] {
                    sums[i] += nu_u[p];
                }
            }
            for (w, s) in worst.iter_mut().zip(&sums) {
                *w = w.max(s.abs());
            }
        }
        worst
    }

    /// Relative inner-node mass-balance defect at one time level:
    /// `|sum (nu u)^- H - sum (nu u)^+ gamma_rho| / scale` per inner node
    /// (scale = larger magnitude of the two sides, 1 if both vanish).
    pub fn check_mass_balance(&self, gamma_rho: &[f64], nu_u: &[f64]) -> Vec<f64> {
        let h = self.apply_g(gamma_rho, nu_u); // rho_in vanishes at inner points
        let inner_index = self.inner_index();
        let k = self.net.inner_nodes().len();
        let (mut lhs, mut rhs) = (vec![0.0f64; k], vec![0.0f64; k]);
        for (p, pt) in self.points.iter().enumerate() {
            if let Some(i) = inner_index[pt.node] {
                lhs[i] += neg_part(nu_u[p]) * h[p];
                rhs[i] += pos_part(nu_u[p]) * gamma_rho[p];
            }
        }
        (0..k)
            .map(|i| {
                let scale = lhs[i].abs().max(rhs[i].abs()).max(1.0);
                (lhs[i] - rhs[i]).abs() / scale
            })
            .collect()
    }

    /// Left-endpoint quadrature of the two sides of the flux-weighted
    /// bound `int_0^t |G rho| W (nu u)^-  <=  int_0^t |rho| W (nu u)^+`.
    pub fn check_contraction(&self, trace: &BoundaryTrace, t: f64) -> (f64, f64) {
        let levels = self.levels_before(trace, t);
        let (mut lhs, mut rhs) = (0.0, 0.0);
        for n in 0..levels {
            let g = self.apply_g(&trace.gamma_rho[n], &trace.nu_u[n]);
            for (p, pt) in self.points.iter().enumerate() {
                let w = self.weights.edge(pt.edge);
                lhs += trace.dt * g[p].abs() * w * neg_part(trace.nu_u[n][p]);
                rhs += trace.dt * trace.gamma_rho[n][p].abs() * w * pos_part(trace.nu_u[n][p]);
            }
        }
        (lhs, rhs)
    }

    /// Largest discrepancy between truncate-then-couple and
    /// couple-then-truncate up to the cutoff. The mixing operator acts
    /// level by level, so this must come out exactly zero; the check
    /// computes both sides honestly anyway.
    pub fn check_causality(&self, trace: &BoundaryTrace, cutoff: f64) -> f64 {
        let keep = self.levels_before(trace, cutoff);
        let mut worst = 0.0f64;
        for n in 0..trace.num_levels() {
            let truncated: Vec<f64> = if n < keep {
                trace.gamma_rho[n].clone()
            } else {
                vec![0.0; trace.num_points()]
            };
            let g_truncated = self.apply_g(&truncated, &trace.nu_u[n]);
            let g_full = self.apply_g(&trace.gamma_rho[n], &trace.nu_u[n]);
            if n < keep {
                for p in 0..trace.num_points() {
                    worst = worst.max((g_truncated[p] - g_full[p]).abs());
                }
            }
        }
        worst
    }

    fn levels_before(&self, trace: &BoundaryTrace, t: f64) -> usize {
        if trace.dt <= 0.0 {
            return 0;
        }
        let n = (t / trace.dt + 1e-9).floor() as usize;
        n.min(trace.num_levels())
    }

    /// `inner_index[node] = Some(position in inner_nodes())`.
    fn inner_index(&self) -> Vec<Option<usize>> {
        let mut idx = vec![None; self.net.num_nodes()];
        for (i, &v) in self.net.inner_nodes().iter().enumerate() {
            idx[v] = Some(i);
        }
        idx
    }

    /// Data extremes and their certificate. `rho_max` is
    /// `max(sup |rho_out r|, sup |rho0|)` with `r = exp(-int ||(u_x)^-||)`;
    /// `rho_min` (when requested) is `min(inf rho0, inf r_bar rho_out)`
    /// with `r_bar = exp(+int ||(u_x)^+||)`. Both are substituted back
    /// into the inflow inequalities they must satisfy, and the worst
    /// slack is reported; a negative slack means the candidate fails the
    /// condition.
    pub fn compute_rho_extremes(
        &self,
        input: &ExtremesInput<'_>,
        want_lower: bool,
    ) -> Result<ExtremesReport, ExtremesError> {
        let n_levels = input.times.len();
        assert_eq!(input.nu_u.len(), n_levels);
        assert_eq!(input.r.len(), n_levels);
        assert_eq!(input.r_bar.len(), n_levels);
        assert_eq!(input.big_a.len(), n_levels);
        assert_eq!(input.big_z.len(), n_levels);
        assert_eq!(input.f_plus.len(), n_levels);

        // Tabulate the outer data on the grid once.
        let mut rho_out_vals: Vec<Vec<f64>> = Vec::with_capacity(n_levels);
        for &t in input.times {
            let mut row = vec![0.0; self.net.num_nodes()];
            for &v in self.net.outer_nodes() {
                let expr = self.rho_out[v].as_ref().expect("outer data validated");
                row[v] = expr.eval(t, 0.0).map_err(ExtremesError::Eval)?;
            }
            rho_out_vals.push(row);
        }

        let mut rho_max = input.rho0_inf.abs().max(input.rho0_sup.abs());
        for (n, row) in rho_out_vals.iter().enumerate() {
            for &v in self.net.outer_nodes() {
                rho_max = rho_max.max((row[v] * input.r[n]).abs());
            }
        }

        let rho_min = if want_lower {
            if !(input.rho0_inf > 0.0) {
                return Err(ExtremesError::NonpositiveData {
                    what: "initial data".into(),
                    value: input.rho0_inf,
                });
            }
            let mut m = input.rho0_inf;
            for (n, row) in rho_out_vals.iter().enumerate() {
                for &v in self.net.outer_nodes() {
                    if !(row[v] > 0.0) {
                        return Err(ExtremesError::NonpositiveData {
                            what: format!("boundary data at node {v}"),
                            value: row[v],
                        });
                    }
                    m = m.min(input.r_bar[n] * row[v]);
                }
            }
            Some(m)
        } else {
            None
        };

        // Substitution certificates, evaluated at every inflow point of
        // every level. The upper condition reads
        //   rho_in exp(-A) - F+ + G(F+) + G(rho_max)  <=  rho_max,
        // the lower one
        //   rho_in exp(+Z) + G(rho_min)  >=  rho_min.
        let mut upper_slack = rho_max - input.rho0_sup.abs().max(input.rho0_inf.abs());
        let mut lower_slack = rho_min.map(|m| input.rho0_inf - m);
        for n in 0..n_levels {
            let nu_u = &input.nu_u[n];
            let rho_in = {
                let mut v = vec![0.0; self.points.len()];
                for (p, pt) in self.points.iter().enumerate() {
                    if neg_part(nu_u[p]) > 0.0 && !self.net.is_inner(pt.node) {
                        v[p] = rho_out_vals[n][pt.node];
                    }
                }
                v
            };
            let f_plus_trace: Vec<f64> = self
                .points
                .iter()
                .map(|pt| input.f_plus[n][pt.edge])
                .collect();
            let g_of_fplus = self.apply_g(&f_plus_trace, nu_u);
            let const_max = vec![rho_max; self.points.len()];
            let g_of_max = self.apply_g(&const_max, nu_u);
            let g_of_min = rho_min.map(|m| {
                let const_min = vec![m; self.points.len()];
                self.apply_g(&const_min, nu_u)
            });
            for (p, pt) in self.points.iter().enumerate() {
                if neg_part(nu_u[p]) == 0.0 {
                    continue;
                }
                let lhs_upper = rho_in[p] * (-input.big_a[n]).exp() - input.f_plus[n][pt.edge]
                    + g_of_fplus[p]
                    + g_of_max[p];
                upper_slack = upper_slack.min(rho_max - lhs_upper);
                if let (Some(m), Some(gmin)) = (rho_min, &g_of_min) {
                    let lhs_lower = rho_in[p] * input.big_z[n].exp() + gmin[p];
                    let s = lhs_lower - m;
                    lower_slack = Some(lower_slack.unwrap().min(s));
                }
            }
        }

        Ok(ExtremesReport { rho_max, rho_min, upper_slack, lower_slack })
    }
}

/// Tabulated inputs for [`CouplingOperator::compute_rho_extremes`]: a
/// time grid with per-level boundary fluxes and the cumulative-integral
/// tables of the bound envelope.
pub struct ExtremesInput<'a> {
    pub times: &'a [f64],
    /// `nu_u[level][point]`.
    pub nu_u: &'a [Vec<f64>],
    /// `exp(-int_0^t ||(u_x)^-||)`.
    pub r: &'a [f64],
    /// `exp(+int_0^t ||(u_x)^+||)`.
    pub r_bar: &'a [f64],
    /// `int_0^t ||(u_x + c)^-||`.
    pub big_a: &'a [f64],
    /// `int_0^t ||(u_x + c)^+||`.
    pub big_z: &'a [f64],
    /// `f_plus[level][edge]`: the accumulated source bound
    /// `int_0^t exp(-A(s)) ||f_e(s,.)^+|| ds`.
    pub f_plus: &'a [Vec<f64>],
    pub rho0_inf: f64,
    pub rho0_sup: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremesReport {
    pub rho_max: f64,
    pub rho_min: Option<f64>,
    /// Worst margin of the upper substitution check; negative = failed.
    pub upper_slack: f64,
    pub lower_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExtremesError {
    NonpositiveData { what: String, value: f64 },
    Eval(EvalError),
}

impl fmt::Display for ExtremesError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtremesError::NonpositiveData { what, value } => {
                write!(f, "lower bound needs strictly positive data, but {what} reaches {value}")
            }
            ExtremesError::Eval(e) => write!(f, "boundary data evaluation failed: {e}"),
        }
    }
}

impl std::error::Error for ExtremesError {}
