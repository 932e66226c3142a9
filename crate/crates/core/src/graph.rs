//! Directed networks and their incidence structure.
//!
//! A network is a connected directed graph. Every edge is parameterized
//! over `[0,1]` from its `init` node to its `ter` node, so each edge
//! contributes two *boundary points*: `(e, 0)` sitting at `init(e)` and
//! `(e, 1)` sitting at `ter(e)`. The outward normal of the interval is
//! `nu(0) = -1`, `nu(1) = +1`. Nodes of degree 1 are *outer* (they carry
//! externally prescribed inflow data); nodes of higher degree are *inner*
//! (they carry the coupling condition).

use std::fmt;

pub type NodeId = usize;
pub type EdgeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub init: NodeId,
    pub ter: NodeId,
    /// Carried for forward compatibility with weighted-graph models; the
    /// transport solver itself never reads it.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Network {
    num_nodes: usize,
    edges: Vec<Edge>,
    degree: Vec<usize>,
    inner_nodes: Vec<NodeId>,
    outer_nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetworkError {
    /// Networks need at least one node and one edge.
    Empty,
    /// Edge with `init == ter`. Self-loops would collapse the two
    /// boundary points onto one node and break the incidence-column
    /// structure, so they are rejected outright.
    SelfLoop { edge: EdgeId },
    /// Edge endpoint referring to a node id that was never declared.
    DanglingEndpoint { edge: EdgeId, node: NodeId },
    /// Node that no edge touches.
    IsolatedNode { node: NodeId },
    /// The underlying undirected graph has more than one component.
    Disconnected { node: NodeId },
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::Empty => write!(f, "network must have at least one node and one edge"),
            NetworkError::SelfLoop { edge } => {
                write!(f, "edge {edge} is a self-loop; self-loops are not supported")
            }
            NetworkError::DanglingEndpoint { edge, node } => {
                write!(f, "edge {edge} references undeclared node {node}")
            }
            NetworkError::IsolatedNode { node } => {
                write!(f, "node {node} has no incident edges")
            }
            NetworkError::Disconnected { node } => {
                write!(f, "network is disconnected: node {node} is not reachable from node 0")
            }
        }
    }
}

impl std::error::Error for NetworkError {}

/// Validate and classify a directed network.
///
/// Nodes are the ids `0..num_nodes`; `edges` lists `(init, ter)` pairs.
/// Parallel edges are allowed. Edge weights default to 1.
pub fn build_network(
    num_nodes: usize,
    edges: &[(NodeId, NodeId)],
) -> Result<Network, NetworkError> {
    if num_nodes == 0 || edges.is_empty() {
        return Err(NetworkError::Empty);
    }
    let mut degree = vec![0usize; num_nodes];
    for (e, &(init, ter)) in edges.iter().enumerate() {
        if init >= num_nodes {
            return Err(NetworkError::DanglingEndpoint { edge: e, node: init });
        }
        if ter >= num_nodes {
            return Err(NetworkError::DanglingEndpoint { edge: e, node: ter });
        }
        if init == ter {
            return Err(NetworkError::SelfLoop { edge: e });
        }
        degree[init] += 1;
        degree[ter] += 1;
    }
    if let Some(node) = degree.iter().position(|&d| d == 0) {
        return Err(NetworkError::IsolatedNode { node });
    }

    // Connectivity of the underlying undirected graph, by plain BFS.
    let mut adj = vec![Vec::new(); num_nodes];
    for &(init, ter) in edges {
        adj[init].push(ter);
        adj[ter].push(init);
    }
    let mut seen = vec![false; num_nodes];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    if let Some(node) = seen.iter().position(|&s| !s) {
        return Err(NetworkError::Disconnected { node });
    }

    let inner_nodes = (0..num_nodes).filter(|&v| degree[v] > 1).collect();
    let outer_nodes = (0..num_nodes).filter(|&v| degree[v] == 1).collect();
    Ok(Network {
        num_nodes,
        edges: edges
            .iter()
            .map(|&(init, ter)| Edge { init, ter, weight: 1.0 })
            .collect(),
        degree,
        inner_nodes,
        outer_nodes,
    })
}

impl Network {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.degree[v]
    }

    /// Nodes with degree > 1, ascending.
    pub fn inner_nodes(&self) -> &[NodeId] {
        &self.inner_nodes
    }

    /// Nodes with degree 1, ascending.
    pub fn outer_nodes(&self) -> &[NodeId] {
        &self.outer_nodes
    }

    pub fn is_inner(&self, v: NodeId) -> bool {
        self.degree[v] > 1
    }

    /// The node sitting at endpoint `omega` of edge `e`.
    pub fn endpoint_node(&self, e: EdgeId, omega: u8) -> NodeId {
        match omega {
            0 => self.edges[e].init,
            1 => self.edges[e].ter,
            _ => panic!("endpoint index must be 0 or 1, got {omega}"),
        }
    }
}

/// Outward normal of the unit interval at endpoint `omega`.
pub fn nu_of(omega: u8) -> f64 {
    match omega {
        0 => -1.0,
        1 => 1.0,
        _ => panic!("endpoint index must be 0 or 1, got {omega}"),
    }
}

/// One of the `2n` boundary points of a network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub edge: EdgeId,
    /// 0 for the `x = 0` end, 1 for the `x = 1` end.
    pub endpoint: u8,
    /// The node this point sits at.
    pub node: NodeId,
    /// Outward normal, `-1` at `x = 0`, `+1` at `x = 1`.
    pub nu: f64,
}

/// Enumerate all boundary points. Point `(e, omega)` lands at index
/// `2*e + omega`; every index in the solver's trace tables follows this
/// ordering.
pub fn boundary_points(net: &Network) -> Vec<BoundaryPoint> {
    let mut points = Vec::with_capacity(2 * net.num_edges());
    for (e, edge) in net.edges.iter().enumerate() {
        points.push(BoundaryPoint { edge: e, endpoint: 0, node: edge.init, nu: -1.0 });
        points.push(BoundaryPoint { edge: e, endpoint: 1, node: edge.ter, nu: 1.0 });
    }
    points
}

/// Node-by-edge incidence matrix and its inner/outer row splits.
///
/// Sign convention: `B[init(e), e] = +1`, `B[ter(e), e] = -1`. With
/// `nu(0) = -1, nu(1) = +1` this is the unique choice (up to a global
/// sign) for which `nu(omega) * B[v, e] = -1` at every boundary point
/// owned by `v`, i.e. for which the negative part of the endpoint
/// incidence matrix below is exactly the point-to-node selector.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    /// `num_nodes x num_edges`.
    pub full: Vec<Vec<f64>>,
    /// Rows of `full` at the inner nodes, in `inner_nodes()` order.
    pub inner: Vec<Vec<f64>>,
    /// Rows of `full` at the outer nodes, in `outer_nodes()` order.
    pub outer: Vec<Vec<f64>>,
}

pub fn build_incidence(net: &Network) -> IncidenceMatrix {
    let mut full = vec![vec![0.0; net.num_edges()]; net.num_nodes()];
    for (e, edge) in net.edges.iter().enumerate() {
        full[edge.init][e] += 1.0;
        full[edge.ter][e] += -1.0;
    }
    let inner = net.inner_nodes().iter().map(|&v| full[v].clone()).collect();
    let outer = net.outer_nodes().iter().map(|&v| full[v].clone()).collect();
    IncidenceMatrix { full, inner, outer }
}

/// Endpoint (boundary-point) incidence: the `num_nodes x 2n` matrix whose
/// column for point `p = (e, omega)` carries `nu[p] * B[v, e]` at the
/// owning node `v = endpoint_node(e, omega)` and zero elsewhere. Each
/// edge column of `B` splits into its two endpoint columns; the entry at
/// the opposite end of the edge belongs to that end's own column, not to
/// this one.
///
/// `nu` is indexed by boundary point and is usually `canonical_nu`, but
/// any sign vector may be passed (the product-zero identity below is
/// checked for flipped variants too).
pub fn endpoint_incidence(net: &Network, nu: &[f64]) -> Vec<Vec<f64>> {
    assert_eq!(nu.len(), 2 * net.num_edges());
    let mut m = vec![vec![0.0; 2 * net.num_edges()]; net.num_nodes()];
    for (e, edge) in net.edges.iter().enumerate() {
        // B[init, e] = +1 at p = 2e, B[ter, e] = -1 at p = 2e + 1.
        m[edge.init][2 * e] = nu[2 * e];
        m[edge.ter][2 * e + 1] = -nu[2 * e + 1];
    }
    m
}

/// The outward normals of all boundary points in index order:
/// `[-1, +1, -1, +1, ...]`.
pub fn canonical_nu(net: &Network) -> Vec<f64> {
    (0..2 * net.num_edges()).map(|p| nu_of((p % 2) as u8)).collect()
}

// Small dense-matrix helpers shared with the coupling code. Everything
// here is tiny (nodes x boundary points), so no linear-algebra crate is
// warranted.

pub(crate) fn neg_part(x: f64) -> f64 {
    if x < 0.0 { -x } else { 0.0 }
}

pub(crate) fn pos_part(x: f64) -> f64 {
    if x > 0.0 { x } else { 0.0 }
}

pub(crate) fn mat_neg_part(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|row| row.iter().map(|&x| neg_part(x)).collect()).collect()
}

pub(crate) fn mat_transpose(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if m.is_empty() {
        return Vec::new();
    }
    let rows = m.len();
    let cols = m[0].len();
    let mut t = vec![vec![0.0; rows]; cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j][i] = m[i][j];
        }
    }
    t
}

pub(crate) fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if a.is_empty() {
        return Vec::new();
    }
    let rows = a.len();
    let inner = a[0].len();
    let cols = if b.is_empty() { 0 } else { b[0].len() };
    assert_eq!(inner, b.len(), "dimension mismatch in matrix product");
    let mut out = vec![vec![0.0; cols]; rows];
    for i in 0..rows {
        for k in 0..inner {
            let aik = a[i][k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..cols {
                out[i][j] += aik * b[k][j];
            }
        }
    }
    out
}

pub(crate) fn mat_scale_cols(m: &[Vec<f64>], d: &[f64]) -> Vec<Vec<f64>> {
    m.iter()
        .map(|row| row.iter().zip(d).map(|(&x, &w)| x * w).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y_graph() -> Network {
        // e0: v0 -> v2, e1: v1 -> v2, e2: v2 -> v3; v2 is the junction.
        build_network(4, &[(0, 2), (1, 2), (2, 3)]).unwrap()
    }

    fn loop_graph() -> Network {
        build_network(2, &[(0, 1), (1, 0)]).unwrap()
    }

    fn mat_pos_part(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
        m.iter().map(|row| row.iter().map(|&x| pos_part(x)).collect()).collect()
    }

    #[test]
    fn classification_by_degree() {
        let single = build_network(2, &[(0, 1)]).unwrap();
        assert_eq!(single.inner_nodes(), &[] as &[usize]);
        assert_eq!(single.outer_nodes(), &[0, 1]);

        let y = y_graph();
        assert_eq!(y.inner_nodes(), &[2]);
        assert_eq!(y.outer_nodes(), &[0, 1, 3]);

        let lp = loop_graph();
        assert_eq!(lp.inner_nodes(), &[0, 1]);
        assert_eq!(lp.outer_nodes(), &[] as &[usize]);
    }

    #[test]
    fn validation_errors() {
        assert_eq!(build_network(0, &[]).unwrap_err(), NetworkError::Empty);
        assert_eq!(build_network(3, &[]).unwrap_err(), NetworkError::Empty);
        assert_eq!(
            build_network(2, &[(0, 0), (0, 1)]).unwrap_err(),
            NetworkError::SelfLoop { edge: 0 }
        );
        assert_eq!(
            build_network(2, &[(0, 5)]).unwrap_err(),
            NetworkError::DanglingEndpoint { edge: 0, node: 5 }
        );
        assert_eq!(
            build_network(3, &[(0, 1)]).unwrap_err(),
            NetworkError::IsolatedNode { node: 2 }
        );
        assert_eq!(
            build_network(4, &[(0, 1), (2, 3)]).unwrap_err(),
            NetworkError::Disconnected { node: 2 }
        );
    }

    #[test]
    fn parallel_edges_are_allowed() {
        let net = build_network(2, &[(0, 1), (0, 1)]).unwrap();
        assert_eq!(net.inner_nodes(), &[0, 1]);
        let b = build_incidence(&net);
        assert_eq!(b.full, vec![vec![1.0, 1.0], vec![-1.0, -1.0]]);
    }

    #[test]
    fn incidence_matrices() {
        let single = build_network(2, &[(0, 1)]).unwrap();
        let b = build_incidence(&single);
        assert_eq!(b.full, vec![vec![1.0], vec![-1.0]]);
        assert_eq!(b.inner, Vec::<Vec<f64>>::new());
        assert_eq!(b.outer, vec![vec![1.0], vec![-1.0]]);

        let y = y_graph();
        let b = build_incidence(&y);
        assert_eq!(b.full[2], vec![-1.0, -1.0, 1.0]);
        assert_eq!(b.inner, vec![vec![-1.0, -1.0, 1.0]]);

        let lp = loop_graph();
        let b = build_incidence(&lp);
        assert_eq!(b.full, vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert_eq!(b.inner, b.full);
        assert_eq!(b.outer, Vec::<Vec<f64>>::new());
    }

    #[test]
    fn absolute_row_sums_are_degrees() {
        for net in [build_network(2, &[(0, 1)]).unwrap(), y_graph(), loop_graph()] {
            let b = build_incidence(&net);
            for v in 0..net.num_nodes() {
                let s: f64 = b.full[v].iter().map(|x| x.abs()).sum();
                assert_eq!(s, net.degree(v) as f64);
            }
        }
    }

    #[test]
    fn boundary_point_enumeration() {
        let single = build_network(2, &[(0, 1)]).unwrap();
        let pts = boundary_points(&single);
        assert_eq!(
            pts,
            vec![
                BoundaryPoint { edge: 0, endpoint: 0, node: 0, nu: -1.0 },
                BoundaryPoint { edge: 0, endpoint: 1, node: 1, nu: 1.0 },
            ]
        );

        let y = y_graph();
        let pts = boundary_points(&y);
        assert_eq!(pts.len(), 6);
        let at_junction: Vec<_> = pts.iter().filter(|p| p.node == 2).collect();
        assert_eq!(at_junction.len(), 3);
        assert_eq!(
            at_junction
                .iter()
                .map(|p| (p.edge, p.endpoint, p.nu))
                .collect::<Vec<_>>(),
            vec![(0, 1, 1.0), (1, 1, 1.0), (2, 0, -1.0)]
        );

        assert_eq!(boundary_points(&loop_graph()).len(), 4);
    }

    #[test]
    fn endpoint_incidence_negative_part_is_the_owner_selector() {
        for net in [build_network(2, &[(0, 1)]).unwrap(), y_graph(), loop_graph()] {
            let nu = canonical_nu(&net);
            let m = endpoint_incidence(&net, &nu);
            let neg = mat_neg_part(&m);
            let pos = mat_pos_part(&m);
            let pts = boundary_points(&net);
            for v in 0..net.num_nodes() {
                for (p, pt) in pts.iter().enumerate() {
                    let expect = if pt.node == v { 1.0 } else { 0.0 };
                    assert_eq!(neg[v][p], expect, "node {v}, point {p}");
                    assert_eq!(pos[v][p], 0.0, "node {v}, point {p}");
                }
            }
        }
    }

    #[test]
    fn inner_outer_selector_product_vanishes() {
        // The inner and outer selector blocks can never share a boundary
        // point (each point has one owner), so the product through any
        // diagonal weight is the zero matrix -- for the canonical normals
        // and for any sign flips of either factor.
        let nets = [build_network(2, &[(0, 1)]).unwrap(), y_graph()];
        for net in &nets {
            let np = 2 * net.num_edges();
            let nu = canonical_nu(net);
            let flipped: Vec<f64> = nu.iter().map(|x| -x).collect();
            let weights: Vec<f64> = (0..np).map(|p| 0.5 + p as f64).collect();
            for nu1 in [&nu, &flipped] {
                for nu2 in [&nu, &flipped] {
                    let m1 = endpoint_incidence(net, nu1);
                    let m2 = endpoint_incidence(net, nu2);
                    let rows1: Vec<Vec<f64>> = net
                        .inner_nodes()
                        .iter()
                        .map(|&v| m1[v].clone())
                        .collect();
                    let rows2: Vec<Vec<f64>> = net
                        .outer_nodes()
                        .iter()
                        .map(|&v| m2[v].clone())
                        .collect();
                    let a = mat_scale_cols(&mat_neg_part(&rows1), &weights);
                    let b = mat_neg_part(&mat_transpose(&rows2));
                    let prod = mat_mul(&a, &b);
                    for row in &prod {
                        for &x in row {
                            assert_eq!(x, 0.0);
                        }
                    }
                }
            }
        }
    }
}
