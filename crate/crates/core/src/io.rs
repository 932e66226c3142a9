//! Scenario file ingestion and result serialization.
//!
//! Scenarios are single JSON documents with three sections: `network`
//! (named nodes, edges with per-edge field expressions), `boundary`
//! (outer-node data expressions in `t`) and `sim` (horizon, CFL number,
//! snapshot times, coupling selection). Expressions stay strings inside
//! the container so the grammar lives entirely in one module.
//!
//! Outputs are plain CSV tables plus a small JSON manifest with the
//! input hash; runs are deterministic, so re-running a scenario must
//! reproduce every output byte for byte.

use crate::boundary::{CouplingMode, WeightMatrix};
use crate::bounds::BoundEnvelope;
use crate::exprs::{parse, ParseError};
use crate::graph::{build_network, NetworkError};
use crate::solver::{Scenario, SolutionField, SolveError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum IoError {
    Read { path: String, source: std::io::Error },
    Write { path: String, source: std::io::Error },
    /// Malformed JSON; the message carries line/column from the parser.
    Json { path: String, message: String },
    /// Structurally valid document with a bad field.
    Field { field: String, message: String },
    ExprSyntax { field: String, source: ParseError },
    Network(NetworkError),
    Scenario(SolveError),
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Read { path, source } => write!(f, "cannot read {path}: {source}"),
            IoError::Write { path, source } => write!(f, "cannot write {path}: {source}"),
            IoError::Json { path, message } => write!(f, "{path}: {message}"),
            IoError::Field { field, message } => write!(f, "field `{field}`: {message}"),
            IoError::ExprSyntax { field, source } => {
                write!(f, "field `{field}`: expression error: {source}")
            }
            IoError::Network(e) => write!(f, "network: {e}"),
            IoError::Scenario(e) => write!(f, "scenario: {e}"),
        }
    }
}

impl std::error::Error for IoError {}

fn default_zero() -> String {
    "0".to_string()
}

fn default_coupling() -> String {
    "mixing".to_string()
}

fn default_p_norms() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: String,
    pub init: String,
    pub ter: String,
    pub cells: usize,
    pub u: String,
    pub u_x: String,
    #[serde(default = "default_zero")]
    pub c: String,
    #[serde(default = "default_zero")]
    pub f: String,
    pub rho0: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub nodes: Vec<String>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimDoc {
    #[serde(rename = "T")]
    pub t_final: f64,
    pub cfl: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default = "default_p_norms")]
    pub p_norms: Vec<f64>,
    #[serde(default = "default_coupling")]
    pub coupling: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

/// The on-disk scenario document. Boundary entries live in an ordered
/// map so echoing a document is deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub network: NetworkDoc,
    pub boundary: BTreeMap<String, String>,
    pub sim: SimDoc,
}

/// A parsed scenario plus the names and input hash the document carried.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub node_ids: Vec<String>,
    pub edge_ids: Vec<String>,
    /// SHA-256 of the input file bytes, lowercase hex.
    pub input_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn load_document(path: &Path) -> Result<ScenarioDoc, IoError> {
    let text = fs::read_to_string(path)
        .map_err(|source| IoError::Read { path: path.display().to_string(), source })?;
    serde_json::from_str(&text)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })
}

pub fn write_document(doc: &ScenarioDoc, path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(doc)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })?;
    fs::write(path, text + "\n")
        .map_err(|source| IoError::Write { path: path.display().to_string(), source })
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario, IoError> {
    let bytes = fs::read(path)
        .map_err(|source| IoError::Read { path: path.display().to_string(), source })?;
    let input_sha256 = sha256_hex(&bytes);
    let text = String::from_utf8_lossy(&bytes);
    let doc: ScenarioDoc = serde_json::from_str(&text)
        .map_err(|e| IoError::Json { path: path.display().to_string(), message: e.to_string() })?;
    let (scenario, node_ids, edge_ids) = document_to_scenario(&doc)?;
    Ok(LoadedScenario { scenario, node_ids, edge_ids, input_sha256 })
}

/// Turn a document into a validated runnable scenario; also returns the
/// node and edge names in index order for labeling outputs.
pub fn document_to_scenario(
    doc: &ScenarioDoc,
) -> Result<(Scenario, Vec<String>, Vec<String>), IoError> {
    let mut node_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in doc.network.nodes.iter().enumerate() {
        if node_index.insert(name, i).is_some() {
            return Err(IoError::Field {
                field: format!("network.nodes[{i}]"),
                message: format!("duplicate node id `{name}`"),
            });
        }
    }

    let mut pairs = Vec::with_capacity(doc.network.edges.len());
    let mut edge_ids = Vec::with_capacity(doc.network.edges.len());
    for (k, e) in doc.network.edges.iter().enumerate() {
        let field = |part: &str| format!("network.edges[{k}].{part}");
        let init = *node_index.get(e.init.as_str()).ok_or_else(|| IoError::Field {
            field: field("init"),
            message: format!("unknown node `{}`", e.init),
        })?;
        let ter = *node_index.get(e.ter.as_str()).ok_or_else(|| IoError::Field {
            field: field("ter"),
            message: format!("unknown node `{}`", e.ter),
        })?;
        if e.cells == 0 {
            return Err(IoError::Field {
                field: field("cells"),
                message: "needs at least one cell".to_string(),
            });
        }
        pairs.push((init, ter));
        edge_ids.push(e.id.clone());
    }
    let net = build_network(doc.network.nodes.len(), &pairs).map_err(IoError::Network)?;

    let parse_field = |field: String, text: &str| {
        parse(text).map_err(|source| IoError::ExprSyntax { field, source })
    };
    let mut u = Vec::new();
    let mut u_x = Vec::new();
    let mut c = Vec::new();
    let mut f = Vec::new();
    let mut rho0 = Vec::new();
    let mut cells = Vec::new();
    for (k, e) in doc.network.edges.iter().enumerate() {
        u.push(parse_field(format!("network.edges[{k}].u"), &e.u)?);
        u_x.push(parse_field(format!("network.edges[{k}].u_x"), &e.u_x)?);
        c.push(parse_field(format!("network.edges[{k}].c"), &e.c)?);
        f.push(parse_field(format!("network.edges[{k}].f"), &e.f)?);
        rho0.push(parse_field(format!("network.edges[{k}].rho0"), &e.rho0)?);
        cells.push(e.cells);
    }

    // Boundary section: exactly the outer nodes, no others.
    let mut rho_out = Vec::new();
    for (name, expr_text) in &doc.boundary {
        let Some(&v) = node_index.get(name.as_str()) else {
            return Err(IoError::Field {
                field: format!("boundary.{name}"),
                message: "unknown node".to_string(),
            });
        };
        if net.is_inner(v) {
            return Err(IoError::Field {
                field: format!("boundary.{name}"),
                message: "node is inner; inner nodes take no boundary data".to_string(),
            });
        }
        let expr = parse_field(format!("boundary.{name}"), expr_text)?;
        if expr.depends_on_x() {
            return Err(IoError::Field {
                field: format!("boundary.{name}"),
                message: "boundary data may only depend on t".to_string(),
            });
        }
        rho_out.push((v, expr));
    }
    for &v in net.outer_nodes() {
        if !rho_out.iter().any(|&(w, _)| w == v) {
            return Err(IoError::Field {
                field: format!("boundary.{}", doc.network.nodes[v]),
                message: "outer node has no boundary data".to_string(),
            });
        }
    }

    let mode = match doc.sim.coupling.as_str() {
        "mixing" => CouplingMode::Mixing,
        "zero-g" => CouplingMode::ZeroG,
        other => {
            return Err(IoError::Field {
                field: "sim.coupling".to_string(),
                message: format!("unknown coupling `{other}` (use \"mixing\" or \"zero-g\")"),
            })
        }
    };
    for (i, &p) in doc.sim.p_norms.iter().enumerate() {
        if !(p >= 1.0) {
            return Err(IoError::Field {
                field: format!("sim.p_norms[{i}]"),
                message: format!("norm exponent {p} is below 1"),
            });
        }
    }
    for (i, &t) in doc.sim.snapshots.iter().enumerate() {
        if !(0.0..=doc.sim.t_final).contains(&t) {
            return Err(IoError::Field {
                field: format!("sim.snapshots[{i}]"),
                message: format!("snapshot time {t} outside [0, T]"),
            });
        }
    }
    let weights = match &doc.sim.weights {
        None => None,
        Some(w) => {
            if w.len() != net.num_edges() {
                return Err(IoError::Field {
                    field: "sim.weights".to_string(),
                    message: format!("{} weights for {} edges", w.len(), net.num_edges()),
                });
            }
            Some(WeightMatrix::new(w.clone()).map_err(|e| IoError::Field {
                field: "sim.weights".to_string(),
                message: e.to_string(),
            })?)
        }
    };

    let scenario = Scenario {
        net,
        u,
        u_x,
        c,
        f,
        rho0,
        rho_out,
        t_final: doc.sim.t_final,
        cfl: doc.sim.cfl,
        cells,
        mode,
        weights,
        snapshots: doc.sim.snapshots.clone(),
        p_norms: doc.sim.p_norms.clone(),
    };
    scenario.validate().map_err(IoError::Scenario)?;
    Ok((scenario, doc.network.nodes.clone(), edge_ids))
}

/// Everything one run wants written to disk.
pub struct ResultBundle<'a> {
    pub scenario: &'a Scenario,
    pub solution: &'a SolutionField,
    pub envelope: Option<&'a BoundEnvelope>,
    pub edge_ids: &'a [String],
    pub input_sha256: &'a str,
}

/// 17 significant digits: enough to reproduce any f64 exactly.
fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), IoError> {
    let mut f = fs::File::create(path)
        .map_err(|source| IoError::Write { path: path.display().to_string(), source })?;
    f.write_all(content.as_bytes())
        .map_err(|source| IoError::Write { path: path.display().to_string(), source })
}

/// Write the CSV tables and the manifest into `dir` (created if
/// missing). Returns the paths written, in a fixed order.
pub fn write_results(bundle: &ResultBundle<'_>, dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir)
        .map_err(|source| IoError::Write { path: dir.display().to_string(), source })?;
    let sol = bundle.solution;
    let grid = &sol.grid;
    let mut written = Vec::new();

    // snapshots.csv: one block per requested snapshot time.
    let mut s = String::from("edge,cell,x,t,rho\n");
    for &(_, level) in &sol.snapshots {
        let t = grid.time(level);
        for e in 0..grid.cells.len() {
            for i in 0..grid.cells[e] {
                s.push_str(&format!(
                    "{},{},{},{},{}\n",
                    csv_field(&bundle.edge_ids[e]),
                    i,
                    fmt17(grid.center(e, i)),
                    fmt17(t),
                    fmt17(sol.cells[level][e][i]),
                ));
            }
        }
    }
    let p = dir.join("snapshots.csv");
    write_file(&p, &s)?;
    written.push(p);

    // traces.csv: full time history of every boundary point.
    let mut s = String::from("edge,endpoint,t,gamma_rho,nu_u\n");
    for n in 0..sol.trace.num_levels() {
        let t = sol.trace.time(n);
        for p in 0..sol.trace.num_points() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&bundle.edge_ids[p / 2]),
                p % 2,
                fmt17(t),
                fmt17(sol.trace.gamma_rho[n][p]),
                fmt17(sol.trace.nu_u[n][p]),
            ));
        }
    }
    let p = dir.join("traces.csv");
    write_file(&p, &s)?;
    written.push(p);

    // envelope.csv: global barrier per time level (upper maxed over
    // edges; lower column empty when the data admit no positive floor).
    if let Some(env) = bundle.envelope {
        let mut s = String::from("t,upper,lower\n");
        for n in 0..env.num_levels() {
            let upper = (0..grid.cells.len())
                .map(|e| env.upper(n, e))
                .fold(f64::NEG_INFINITY, f64::max);
            let lower = env.lower(n).map(fmt17).unwrap_or_default();
            s.push_str(&format!("{},{},{}\n", fmt17(env.times[n]), fmt17(upper), lower));
        }
        let p = dir.join("envelope.csv");
        write_file(&p, &s)?;
        written.push(p);
    }

    // diagnostics.csv: per-level mass bookkeeping.
    let mut s = String::from("step,t,mass,boundary_flux,source\n");
    for (n, d) in sol.diagnostics.iter().enumerate() {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            n,
            fmt17(d.t),
            fmt17(d.mass),
            fmt17(d.boundary_flux),
            fmt17(d.source),
        ));
    }
    let p = dir.join("diagnostics.csv");
    write_file(&p, &s)?;
    written.push(p);

    // manifest.json: reproducibility record.
    let manifest = serde_json::json!({
        "input_sha256": bundle.input_sha256,
        "version": env!("CARGO_PKG_VERSION"),
        "t_final": bundle.scenario.t_final,
        "cfl": bundle.scenario.cfl,
        "grid": {
            "steps": grid.steps,
            "dt": grid.dt,
            "cells": grid.cells,
        },
        "coupling": match bundle.scenario.mode {
            CouplingMode::Mixing => "mixing",
            CouplingMode::ZeroG => "zero-g",
        },
        "snapshot_levels": sol.snapshots.iter().map(|&(_, l)| l).collect::<Vec<_>>(),
        "validation_seed": 42,
    });
    let p = dir.join("manifest.json");
    write_file(&p, &(serde_json::to_string_pretty(&manifest).unwrap() + "\n"))?;
    written.push(p);

    Ok(written)
}
