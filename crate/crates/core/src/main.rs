use clap::{Parser, Subcommand};
use netflux::bounds::{build_envelope, BoundsError};
use netflux::exprs::parse;
use netflux::io::{load_scenario, write_results, IoError, ResultBundle};
use netflux::oracle::{l1_error, CharacteristicSolution, OracleError};
use netflux::solver::{solve_coupled, solve_picard, stability_study, SolveError};
use netflux::verify::{run_all, VerifyConfig};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "netflux",
    version,
    about = "Finite-volume transport on directed networks with coupled node conditions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write CSV results plus a manifest.
    Simulate {
        file: PathBuf,
        /// Output directory (created if missing).
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also compute and write the barrier envelope table.
        #[arg(long)]
        envelope: bool,
        /// Snapshot times, overriding the scenario's own list.
        #[arg(long, value_delimiter = ',', value_name = "T1,T2,...")]
        snapshots: Option<Vec<f64>>,
    },
    /// Solve through the fixed-point node iteration and report it.
    Picard {
        file: PathBuf,
        /// Convergence tolerance on the inflow tables.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 64)]
        max_iter: usize,
    },
    /// Run the full invariant catalogue; exit 1 if any check fails.
    Verify {
        file: PathBuf,
        /// Also write the machine-readable report here.
        #[arg(long, value_name = "PATH")]
        json: Option<PathBuf>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Random traces per algebraic check.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Halve the grid repeatedly and print L1 errors against the
    /// characteristic-tracing reference (single-edge scenarios with
    /// space-independent velocity).
    Convergence {
        file: PathBuf,
        /// Number of halvings.
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Distance of velocity-perturbed runs from the base run.
    Stability {
        file: PathBuf,
        /// Perturbation shape g(t); the runs use u + delta * g.
        #[arg(long, value_name = "EXPR")]
        perturb: String,
        #[arg(long, value_delimiter = ',', value_name = "D0,D1,...", required = true)]
        deltas: Vec<f64>,
        /// Norm exponent for the distances.
        #[arg(long, default_value_t = 1.0)]
        p: f64,
    },
}

/// Failure with the exit code it maps to: 1 for violated properties or
/// failed runs, 2 for unusable input.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: String) -> Self {
        Failure { code: 2, message }
    }

    fn run(message: String) -> Self {
        Failure { code: 1, message }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<SolveError> for Failure {
    fn from(e: SolveError) -> Self {
        Failure::run(e.to_string())
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        Failure::run(e.to_string())
    }
}

impl From<BoundsError> for Failure {
    fn from(e: BoundsError) -> Self {
        Failure::run(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode, Failure> {
    match cmd {
        Cmd::Simulate { file, out, envelope, snapshots } => {
            let loaded = load_scenario(&file)?;
            let mut scn = loaded.scenario;
            if let Some(times) = snapshots {
                for (i, &t) in times.iter().enumerate() {
                    if !(0.0..=scn.t_final).contains(&t) {
                        return Err(Failure::input(format!(
                            "snapshot time #{i} ({t}) outside [0, {}]",
                            scn.t_final
                        )));
                    }
                }
                scn.snapshots = times;
            }
            let sol = solve_coupled(&scn)?;
            let env = if envelope { Some(build_envelope(&scn, &sol.grid)?) } else { None };
            let bundle = ResultBundle {
                scenario: &scn,
                solution: &sol,
                envelope: env.as_ref(),
                edge_ids: &loaded.edge_ids,
                input_sha256: &loaded.input_sha256,
            };
            let written = write_results(&bundle, &out)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Picard { file, tol, max_iter } => {
            let loaded = load_scenario(&file)?;
            let outcome = match solve_picard(&loaded.scenario, tol, max_iter) {
                Ok(o) => o,
                Err(e @ SolveError::NegativeData { .. }) => {
                    return Err(Failure::input(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            let history = &outcome.inflow_history;
            let mut last_delta = 0.0f64;
            if history.len() >= 2 {
                let (prev, next) = (&history[history.len() - 2], &history[history.len() - 1]);
                for (rp, rn) in prev.iter().zip(next) {
                    for (vp, vn) in rp.iter().zip(rn) {
                        last_delta = last_delta.max(vn - vp);
                    }
                }
            }
            println!(
                "converged in {} iterations; final inflow change {:.3e}",
                outcome.iterations, last_delta
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Verify { file, json, seed, samples } => {
            let loaded = load_scenario(&file)?;
            let cfg = VerifyConfig { seed, trace_samples: samples };
            let report = run_all(&loaded.scenario, &cfg);
            print!("{}", report.table());
            if let Some(path) = json {
                std::fs::write(&path, report.to_json() + "\n").map_err(|e| {
                    Failure::input(format!("cannot write {}: {e}", path.display()))
                })?;
            }
            Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Convergence { file, levels } => {
            let loaded = load_scenario(&file)?;
            let scn = loaded.scenario;
            if scn.net.num_edges() != 1 {
                return Err(Failure::input(
                    "grid-refinement study needs a single-edge scenario".to_string(),
                ));
            }
            if scn.u[0].depends_on_x() {
                return Err(Failure::input(
                    "grid-refinement study needs a space-independent velocity".to_string(),
                ));
            }
            let edge = scn.net.edges()[0].clone();
            let data_at = |node: usize| {
                scn.rho_out
                    .iter()
                    .find(|&&(v, _)| v == node)
                    .map(|(_, e)| e.clone())
                    .expect("outer data present after validation")
            };
            let reference = CharacteristicSolution::new(
                scn.u[0].clone(),
                scn.rho0[0].clone(),
                data_at(edge.init),
                data_at(edge.ter),
            )?;
            let mut errors = Vec::with_capacity(levels + 1);
            println!("{:>8} {:>22} {:>10}", "cells", "l1_error", "order");
            for k in 0..=levels {
                let mut s = scn.clone();
                s.cells[0] = scn.cells[0] << k;
                let sol = solve_coupled(&s)?;
                let err = l1_error(&sol.cells[sol.final_level()][0], &reference, s.t_final)?;
                let order = errors
                    .last()
                    .map(|&prev: &f64| (prev / err).log2())
                    .map(|o| format!("{o:.3}"))
                    .unwrap_or_else(|| "-".to_string());
                println!("{:>8} {:>22.16e} {:>10}", s.cells[0], err, order);
                errors.push(err);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Stability { file, perturb, deltas, p } => {
            let loaded = load_scenario(&file)?;
            let g = parse(&perturb)
                .map_err(|e| Failure::input(format!("--perturb expression: {e}")))?;
            if deltas.is_empty() {
                return Err(Failure::input("--deltas needs at least one value".to_string()));
            }
            let distances = match stability_study(&loaded.scenario, &g, &deltas, p) {
                Ok(d) => d,
                Err(e @ SolveError::SpaceDependentPerturbation) => {
                    return Err(Failure::input(e.to_string()))
                }
                Err(e) => return Err(e.into()),
            };
            println!("{:>22} {:>22}", "delta", "distance");
            for (d, dist) in deltas.iter().zip(&distances) {
                println!("{:>22.16e} {:>22.16e}", d, dist);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
