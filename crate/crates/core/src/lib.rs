//! Finite-volume solver and verification suite for linear transport
//! equations on directed networks.
//!
//! Each edge of the network carries a density governed by
//! `rho_t + (u rho)_x + c rho = f` on the unit interval, with boundary
//! data prescribed only where the flow enters the edge. At nodes the
//! inflow values are produced by a coupling operator that mixes the
//! mass arriving along the adjacent edges (flux-weighted mean), so mass
//! is conserved through every interior node.
//!
//! The crate is organised around that pipeline:
//!
//! * [`exprs`] — small expression language for coefficients and data,
//! * [`graph`] — directed networks and their incidence structure,
//! * [`boundary`] — node coupling operators and their invariants,
//! * [`bounds`] — a-priori solution envelopes,
//! * [`solver`] — the explicit upwind scheme, residuals, and probes,
//! * [`oracle`] — exact solutions by characteristics for single edges,
//! * [`io`] — scenario files, result bundles, reports,
//! * [`verify`] — the batteries-included invariant check catalogue.

pub mod boundary;
pub mod bounds;
pub mod exprs;
pub mod graph;
pub mod io;
pub mod oracle;
pub mod solver;
pub mod verify;
