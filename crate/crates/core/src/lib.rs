//! Co-simulation of a stochastic wildfire over a raster landscape and a DC
//! transmission grid operated under de-energization pressure, together with a
//! deterministic-policy-gradient agent that learns proactive control actions
//! (line/substation keep-alive flags and generator setpoint nudges).
//!
//! The crate is organized bottom-up:
//!
//! * [`wildfire`] — cellular-automaton fire spread on a fuel raster.
//! * [`geomap`] — asset footprints on the raster, fire distances, and the
//!   reduced fire observation consumed by controllers.
//! * [`gridmodel`] — network data model and the text case/layout formats.
//! * [`qpsolve`] — convex QP solver (operator splitting) plus a small
//!   branch-and-bound layer for binary commitment variables.
//! * [`operator`] — the myopic grid operator: topology revision, setpoint
//!   vetting, and the per-step dispatch program.
//! * [`env`] — the sequential decision environment tying fire and grid
//!   together, with the penalty accounting.
//! * [`neural`] — dense multi-layer perceptrons with exact reverse-mode
//!   gradients and Adam.
//! * [`ddpg`] — replay buffer, exploration noise, actor/critic training, and
//!   evaluation.
//! * [`policies`] — baseline and learned control policies mapping
//!   observations to operator directives.
//! * [`config`] / [`report`] — run configuration and CSV reporting used by
//!   the command-line harness.
//!
//! Numeric kernels are generic over [`scalar::Scalar`]; orchestration code
//! uses the crate-level [`Real`] alias.

pub mod config;
pub mod ddpg;
pub mod env;
pub mod geomap;
pub mod gridmodel;
pub mod neural;
pub mod operator;
pub mod policies;
pub mod qpsolve;
pub mod report;
pub mod scalar;
pub mod seeds;
pub mod wildfire;

/// Concrete scalar used by the simulation and training layers.
///
/// All grid quantities are in engineering units (MW, radians, hours); 64-bit
/// arithmetic keeps penalty accounting exact enough for the strict equality
/// checks in the test suite.
pub type Real = f64;
