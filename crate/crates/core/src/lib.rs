//! Conservative solver for open-loop two-player zero-sum Stackelberg
//! differential games with state constraints on both players.
//!
//! The game value is over-approximated by propagating a backward and a
//! forward ellipsoidal reachability tube for the second player, fusing their
//! pointwise-in-time intersection, and minimizing the worst-case terminal
//! cost over the leader's control with a direct multiple shooting
//! transcription solved by an SQP method.
//!
//! Module map:
//! - [`ellipsoid`]: ellipsoid data type and set-calculus primitives
//!   (support functions, affine images, Minkowski outer bounds, intersection
//!   fusion, exact intersection support).
//! - [`expr`] / [`dynamics`]: arithmetic expression models of the game
//!   dynamics with forward-mode differentiation and interval remainder
//!   bounds.
//! - [`tube`]: the coupled backward/forward tube ODEs and their
//!   integration.
//! - [`nlp`] / [`ocp`]: multiple-shooting transcription and the SQP solver
//!   for the resulting nonlinear program, plus the follower best-response
//!   and robust variants.
//! - [`oracle`]: independent verification by Monte-Carlo trajectory
//!   sampling and exhaustive grid reachability.
//! - [`config`]: JSON run configuration shared with the command-line tool.

pub mod config;
pub mod dynamics;
pub mod ellipsoid;
pub mod expr;
pub mod integrate;
pub mod interval;
pub mod nlp;
pub mod ocp;
pub mod oracle;
pub mod sym;
pub mod tube;

pub use dynamics::{GameModel, GameProblem};
pub use ellipsoid::{BoxSet, Ellipsoid};
pub use ocp::{GameSolution, SolverConfig};
pub use oracle::MonteCarloReport;
pub use tube::{Multipliers, TubeState, TubeTrajectory};
