//! Distributed adaptive node-specific signal fusion over simulated sensor
//! networks.
//!
//! Each node of a connected network senses part of a network-wide stochastic
//! signal and wants its own optimal spatial filter, where the per-node
//! optimization problems are coupled through a common latent signal model.
//! The fusion engine solves all of them distributively: per iteration the
//! network is pruned to a tree, nodes sum-and-forward compressed signal
//! blocks toward a round-robin updating node, that node solves a compressed
//! instance of its own problem, and every other node derives its filter from
//! the disseminated solution stream through a small `Q×Q` correction solve.
//! Runs converge to the centralized per-node oracles, which the metrics and
//! experiment layers verify.
//!
//! Entry points:
//! - [`network`]: topologies, tree pruning, gather schedules, link accounting
//! - [`signals`]: the Gaussian mixture signal model and covariance estimates
//! - [`problems`]: the problem interface, closed-form solvers, coupled families
//! - [`engine`]: the distributed iteration itself
//! - [`metrics`]: convergence curves, monotonicity checks, Monte-Carlo summaries
//! - [`experiment`]: config-driven experiment runner (CSV/SVG outputs)
//!
//! The `examples/` directory walks through each capability; the `dansf`
//! binary wraps the experiment runner (`run`, `sweep`, `plot`, `verify`).

pub mod engine;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod plot;
pub mod problems;
pub mod signals;

pub(crate) mod seeds;

pub use error::{DansfError, Result};
