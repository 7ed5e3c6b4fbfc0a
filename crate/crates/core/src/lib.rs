//! Parallel stochastic coordinate descent for generalized linear models.
//!
//! The crate trains models of the form `F(alpha) = f(A alpha) + sum_i g_i(alpha_i)`
//! with three solvers:
//!
//! * [`solvers::run_sequential_scd`], single-threaded SCD with exact steps;
//! * [`solvers::run_wild_parallel_scd`], lock-free asynchronous SCD on one
//!   shared vector;
//! * [`solvers::run_syscd`], the system-aware variant: cache-line buckets,
//!   per-thread replicas with dynamic re-partitioning, and node-group
//!   replicas synchronized hierarchically.
//!
//! [`theory`] evaluates the matching convergence bound and [`experiment`]
//! drives benchmark sweeps that write per-epoch CSV.
//!
//! ```
//! use syscd::dataset::generate_synthetic_dense;
//! use syscd::objective::{GlmProblem, Regularizer, SmoothLoss};
//! use syscd::solvers::{run_syscd, SolverConfig};
//!
//! let data = generate_synthetic_dense(500, 32, 7).unwrap();
//! let problem = GlmProblem::new(data, SmoothLoss::SQUARED, Regularizer::l2(1.0).unwrap()).unwrap();
//! let mut cfg = SolverConfig::syscd(1, 2);
//! cfg.max_epochs = 50;
//! let result = run_syscd(&problem, &cfg).unwrap();
//! assert!(result.final_objective() < result.metrics[0].objective);
//! ```

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod objective;
pub mod partitioning;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/objectives.md")]
    mod objectives {}
    #[doc = include_str!("../../../book/src/partitioning.md")]
    mod partitioning {}
    #[doc = include_str!("../../../book/src/solvers.md")]
    mod solvers {}
    #[doc = include_str!("../../../book/src/theory.md")]
    mod theory {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
