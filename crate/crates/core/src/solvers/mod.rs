//! Training loops: sequential SCD, the wild asynchronous baseline and SySCD.
//!
//! All three start from `alpha = 0` and report one [`EpochMetrics`] row per
//! `n` coordinate updates, preceded by a row for the initial model.

mod sequential;
mod syscd;
mod wild;

use std::time::Duration;

pub use sequential::run_sequential_scd;
pub use syscd::run_syscd;
pub use wild::run_wild_parallel_scd;

use crate::error::{Error, Result};
use crate::objective::{full_objective, GlmProblem};
use crate::partitioning::{Sampling, DEFAULT_BUCKET_SIZE};

/// Relative model change below which a run is declared converged.
pub const DEFAULT_TOLERANCE: f64 = 1e-5;
/// A run whose objective exceeds this multiple of the initial one is diverged.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Sequential,
    Wild,
    Syscd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Sequential => "sequential",
            Algorithm::Wild => "wild",
            Algorithm::Syscd => "syscd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Repartition {
    /// Fresh bucket-to-thread assignment every local round.
    #[default]
    Dynamic,
    /// The round-0 assignment is reused for the whole run.
    Static,
}

/// Interleaving of the wild solver's threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WildSchedule {
    /// Threads run freely; the OS decides the interleaving.
    #[default]
    Free,
    /// All threads read the shared vector, then all threads write, in lock
    /// step. This is the staleness a machine with `P` idle cores produces
    /// when updates overlap completely, independent of the actual core count.
    Lockstep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// `K`, node groups.
    pub nodes: usize,
    /// `P`, threads per node group.
    pub threads_per_node: usize,
    /// `B`.
    pub bucket_size: usize,
    /// `T1`. `None` runs until `max_epochs` or convergence.
    pub global_rounds: Option<usize>,
    /// `T2`.
    pub local_rounds: usize,
    /// `T3`. `None` is one pass over the thread's buckets, i.e. `n / (P B K)`.
    pub buckets_per_thread: Option<usize>,
    /// `T4`. `None` is one pass over the bucket, i.e. `B`.
    pub updates_per_bucket: Option<usize>,
    pub sampling: Sampling,
    pub repartition: Repartition,
    pub wild_schedule: WildSchedule,
    pub seed: u64,
    pub max_epochs: usize,
    pub tolerance: f64,
    /// Check solver invariants while running and fail on violation.
    pub verify: bool,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            nodes: 1,
            threads_per_node: 1,
            bucket_size: DEFAULT_BUCKET_SIZE,
            global_rounds: None,
            local_rounds: 1,
            buckets_per_thread: None,
            updates_per_bucket: None,
            sampling: Sampling::Perm,
            repartition: Repartition::Dynamic,
            wild_schedule: WildSchedule::Free,
            seed: 1,
            max_epochs: 100,
            tolerance: DEFAULT_TOLERANCE,
            verify: false,
        }
    }

    pub fn sequential() -> Self {
        Self::new(Algorithm::Sequential)
    }

    pub fn wild(threads: usize) -> Self {
        SolverConfig {
            threads_per_node: threads,
            ..Self::new(Algorithm::Wild)
        }
    }

    pub fn syscd(nodes: usize, threads_per_node: usize) -> Self {
        SolverConfig {
            nodes,
            threads_per_node,
            ..Self::new(Algorithm::Syscd)
        }
    }

    pub fn total_threads(&self) -> usize {
        self.nodes * self.threads_per_node
    }

    pub fn validate(&self, n_coordinates: usize) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("threads per node", self.threads_per_node),
            ("bucket size", self.bucket_size),
            ("local rounds", self.local_rounds),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.global_rounds == Some(0) || self.buckets_per_thread == Some(0) || self.updates_per_bucket == Some(0) {
            return Err(Error::Config("T1, T3 and T4 must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        match self.algorithm {
            Algorithm::Sequential if self.total_threads() != 1 => {
                Err(Error::Config("sequential solver runs on one thread".into()))
            }
            Algorithm::Wild if self.nodes != 1 => Err(Error::Config("wild solver is flat (K must be 1)".into())),
            Algorithm::Wild if self.threads_per_node > n_coordinates => Err(Error::Config(format!(
                "{} threads for {n_coordinates} coordinates",
                self.threads_per_node
            ))),
            Algorithm::Syscd => {
                let buckets = n_coordinates.div_ceil(self.bucket_size);
                if self.total_threads() > buckets {
                    Err(Error::Config(format!(
                        "K*P = {} exceeds the {buckets} buckets",
                        self.total_threads()
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub objective: f64,
    /// `F(alpha) - F*` once a reference optimum is attached.
    pub suboptimality: Option<f64>,
    /// Training time spent since the previous row, excluding evaluation.
    pub wall_seconds: f64,
    /// Coordinate updates since the previous row.
    pub updates: usize,
    /// `||alpha_e - alpha_{e-1}||_inf / max(1, ||alpha_e||_inf)`; `None` for
    /// the initial row.
    pub rel_change: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    /// Epoch or round budget exhausted before convergence.
    BudgetExhausted,
    Diverged,
}

impl RunStatus {
    /// Value of the `reason` column in the CSV outputs.
    pub fn reason(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::BudgetExhausted => "budget",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub alpha: Vec<f64>,
    /// `metrics[0]` is the initial model; one row per epoch follows.
    pub metrics: Vec<EpochMetrics>,
    pub status: RunStatus,
    pub total_updates: usize,
}

impl TrainResult {
    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    pub fn diverged(&self) -> bool {
        self.status == RunStatus::Diverged
    }

    pub fn epochs(&self) -> usize {
        self.metrics.last().map_or(0, |m| m.epoch)
    }

    pub fn final_objective(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.objective)
    }

    /// Fill in suboptimality against a known optimum `F*`.
    pub fn with_reference(mut self, f_star: f64) -> Self {
        for m in &mut self.metrics {
            m.suboptimality = Some(m.objective - f_star);
        }
        self
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.objective).collect()
    }
}

/// Run whichever solver `cfg.algorithm` names.
pub fn train(p: &GlmProblem, cfg: &SolverConfig) -> Result<TrainResult> {
    match cfg.algorithm {
        Algorithm::Sequential => run_sequential_scd(p, cfg),
        Algorithm::Wild => run_wild_parallel_scd(p, cfg),
        Algorithm::Syscd => run_syscd(p, cfg),
    }
}

/// `base + sum_p (replica_p - base)`, accumulated per component as
/// `replica_0 + (replica_1 - base) + (replica_2 - base) + ...`.
///
/// The fixed order makes parallel runs reproducible; a single replica is
/// returned unchanged.
pub fn reduce_replicas(base: &[f64], replicas: &[&[f64]]) -> Result<Vec<f64>> {
    for r in replicas {
        if r.len() != base.len() {
            return Err(Error::DimensionMismatch(format!(
                "replica of length {} for base of length {}",
                r.len(),
                base.len()
            )));
        }
    }
    let mut out = base.to_vec();
    reduce_into(&mut out, replicas);
    Ok(out)
}

pub(crate) fn reduce_into(base: &mut [f64], replicas: &[&[f64]]) {
    let Some((first, rest)) = replicas.split_first() else {
        return;
    };
    for (i, b) in base.iter_mut().enumerate() {
        let mut acc = first[i];
        for r in rest {
            acc += r[i] - *b;
        }
        *b = acc;
    }
}

fn linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

pub(crate) fn relative_change(prev: &[f64], next: &[f64]) -> f64 {
    let diff = prev.iter().zip(next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / linf(next).max(1.0)
}

pub(crate) enum Flow {
    Continue,
    Stop,
}

/// Epoch bookkeeping shared by the solvers.
pub(crate) struct Monitor<'a> {
    problem: &'a GlmProblem,
    tolerance: f64,
    max_epochs: usize,
    initial_objective: f64,
    prev_alpha: Vec<f64>,
    pub metrics: Vec<EpochMetrics>,
    pub status: RunStatus,
    pub total_updates: usize,
    pending_updates: usize,
    pending_time: Duration,
}

impl<'a> Monitor<'a> {
    pub fn new(problem: &'a GlmProblem, cfg: &SolverConfig) -> Result<Self> {
        let alpha = vec![0.0; problem.n_coordinates()];
        let initial_objective = full_objective(problem, &alpha)?;
        Ok(Monitor {
            problem,
            tolerance: cfg.tolerance,
            max_epochs: cfg.max_epochs,
            initial_objective,
            prev_alpha: alpha,
            metrics: vec![EpochMetrics {
                epoch: 0,
                objective: initial_objective,
                suboptimality: None,
                wall_seconds: 0.0,
                updates: 0,
                rel_change: None,
            }],
            status: RunStatus::BudgetExhausted,
            total_updates: 0,
            pending_updates: 0,
            pending_time: Duration::ZERO,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.total_updates / self.problem.n_coordinates()
    }

    pub fn budget_left(&self) -> bool {
        self.epochs_done() < self.max_epochs
    }

    /// Account for a chunk of training work. Emits a metrics row whenever an
    /// epoch boundary has been crossed and reports whether to stop.
    pub fn record(&mut self, alpha: &[f64], updates: usize, elapsed: Duration) -> Result<Flow> {
        let before = self.epochs_done();
        self.total_updates += updates;
        self.pending_updates += updates;
        self.pending_time += elapsed;
        let epoch = self.epochs_done();
        if epoch == before {
            return Ok(Flow::Continue);
        }
        let objective = full_objective(self.problem, alpha)?;
        let rel_change = relative_change(&self.prev_alpha, alpha);
        self.prev_alpha.copy_from_slice(alpha);
        self.metrics.push(EpochMetrics {
            epoch,
            objective,
            suboptimality: None,
            wall_seconds: self.pending_time.as_secs_f64(),
            updates: self.pending_updates,
            rel_change: Some(rel_change),
        });
        self.pending_updates = 0;
        self.pending_time = Duration::ZERO;

        let limit = DIVERGENCE_FACTOR * self.initial_objective.abs().max(f64::MIN_POSITIVE);
        if !objective.is_finite() || objective > limit {
            self.status = RunStatus::Diverged;
            return Ok(Flow::Stop);
        }
        if rel_change < self.tolerance {
            self.status = RunStatus::Converged;
            return Ok(Flow::Stop);
        }
        if epoch >= self.max_epochs {
            return Ok(Flow::Stop);
        }
        Ok(Flow::Continue)
    }

    pub fn mark_diverged(&mut self) {
        self.status = RunStatus::Diverged;
    }

    pub fn finish(self, alpha: Vec<f64>) -> TrainResult {
        TrainResult {
            alpha,
            metrics: self.metrics,
            status: self.status,
            total_updates: self.total_updates,
        }
    }
}

/// `||shared - fresh||_inf <= 1e-8 * max(1, ||fresh||_inf)` where `fresh` is
/// recomputed from `alpha`.
pub(crate) fn check_consistency(p: &GlmProblem, alpha: &[f64], shared: &[f64]) -> Result<()> {
    let fresh = p.shared_from_v(p.data.matrix.matvec(alpha)?);
    let err = fresh.iter().zip(shared).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = linf(&fresh).max(1.0);
    if err > 1e-8 * scale {
        return Err(Error::Invariant(format!(
            "shared vector drifted from A*alpha by {err:.3e} (scale {scale:.3e})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_single_replica_is_identity() {
        let base = [1e16, -3.0, 0.1];
        let r = [1.0, 2.5, 0.3];
        assert_eq!(reduce_replicas(&base, &[&r]).unwrap(), r.to_vec());
    }

    #[test]
    fn reduce_unchanged_replicas_keep_base() {
        let base = [0.1, 0.2, 0.7];
        assert_eq!(reduce_replicas(&base, &[&base, &base]).unwrap(), base.to_vec());
    }

    #[test]
    fn reduce_no_replicas() {
        let base = [0.1, 0.2];
        assert_eq!(reduce_replicas(&base, &[]).unwrap(), base.to_vec());
    }

    #[test]
    fn reduce_length_mismatch() {
        assert!(reduce_replicas(&[0.0, 1.0], &[&[0.0]]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::wild(2).validate(10).is_ok());
        let mut c = SolverConfig::wild(2);
        c.nodes = 2;
        assert!(c.validate(10).is_err());
        assert!(SolverConfig::syscd(2, 2).validate(32).is_ok());
        assert!(SolverConfig::syscd(2, 2).validate(24).is_err());
        let mut s = SolverConfig::sequential();
        s.threads_per_node = 2;
        assert!(s.validate(10).is_err());
        let mut s = SolverConfig::syscd(1, 1);
        s.updates_per_bucket = Some(0);
        assert!(s.validate(10).is_err());
    }

    #[test]
    fn relative_change_uses_unit_floor() {
        assert_eq!(relative_change(&[0.0, 0.0], &[0.1, 0.0]), 0.1);
        assert_eq!(relative_change(&[0.0, 0.0], &[4.0, 0.0]), 1.0);
    }
}
