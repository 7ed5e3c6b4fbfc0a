//! Benchmark sweeps: reference optimum, per-epoch metrics and summary CSV.
//!
//! `metrics.csv` columns:
//!
//! | column | meaning |
//! |---|---|
//! | `experiment_id` | index of the configuration within the sweep, from 0 |
//! | `algorithm` | `sequential`, `wild` or `syscd` |
//! | `threads` | total threads `K * P` |
//! | `nodes` | `K` |
//! | `bucket_size` | `B` |
//! | `epoch` | epochs completed, from 1 |
//! | `wall_seconds` | training time of this epoch, evaluation excluded |
//! | `objective` | `F(alpha)` |
//! | `suboptimality` | `F(alpha) - F*` |
//! | `rel_change` | `max_i abs(alpha_i - prev_i) / max(1, max_i abs(alpha_i))` |
//! | `converged` | `true` on the row where the tolerance was met |
//! | `reason` | `running`, `converged`, `budget` or `diverged` |
//!
//! Cells that would hold a non-finite number hold `diverged` instead.
//!
//! `summary.csv` has one row per configuration with columns
//! `experiment_id, algorithm, threads, nodes, bucket_size, epochs,
//! epochs_to_tolerance, time_per_epoch, total_time, final_objective,
//! final_suboptimality, converged, reason`. `epochs_to_tolerance` equals
//! `epochs` for converged runs and is empty otherwise.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::{generate_synthetic_dense, generate_synthetic_sparse, load_libsvm, LabeledDataset, Orientation};
use crate::error::{Error, Result};
use crate::objective::{full_objective, GlmProblem, LossKind, Regularizer, SmoothLoss};
use crate::solvers::{train, Algorithm, SolverConfig, TrainResult};

/// Largest `n` for which the ridge reference is solved by a dense
/// factorization; conjugate gradients take over above it.
pub const DENSE_SOLVE_LIMIT: usize = 2000;
/// Residual target of the iterative ridge solve and model-change target of the
/// high-accuracy logistic run.
pub const REFERENCE_TOL: f64 = 1e-12;
/// Epoch cap of the high-accuracy run.
pub const REFERENCE_MAX_EPOCHS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Libsvm {
        path: PathBuf,
        n_features: Option<usize>,
        orientation: Orientation,
    },
    SyntheticDense {
        examples: usize,
        features: usize,
        seed: u64,
    },
    SyntheticSparse {
        examples: usize,
        features: usize,
        density: f64,
        seed: u64,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<LabeledDataset> {
        match self {
            DatasetSource::Libsvm {
                path,
                n_features,
                orientation,
            } => load_libsvm(path, *n_features, *orientation),
            DatasetSource::SyntheticDense {
                examples,
                features,
                seed,
            } => generate_synthetic_dense(*examples, *features, *seed),
            DatasetSource::SyntheticSparse {
                examples,
                features,
                density,
                seed,
            } => generate_synthetic_sparse(*examples, *features, *density, *seed),
        }
    }
}

/// How `F*` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    /// Closed form for the squared loss, a high-accuracy run otherwise.
    #[default]
    Auto,
    /// Solve the ridge normal equations. Squared loss only.
    ClosedForm,
    /// Sequential SCD until the relative model change drops below
    /// [`REFERENCE_TOL`].
    HighAccuracyRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub source: DatasetSource,
    pub loss: SmoothLoss,
    pub lambda: f64,
    /// Template for every configuration; `threads_per_node` and
    /// `bucket_size` are overwritten by the sweep.
    pub solver: SolverConfig,
    /// Total thread counts `K * P` to sweep.
    pub threads: Vec<usize>,
    pub bucket_sizes: Vec<usize>,
    pub metrics_path: PathBuf,
    pub summary_path: Option<PathBuf>,
    pub reference: ReferenceMode,
}

impl ExperimentSpec {
    pub fn new(source: DatasetSource, loss: SmoothLoss, lambda: f64, solver: SolverConfig) -> Self {
        let bucket_size = solver.bucket_size;
        let threads = solver.total_threads();
        ExperimentSpec {
            source,
            loss,
            lambda,
            solver,
            threads: vec![threads],
            bucket_sizes: vec![bucket_size],
            metrics_path: PathBuf::from("metrics.csv"),
            summary_path: None,
            reference: ReferenceMode::Auto,
        }
    }

    /// The solver configuration of every sweep point, in run order.
    pub fn configurations(&self) -> Result<Vec<SolverConfig>> {
        if self.threads.is_empty() || self.bucket_sizes.is_empty() {
            return Err(Error::Config("sweep lists must be nonempty".into()));
        }
        let nodes = self.solver.nodes;
        if nodes == 0 {
            return Err(Error::Config("nodes must be at least 1".into()));
        }
        let mut out = Vec::new();
        for &bucket_size in &self.bucket_sizes {
            for &threads in &self.threads {
                if threads == 0 || threads % nodes != 0 {
                    return Err(Error::Config(format!(
                        "{threads} threads cannot be split over {nodes} nodes"
                    )));
                }
                let mut cfg = self.solver.clone();
                cfg.bucket_size = bucket_size;
                cfg.threads_per_node = threads / nodes;
                match cfg.algorithm {
                    Algorithm::Wild if nodes != 1 => {
                        return Err(Error::Config("wild solver is flat (K must be 1)".into()))
                    }
                    Algorithm::Sequential if threads != 1 => {
                        return Err(Error::Config("sequential solver runs on one thread".into()))
                    }
                    _ => {}
                }
                out.push(cfg);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOptimum {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

/// Minimizer `alpha*` and `F* = F(alpha*)`.
pub fn compute_reference_optimum(p: &GlmProblem, mode: ReferenceMode) -> Result<ReferenceOptimum> {
    let alpha = match (mode, p.loss.kind) {
        (ReferenceMode::Auto | ReferenceMode::ClosedForm, LossKind::SquaredError) => {
            if p.n_coordinates() <= DENSE_SOLVE_LIMIT {
                ridge_cholesky(p)?
            } else {
                ridge_cg(p)?
            }
        }
        (ReferenceMode::ClosedForm, LossKind::Logistic) => {
            return Err(Error::Config("no closed form for the logistic loss".into()))
        }
        (ReferenceMode::Auto | ReferenceMode::HighAccuracyRun, _) => high_accuracy_run(p)?,
    };
    let objective = full_objective(p, &alpha)?;
    Ok(ReferenceOptimum { alpha, objective })
}

fn ridge_rhs(p: &GlmProblem) -> Result<Vec<f64>> {
    p.data.matrix.transpose_matvec(p.labels())
}

fn ridge_cholesky(p: &GlmProblem) -> Result<Vec<f64>> {
    let n = p.n_coordinates();
    let lambda = p.reg.lambda();
    let mut gram = DMatrix::from_row_slice(n, n, &p.data.matrix.gram());
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::ReferenceNotReached("normal equations not positive definite".into()))?;
    let x = chol.solve(&DVector::from_vec(ridge_rhs(p)?));
    Ok(x.iter().copied().collect())
}

fn ridge_cg(p: &GlmProblem) -> Result<Vec<f64>> {
    let n = p.n_coordinates();
    let lambda = p.reg.lambda();
    let m = &p.data.matrix;
    let apply = |x: &[f64]| -> Result<Vec<f64>> {
        let mut y = m.transpose_matvec(&m.matvec(x)?)?;
        for (a, b) in y.iter_mut().zip(x) {
            *a += lambda * b;
        }
        Ok(y)
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let b = ridge_rhs(p)?;
    let target = REFERENCE_TOL * dot(&b, &b).sqrt().max(1.0);
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    for _ in 0..10 * n.max(10) {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        let ad = apply(&d)?;
        let step = rr / dot(&d, &ad);
        for i in 0..n {
            x[i] += step * d[i];
            r[i] -= step * ad[i];
        }
        let next = dot(&r, &r);
        for i in 0..n {
            d[i] = r[i] + next / rr * d[i];
        }
        rr = next;
    }
    if rr.sqrt() <= target {
        return Ok(x);
    }
    Err(Error::ReferenceNotReached(format!(
        "conjugate gradients stalled at residual {:.3e}",
        rr.sqrt()
    )))
}

fn high_accuracy_run(p: &GlmProblem) -> Result<Vec<f64>> {
    let cfg = SolverConfig {
        tolerance: REFERENCE_TOL,
        max_epochs: REFERENCE_MAX_EPOCHS,
        seed: 0,
        ..SolverConfig::sequential()
    };
    let result = train(p, &cfg)?;
    if !result.converged() {
        return Err(Error::ReferenceNotReached(format!(
            "relative change still above {REFERENCE_TOL:e} after {} epochs",
            result.epochs()
        )));
    }
    Ok(result.alpha)
}

/// One configuration of a sweep and its outcome.
#[derive(Debug, Clone)]
pub struct ConfigRun {
    pub experiment_id: usize,
    pub config: SolverConfig,
    pub result: TrainResult,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub f_star: f64,
    /// `F(0) - F*`.
    pub eps0: f64,
    pub runs: Vec<ConfigRun>,
}

impl ExperimentReport {
    pub fn all_diverged(&self) -> bool {
        !self.runs.is_empty() && self.runs.iter().all(|r| r.result.diverged())
    }
}

#[derive(Serialize)]
struct MetricsRecord<'a> {
    experiment_id: usize,
    algorithm: &'a str,
    threads: usize,
    nodes: usize,
    bucket_size: usize,
    epoch: usize,
    wall_seconds: String,
    objective: String,
    suboptimality: String,
    rel_change: String,
    converged: bool,
    reason: &'a str,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    experiment_id: usize,
    algorithm: &'a str,
    threads: usize,
    nodes: usize,
    bucket_size: usize,
    epochs: usize,
    epochs_to_tolerance: String,
    time_per_epoch: String,
    total_time: String,
    final_objective: String,
    final_suboptimality: String,
    converged: bool,
    reason: &'a str,
}

fn cell(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "diverged".to_string()
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Write the per-epoch rows of `runs`. The initial model row is omitted.
pub fn write_metrics<W: Write>(runs: &[ConfigRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        let cfg = &run.config;
        let last = run.result.metrics.len() - 1;
        for (i, m) in run.result.metrics.iter().enumerate().skip(1) {
            let status = if i == last {
                run.result.status.reason()
            } else {
                "running"
            };
            w.serialize(MetricsRecord {
                experiment_id: run.experiment_id,
                algorithm: cfg.algorithm.name(),
                threads: cfg.total_threads(),
                nodes: cfg.nodes,
                bucket_size: cfg.bucket_size,
                epoch: m.epoch,
                wall_seconds: cell(m.wall_seconds),
                objective: cell(m.objective),
                suboptimality: cell(m.suboptimality.unwrap_or(f64::NAN)),
                rel_change: cell(m.rel_change.unwrap_or(f64::NAN)),
                converged: status == "converged",
                reason: status,
            })?;
        }
    }
    if runs.iter().all(|r| r.result.metrics.len() <= 1) {
        w.write_record([
            "experiment_id",
            "algorithm",
            "threads",
            "nodes",
            "bucket_size",
            "epoch",
            "wall_seconds",
            "objective",
            "suboptimality",
            "rel_change",
            "converged",
            "reason",
        ])?;
    }
    w.flush().map_err(|e| Error::io("metrics", e))?;
    Ok(())
}

/// Write one summary row per configuration.
pub fn write_summary<W: Write>(runs: &[ConfigRun], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        let cfg = &run.config;
        let r = &run.result;
        let epochs = r.epochs();
        let total: f64 = r.metrics.iter().map(|m| m.wall_seconds).sum();
        let last = r.metrics.last().expect("initial row");
        w.serialize(SummaryRecord {
            experiment_id: run.experiment_id,
            algorithm: cfg.algorithm.name(),
            threads: cfg.total_threads(),
            nodes: cfg.nodes,
            bucket_size: cfg.bucket_size,
            epochs,
            epochs_to_tolerance: if r.converged() {
                epochs.to_string()
            } else {
                String::new()
            },
            time_per_epoch: cell(if epochs == 0 { 0.0 } else { total / epochs as f64 }),
            total_time: cell(total),
            final_objective: cell(last.objective),
            final_suboptimality: cell(last.suboptimality.unwrap_or(f64::NAN)),
            converged: r.converged(),
            reason: r.status.reason(),
        })?;
    }
    w.flush().map_err(|e| Error::io("summary", e))?;
    Ok(())
}

/// Run every configuration of the sweep and write the CSV outputs.
///
/// Dataset loading and the reference solve happen before any timing starts.
/// A diverged configuration is recorded, not raised.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let configs = spec.configurations()?;
    let data = spec.source.load()?;
    let problem = GlmProblem::new(data, spec.loss, Regularizer::l2(spec.lambda)?)?;
    let report = run_on_problem(&problem, &configs, spec.reference)?;
    write_metrics(&report.runs, create(&spec.metrics_path)?)?;
    if let Some(path) = &spec.summary_path {
        write_summary(&report.runs, create(path)?)?;
    }
    Ok(report)
}

/// Run `configs` on an already built problem.
pub fn run_on_problem(problem: &GlmProblem, configs: &[SolverConfig], mode: ReferenceMode) -> Result<ExperimentReport> {
    let reference = compute_reference_optimum(problem, mode)?;
    let f0 = full_objective(problem, &vec![0.0; problem.n_coordinates()])?;
    let mut runs = Vec::with_capacity(configs.len());
    for (experiment_id, cfg) in configs.iter().enumerate() {
        let result = train(problem, cfg)?.with_reference(reference.objective);
        runs.push(ConfigRun {
            experiment_id,
            config: cfg.clone(),
            result,
        });
    }
    Ok(ExperimentReport {
        f_star: reference.objective,
        eps0: f0 - reference.objective,
        runs,
    })
}

/// The squared loss with `lambda`, the common case in examples and tests.
pub fn ridge_problem(data: LabeledDataset, lambda: f64) -> Result<GlmProblem> {
    GlmProblem::new(data, SmoothLoss::SQUARED, Regularizer::l2(lambda)?)
}
