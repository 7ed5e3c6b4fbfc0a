use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Barrier;
use std::time::Instant;

use super::{check_consistency, Algorithm, Flow, Monitor, SolverConfig, TrainResult, WildSchedule};
use crate::dataset::{dense_dot, gathered_dot, Column};
use crate::error::{Error, Result};
use crate::objective::{l2_quadratic_step, GlmProblem, LossKind};
use crate::partitioning::{permute_within_bucket, RngStream, StreamPurpose};

/// `f64` slots updated with indivisible read-modify-write operations.
struct AtomicF64Vec(Vec<AtomicU64>);

impl AtomicF64Vec {
    fn from_slice(v: &[f64]) -> Self {
        AtomicF64Vec(v.iter().map(|x| AtomicU64::new(x.to_bits())).collect())
    }

    #[inline]
    fn load(&self, i: usize) -> f64 {
        f64::from_bits(self.0[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn store(&self, i: usize, x: f64) {
        self.0[i].store(x.to_bits(), Ordering::Relaxed)
    }

    #[inline]
    fn add(&self, i: usize, x: f64) {
        let _ = self.0[i].fetch_update(Ordering::Relaxed, Ordering::Relaxed, |bits| {
            Some((f64::from_bits(bits) + x).to_bits())
        });
    }

    fn snapshot(&self) -> Vec<f64> {
        (0..self.0.len()).map(|i| self.load(i)).collect()
    }
}

struct Shared<'a> {
    problem: &'a GlmProblem,
    alpha: AtomicF64Vec,
    vector: AtomicF64Vec,
}

impl Shared<'_> {
    /// Read `alpha_j` and the shared vector on the support of `x_j`, then
    /// solve the coordinate problem against that snapshot.
    fn compute(&self, j: usize, buf: &mut Vec<f64>) -> Result<(f64, f64)> {
        let p = self.problem;
        let alpha_j = self.alpha.load(j);
        let col = p.column(j);
        buf.clear();
        match col {
            Column::Dense(x) => buf.extend((0..x.len()).map(|i| self.vector.load(i))),
            Column::Sparse { rows, .. } => buf.extend(rows.iter().map(|&i| self.vector.load(i as usize))),
        }
        let delta = match p.loss.kind {
            LossKind::SquaredError => {
                let lin = match col {
                    Column::Dense(x) => dense_dot(x, buf),
                    Column::Sparse { values, .. } => gathered_dot(values, buf),
                };
                l2_quadratic_step(lin, p.stats.column_sq_norms[j], p.reg.lambda(), alpha_j)?
            }
            LossKind::Logistic => {
                let y = p.labels();
                let buf = &*buf;
                match col {
                    Column::Dense(x) => p.logistic_newton(alpha_j, col.l1_norm(), || {
                        x.iter().zip(buf).zip(y).map(|((&a, &v), &l)| (a, v, l))
                    })?,
                    Column::Sparse { rows, values } => p.logistic_newton(alpha_j, col.l1_norm(), || {
                        values
                            .iter()
                            .zip(buf)
                            .zip(rows)
                            .map(|((&a, &v), &i)| (a, v, y[i as usize]))
                    })?,
                }
            }
        };
        Ok((alpha_j, delta))
    }

    fn write(&self, j: usize, alpha_j: f64, delta: f64) {
        self.alpha.store(j, alpha_j + delta);
        for (i, a) in self.problem.column(j).iter() {
            self.vector.add(i, delta * a);
        }
    }
}

/// Asynchronous parallel SCD: every epoch, one random permutation of all
/// coordinates is split into `P` contiguous chunks, and each thread applies
/// exact coordinate steps against the shared vector without locking.
///
/// Reads of the shared vector may be stale; additions to each component are
/// indivisible. A run whose objective blows up is stopped and reported as
/// [`RunStatus::Diverged`](super::RunStatus::Diverged).
pub fn run_wild_parallel_scd(p: &GlmProblem, cfg: &SolverConfig) -> Result<TrainResult> {
    if cfg.algorithm != Algorithm::Wild {
        return Err(Error::Config("run_wild_parallel_scd needs algorithm = wild".into()));
    }
    let n = p.n_coordinates();
    cfg.validate(n)?;
    let threads = cfg.threads_per_node;
    let shared = Shared {
        problem: p,
        alpha: AtomicF64Vec::from_slice(&vec![0.0; n]),
        vector: AtomicF64Vec::from_slice(&p.initial_shared()),
    };
    let mut monitor = Monitor::new(p, cfg)?;
    let mut epoch = 0usize;

    while monitor.budget_left() && cfg.global_rounds.is_none_or(|t1| epoch < t1) {
        let start = Instant::now();
        let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::CoordinateOrder, 0, 0, epoch);
        let order = permute_within_bucket(0..n, &mut rng);
        let chunks: Vec<&[usize]> = (0..threads)
            .map(|t| &order[t * n / threads..(t + 1) * n / threads])
            .collect();
        let abort = AtomicBool::new(false);
        let barrier = Barrier::new(threads);
        let longest = chunks.iter().map(|c| c.len()).max().unwrap_or(0);

        std::thread::scope(|scope| {
            for chunk in &chunks {
                let (shared, abort, barrier) = (&shared, &abort, &barrier);
                scope.spawn(move || {
                    let mut buf = Vec::new();
                    match cfg.wild_schedule {
                        WildSchedule::Free => {
                            for &j in chunk.iter() {
                                if abort.load(Ordering::Relaxed) {
                                    break;
                                }
                                match shared.compute(j, &mut buf) {
                                    Ok((a, d)) => shared.write(j, a, d),
                                    Err(_) => abort.store(true, Ordering::Relaxed),
                                }
                            }
                        }
                        WildSchedule::Lockstep => {
                            for t in 0..longest {
                                let step = chunk.get(t).map(|&j| (j, shared.compute(j, &mut buf)));
                                if let Some((_, Err(_))) = step {
                                    abort.store(true, Ordering::Relaxed);
                                }
                                barrier.wait();
                                if let Some((j, Ok((a, d)))) = step {
                                    shared.write(j, a, d);
                                }
                                barrier.wait();
                                if abort.load(Ordering::Relaxed) {
                                    break;
                                }
                            }
                        }
                    }
                });
            }
        });
        let elapsed = start.elapsed();
        epoch += 1;
        let alpha = shared.alpha.snapshot();
        if abort.load(Ordering::Relaxed) {
            // a coordinate step went non-finite: the run has blown up
            monitor.record(&alpha, n, elapsed)?;
            monitor.mark_diverged();
            break;
        }
        if cfg.verify {
            check_consistency(p, &alpha, &shared.vector.snapshot())?;
        }
        if let Flow::Stop = monitor.record(&alpha, n, elapsed)? {
            break;
        }
    }
    let alpha = shared.alpha.snapshot();
    Ok(monitor.finish(alpha))
}
