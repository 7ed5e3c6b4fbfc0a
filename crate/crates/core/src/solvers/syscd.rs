//! SySCD: hierarchical replicas of the shared vector.
//!
//! ```text
//! for each global round:
//!     g = grad f(v)
//!     par for node k:
//!         v_k = v
//!         repeat T2 times:
//!             re-deal the node's buckets to its P threads
//!             par for thread p:
//!                 v_p = v_k
//!                 T3 buckets x T4 surrogate coordinate steps
//!             v_k = v_k + sum_p (v_p - v_k)
//!     v = v + sum_k (v_k - v)
//! ```
//!
//! Each thread owns the model entries of its buckets for the round, so no
//! entry of `alpha` ever has two writers. Both reductions run in ascending
//! replica index, which makes a run a pure function of its configuration.

use std::collections::HashSet;
use std::time::Instant;

use rayon::prelude::*;

use super::{check_consistency, reduce_into, Algorithm, Flow, Monitor, Repartition, SolverConfig, TrainResult};
use crate::error::{Error, Result};
use crate::objective::{l2_quadratic_step, GlmProblem};
use crate::partitioning::{
    build_buckets, dynamic_repartition, static_node_partition, visit_coordinates, BucketLayout, RngStream,
    StreamPurpose,
};

struct Worker {
    /// `v_p`, in the problem's shared representation.
    replica: Vec<f64>,
    /// Gradient of the thread surrogate at `v_p`.
    lin: Vec<f64>,
    scratch: Vec<usize>,
    /// Coordinates written this local round (verify mode only).
    written: Vec<usize>,
}

struct Node {
    id: usize,
    buckets: Vec<usize>,
    /// `v_k`.
    replica: Vec<f64>,
    /// `grad f(v) + K gamma (v_k - v)` at the start of the local round.
    lin: Vec<f64>,
    workers: Vec<Worker>,
}

struct Round<'a> {
    problem: &'a GlmProblem,
    cfg: &'a SolverConfig,
    layout: &'a BucketLayout,
    global: &'a [f64],
    grad: &'a [f64],
    index: usize,
    scale_a: f64,
    shift_scale: f64,
}

type Chunk<'a> = (usize, &'a mut [f64]);

/// Run the SySCD solver.
pub fn run_syscd(p: &GlmProblem, cfg: &SolverConfig) -> Result<TrainResult> {
    if cfg.algorithm != Algorithm::Syscd {
        return Err(Error::Config("run_syscd needs algorithm = syscd".into()));
    }
    let n = p.n_coordinates();
    let d = p.n_rows();
    cfg.validate(n)?;
    let layout = build_buckets(n, cfg.bucket_size)?;
    let mut part_rng = RngStream::for_purpose(cfg.seed, StreamPurpose::NodePartition, 0, 0, 0);
    let partition = static_node_partition(&layout, cfg.nodes, &mut part_rng)?;

    let gamma = p.loss.gamma();
    let scale_a = gamma * (cfg.threads_per_node * cfg.nodes) as f64;
    let shift_scale = gamma * cfg.nodes as f64;

    let mut nodes: Vec<Node> = partition
        .assignment
        .into_iter()
        .enumerate()
        .map(|(id, buckets)| Node {
            id,
            buckets,
            replica: vec![0.0; d],
            lin: vec![0.0; d],
            workers: (0..cfg.threads_per_node)
                .map(|_| Worker {
                    replica: vec![0.0; d],
                    lin: vec![0.0; d],
                    scratch: Vec::new(),
                    written: Vec::new(),
                })
                .collect(),
        })
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.total_threads())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut alpha = vec![0.0; n];
    let mut global = p.initial_shared();
    let mut grad = vec![0.0; d];
    let mut monitor = Monitor::new(p, cfg)?;
    let mut round = 0usize;

    while monitor.budget_left() && cfg.global_rounds.is_none_or(|t1| round < t1) {
        let start = Instant::now();
        p.gradient_from_shared(&global, &mut grad);

        let mut slots: Vec<Option<&mut [f64]>> = alpha.chunks_mut(layout.bucket_size()).map(Some).collect();
        let mut jobs: Vec<(&mut Node, Vec<Chunk<'_>>)> = nodes
            .iter_mut()
            .map(|node| {
                let chunks = node
                    .buckets
                    .iter()
                    .map(|&b| (b, slots[b].take().expect("bucket owned by one node")))
                    .collect();
                (node, chunks)
            })
            .collect();

        let ctx = Round {
            problem: p,
            cfg,
            layout: &layout,
            global: &global,
            grad: &grad,
            index: round,
            scale_a,
            shift_scale,
        };
        let updates: usize = pool
            .install(|| {
                jobs.par_iter_mut()
                    .map(|(node, chunks)| node_round(&ctx, node, chunks))
                    .collect::<Result<Vec<usize>>>()
            })?
            .into_iter()
            .sum();
        drop(jobs);

        let replicas: Vec<&[f64]> = nodes.iter().map(|k| k.replica.as_slice()).collect();
        reduce_into(&mut global, &replicas);
        let elapsed = start.elapsed();
        round += 1;

        if cfg.verify {
            check_consistency(p, &alpha, &global)?;
        }
        if let Flow::Stop = monitor.record(&alpha, updates, elapsed)? {
            break;
        }
    }
    Ok(monitor.finish(alpha))
}

fn node_round<'a>(ctx: &Round<'_>, node: &mut Node, chunks: &mut Vec<Chunk<'a>>) -> Result<usize> {
    let cfg = ctx.cfg;
    let Node {
        id,
        buckets,
        replica,
        lin,
        workers,
    } = node;
    replica.copy_from_slice(ctx.global);
    let mut updates = 0;

    for t2 in 0..cfg.local_rounds {
        let local_round = ctx.index * cfg.local_rounds + t2;
        let assignment_round = match cfg.repartition {
            Repartition::Dynamic => local_round,
            Repartition::Static => 0,
        };
        let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Repartition, *id, 0, assignment_round);
        let assignment = dynamic_repartition(buckets, cfg.threads_per_node, &mut rng)?;

        if t2 == 0 {
            // v_k == v, the shift vanishes
            lin.copy_from_slice(ctx.grad);
        } else {
            for (((l, &g), &vk), &v) in lin.iter_mut().zip(ctx.grad).zip(replica.iter()).zip(ctx.global) {
                *l = g + ctx.shift_scale * (vk - v);
            }
        }

        // hand each thread the model entries of its buckets
        let mut by_bucket: Vec<Option<Chunk<'a>>> = Vec::new();
        let mut position = std::collections::HashMap::with_capacity(chunks.len());
        for (i, chunk) in chunks.drain(..).enumerate() {
            position.insert(chunk.0, i);
            by_bucket.push(Some(chunk));
        }
        let mut per_thread: Vec<Vec<Chunk<'a>>> = assignment
            .assignment
            .iter()
            .map(|list| {
                list.iter()
                    .map(|b| by_bucket[position[b]].take().expect("bucket dealt once"))
                    .collect()
            })
            .collect();

        let (node_replica, node_lin) = (&*replica, &*lin);
        let counts = workers
            .par_iter_mut()
            .zip(per_thread.par_iter_mut())
            .enumerate()
            .map(|(thread, (worker, owned))| {
                worker_round(ctx, *id, thread, local_round, node_replica, node_lin, worker, owned)
            })
            .collect::<Result<Vec<usize>>>()?;
        updates += counts.iter().sum::<usize>();

        if cfg.verify {
            write_census(workers, &per_thread, ctx.layout)?;
        }
        for owned in per_thread {
            chunks.extend(owned);
        }
        let thread_replicas: Vec<&[f64]> = workers.iter().map(|w| w.replica.as_slice()).collect();
        reduce_into(replica, &thread_replicas);
    }
    Ok(updates)
}

#[allow(clippy::too_many_arguments)]
fn worker_round(
    ctx: &Round<'_>,
    node: usize,
    thread: usize,
    local_round: usize,
    node_replica: &[f64],
    node_lin: &[f64],
    worker: &mut Worker,
    owned: &mut [Chunk<'_>],
) -> Result<usize> {
    let p = ctx.problem;
    let cfg = ctx.cfg;
    let lambda = p.reg.lambda();
    let bucket_size = ctx.layout.bucket_size();
    worker.replica.copy_from_slice(node_replica);
    worker.lin.copy_from_slice(node_lin);
    worker.written.clear();
    let bucket_ids: Vec<usize> = owned.iter().map(|c| c.0).collect();
    let Worker {
        replica,
        lin,
        scratch,
        written,
    } = worker;
    let mut rng = RngStream::for_purpose(cfg.seed, StreamPurpose::CoordinateOrder, node, thread, local_round);
    let mut slot_of = std::collections::HashMap::with_capacity(bucket_ids.len());
    for (i, &b) in bucket_ids.iter().enumerate() {
        slot_of.insert(b, i);
    }
    let mut last: Option<(usize, usize)> = None;
    visit_coordinates(
        ctx.layout,
        &bucket_ids,
        cfg.buckets_per_thread,
        cfg.updates_per_bucket,
        cfg.sampling,
        &mut rng,
        scratch,
        |j| {
            let bucket = j / bucket_size;
            let slot = match last {
                Some((b, s)) if b == bucket => s,
                _ => {
                    let s = slot_of[&bucket];
                    last = Some((bucket, s));
                    s
                }
            };
            let entry = &mut owned[slot].1[j - bucket * bucket_size];
            let col = p.column(j);
            let delta = l2_quadratic_step(col.dot(lin), ctx.scale_a * p.stats.column_sq_norms[j], lambda, *entry)?;
            *entry += delta;
            col.axpy(ctx.scale_a * delta, lin);
            col.axpy(delta, replica);
            if cfg.verify {
                written.push(j);
            }
            Ok(())
        },
    )
}

/// Every coordinate written in a local round belongs to exactly one thread.
fn write_census(workers: &[Worker], owned: &[Vec<Chunk<'_>>], layout: &BucketLayout) -> Result<()> {
    let mut owner = std::collections::HashMap::new();
    for (t, (w, chunks)) in workers.iter().zip(owned).enumerate() {
        let mine: HashSet<usize> = chunks.iter().map(|c| c.0).collect();
        for &j in &w.written {
            if !mine.contains(&layout.bucket_of(j)) {
                return Err(Error::Invariant(format!(
                    "thread {t} wrote coordinate {j} it does not own"
                )));
            }
            if let Some(&other) = owner.get(&j) {
                if other != t {
                    return Err(Error::Invariant(format!(
                        "coordinate {j} written by threads {other} and {t}"
                    )));
                }
            }
            owner.insert(j, t);
        }
    }
    Ok(())
}
