use std::time::Instant;

use super::{check_consistency, Algorithm, Flow, Monitor, Repartition, SolverConfig, TrainResult};
use crate::error::{Error, Result};
use crate::objective::GlmProblem;
use crate::partitioning::{
    build_buckets, dynamic_repartition, static_node_partition, visit_coordinates, RngStream, StreamPurpose,
};

/// Single-threaded stochastic coordinate descent with exact coordinate steps.
///
/// Each epoch visits the buckets in a fresh random order and the coordinates
/// of each bucket in a random order. Random streams are the ones a SySCD run
/// with `K = P = 1` would use, so both produce the same coordinate sequence.
pub fn run_sequential_scd(p: &GlmProblem, cfg: &SolverConfig) -> Result<TrainResult> {
    if cfg.algorithm != Algorithm::Sequential {
        return Err(Error::Config("run_sequential_scd needs algorithm = sequential".into()));
    }
    let n = p.n_coordinates();
    cfg.validate(n)?;
    let layout = build_buckets(n, cfg.bucket_size)?;
    let mut part_rng = RngStream::for_purpose(cfg.seed, StreamPurpose::NodePartition, 0, 0, 0);
    let nodes = static_node_partition(&layout, 1, &mut part_rng)?;

    let mut alpha = vec![0.0; n];
    let mut shared = p.initial_shared();
    let mut monitor = Monitor::new(p, cfg)?;
    let mut scratch = Vec::new();
    let mut round = 0usize;

    while monitor.budget_left() && cfg.global_rounds.is_none_or(|t1| round < t1) {
        let start = Instant::now();
        let mut updates = 0;
        for t2 in 0..cfg.local_rounds {
            let local_round = round * cfg.local_rounds + t2;
            let assignment_round = match cfg.repartition {
                Repartition::Dynamic => local_round,
                Repartition::Static => 0,
            };
            let mut rep_rng = RngStream::for_purpose(cfg.seed, StreamPurpose::Repartition, 0, 0, assignment_round);
            let assignment = dynamic_repartition(&nodes.assignment[0], 1, &mut rep_rng)?;
            let mut coord_rng = RngStream::for_purpose(cfg.seed, StreamPurpose::CoordinateOrder, 0, 0, local_round);
            updates += visit_coordinates(
                &layout,
                &assignment.assignment[0],
                cfg.buckets_per_thread,
                cfg.updates_per_bucket,
                cfg.sampling,
                &mut coord_rng,
                &mut scratch,
                |j| {
                    let delta = p.exact_step_shared(j, alpha[j], &shared)?;
                    alpha[j] += delta;
                    p.column(j).axpy(delta, &mut shared);
                    Ok(())
                },
            )?;
        }
        let elapsed = start.elapsed();
        round += 1;
        if cfg.verify {
            check_consistency(p, &alpha, &shared)?;
        }
        if let Flow::Stop = monitor.record(&alpha, updates, elapsed)? {
            break;
        }
    }
    Ok(monitor.finish(alpha))
}
