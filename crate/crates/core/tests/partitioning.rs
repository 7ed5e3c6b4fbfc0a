use proptest::prelude::*;

use syscd::partitioning::{
    build_buckets, coordinate_schedule, dynamic_repartition, static_node_partition, RngStream, Sampling, StreamPurpose,
};

/// `(n, B, K, P, seed)` with at least `K * P` buckets.
fn layout_tuple() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (1usize..400, 1usize..20, 1usize..5, 1usize..6, any::<u64>())
        .prop_filter("enough buckets", |&(n, b, k, p, _)| n.div_ceil(b) >= k * p)
}

/// Every thread's bucket list for one local round.
fn thread_buckets(n: usize, b: usize, k: usize, p: usize, seed: u64, round: usize) -> Vec<Vec<usize>> {
    let layout = build_buckets(n, b).unwrap();
    let mut rng = RngStream::for_purpose(seed, StreamPurpose::NodePartition, 0, 0, 0);
    let nodes = static_node_partition(&layout, k, &mut rng).unwrap();
    let mut out = Vec::new();
    for (node, buckets) in nodes.assignment.iter().enumerate() {
        let mut rng = RngStream::for_purpose(seed, StreamPurpose::Repartition, node, 0, round);
        out.extend(dynamic_repartition(buckets, p, &mut rng).unwrap().assignment);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn threads_partition_the_buckets((n, b, k, p, seed) in layout_tuple(), round in 0usize..4) {
        let lists = thread_buckets(n, b, k, p, seed, round);
        prop_assert_eq!(lists.len(), k * p);
        let mut all: Vec<usize> = lists.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n.div_ceil(b)).collect::<Vec<_>>());
    }

    #[test]
    fn perm_epoch_touches_each_coordinate_once((n, b, k, p, seed) in layout_tuple()) {
        let layout = build_buckets(n, b).unwrap();
        let mut seen = vec![0u32; n];
        for (t, buckets) in thread_buckets(n, b, k, p, seed, 0).iter().enumerate() {
            let mut rng = RngStream::for_purpose(seed, StreamPurpose::CoordinateOrder, 0, t, 0);
            for j in coordinate_schedule(&layout, buckets, None, None, Sampling::Perm, &mut rng).unwrap() {
                seen[j] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn assignments_are_deterministic((n, b, k, p, seed) in layout_tuple(), round in 0usize..4) {
        prop_assert_eq!(thread_buckets(n, b, k, p, seed, round), thread_buckets(n, b, k, p, seed, round));
    }

    #[test]
    fn node_sizes_balanced((n, b, k, _p, seed) in layout_tuple()) {
        let layout = build_buckets(n, b).unwrap();
        let mut rng = RngStream::for_purpose(seed, StreamPurpose::NodePartition, 0, 0, 0);
        let nodes = static_node_partition(&layout, k, &mut rng).unwrap();
        let sizes: Vec<usize> = nodes.assignment.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn iid_schedule_has_requested_length((n, b, k, p, seed) in layout_tuple(), t3 in 1usize..5, t4 in 1usize..9) {
        let layout = build_buckets(n, b).unwrap();
        let buckets = &thread_buckets(n, b, k, p, seed, 0)[0];
        let mut rng = RngStream::for_purpose(seed, StreamPurpose::CoordinateOrder, 0, 0, 0);
        let s = coordinate_schedule(&layout, buckets, Some(t3), Some(t4), Sampling::Iid, &mut rng).unwrap();
        prop_assert_eq!(s.len(), t3 * t4);
        prop_assert!(s.iter().all(|&j| buckets.contains(&layout.bucket_of(j))));
    }
}
