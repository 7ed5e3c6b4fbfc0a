//! Buckets of consecutive coordinates and their assignment to node groups and
//! threads.
//!
//! Coordinates are grouped into buckets of `B` consecutive indices so that a
//! thread touching a bucket reads one cache line of the model vector. Buckets
//! are dealt to the `K` node groups once per run ([`static_node_partition`]) and
//! re-dealt to the `P` threads of a node at the start of every local round
//! ([`dynamic_repartition`]).
//!
//! All randomness comes from [`RngStream`]s keyed by `(seed, purpose, node,
//! thread, round)`, so every assignment is a pure function of the run seed and
//! does not depend on thread scheduling.

use std::ops::Range;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Cache line size assumed when no value is configured.
pub const DEFAULT_CACHE_LINE_BYTES: usize = 64;

/// Bucket size that fills one cache line with 8-byte model entries.
pub fn bucket_size_for_cache_line(cache_line_bytes: usize) -> usize {
    (cache_line_bytes / std::mem::size_of::<f64>()).max(1)
}

/// Default bucket size, `64 / 8 = 8`.
pub const DEFAULT_BUCKET_SIZE: usize = DEFAULT_CACHE_LINE_BYTES / 8;

/// What a random stream is used for. Part of the stream key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamPurpose {
    NodePartition = 1,
    Repartition = 2,
    CoordinateOrder = 3,
    Data = 4,
    BucketPick = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamId {
    pub purpose: StreamPurpose,
    pub node: u64,
    pub thread: u64,
    pub round: u64,
}

impl StreamId {
    pub fn new(purpose: StreamPurpose, node: usize, thread: usize, round: usize) -> Self {
        StreamId {
            purpose,
            node: node as u64,
            thread: thread as u64,
            round: round as u64,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A ChaCha8 generator whose key is derived from a run seed and a [`StreamId`].
///
/// Identical `(seed, id)` pairs give identical sequences; distinct ids give
/// independent keys.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: StreamId) -> Self {
        let mut state = seed;
        let mut key_material = 0u64;
        for word in [id.purpose as u64, id.node, id.thread, id.round] {
            key_material ^= splitmix64(&mut state) ^ word;
            state = state.wrapping_add(key_material.rotate_left(17));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        RngStream {
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn for_purpose(seed: u64, purpose: StreamPurpose, node: usize, thread: usize, round: usize) -> Self {
        Self::new(seed, StreamId::new(purpose, node, thread, round))
    }

    /// Uniform index in `0..bound`. `bound` must be nonzero.
    #[inline]
    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.gen_range(0..bound)
    }

    /// In-place Fisher-Yates shuffle, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Bucket `b` covers coordinates `[b * B, min((b + 1) * B, n))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BucketLayout {
    n: usize,
    bucket_size: usize,
    n_buckets: usize,
}

impl BucketLayout {
    pub fn n_coordinates(&self) -> usize {
        self.n
    }

    pub fn bucket_size(&self) -> usize {
        self.bucket_size
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    #[inline]
    pub fn bucket_of(&self, j: usize) -> usize {
        j / self.bucket_size
    }

    #[inline]
    pub fn range_of(&self, b: usize) -> Range<usize> {
        let start = b * self.bucket_size;
        start..(start + self.bucket_size).min(self.n)
    }
}

pub fn build_buckets(n: usize, bucket_size: usize) -> Result<BucketLayout> {
    if bucket_size == 0 {
        return Err(Error::InvalidArgument("bucket size must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("cannot bucket zero coordinates".into()));
    }
    Ok(BucketLayout {
        n,
        bucket_size,
        n_buckets: n.div_ceil(bucket_size),
    })
}

/// Buckets owned by each node group for the whole run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    pub assignment: Vec<Vec<usize>>,
}

impl NodePartition {
    pub fn n_nodes(&self) -> usize {
        self.assignment.len()
    }
}

/// Buckets handed to each thread of one node for one local round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadAssignment {
    pub assignment: Vec<Vec<usize>>,
}

impl ThreadAssignment {
    pub fn n_threads(&self) -> usize {
        self.assignment.len()
    }
}

fn deal_round_robin(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(items.len().div_ceil(parts)); parts];
    for (i, &item) in items.iter().enumerate() {
        out[i % parts].push(item);
    }
    out
}

/// Shuffle all buckets once and deal them round-robin to `k` nodes.
pub fn static_node_partition(layout: &BucketLayout, k: usize, rng: &mut RngStream) -> Result<NodePartition> {
    if k == 0 {
        return Err(Error::InvalidArgument("node count must be at least 1".into()));
    }
    if k > layout.n_buckets() {
        return Err(Error::InvalidArgument(format!(
            "{k} nodes but only {} buckets; a node would be empty",
            layout.n_buckets()
        )));
    }
    let mut buckets: Vec<usize> = (0..layout.n_buckets()).collect();
    rng.shuffle(&mut buckets);
    Ok(NodePartition {
        assignment: deal_round_robin(&buckets, k),
    })
}

/// Fresh shuffle of a node's buckets dealt round-robin to `p` threads.
pub fn dynamic_repartition(node_buckets: &[usize], p: usize, rng: &mut RngStream) -> Result<ThreadAssignment> {
    if p == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    if node_buckets.is_empty() {
        return Err(Error::InvalidArgument("node has no buckets".into()));
    }
    if p > node_buckets.len() {
        return Err(Error::InvalidArgument(format!(
            "{p} threads but only {} buckets on the node",
            node_buckets.len()
        )));
    }
    let mut buckets = node_buckets.to_vec();
    rng.shuffle(&mut buckets);
    Ok(ThreadAssignment {
        assignment: deal_round_robin(&buckets, p),
    })
}

/// Uniform random order of the coordinates in `range`.
pub fn permute_within_bucket(range: Range<usize>, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(range.len());
    permute_into(range, rng, &mut out);
    out
}

pub(crate) fn permute_into(range: Range<usize>, rng: &mut RngStream, out: &mut Vec<usize>) {
    out.clear();
    out.extend(range);
    rng.shuffle(out);
}

/// How coordinates are drawn inside a thread's local round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    /// Buckets in shuffled order, coordinates in a random permutation per
    /// bucket visit. One pass touches every owned coordinate exactly once.
    #[default]
    Perm,
    /// Buckets and coordinates drawn uniformly with replacement.
    Iid,
}

/// The coordinates one thread updates in one local round, in order.
pub fn coordinate_schedule(
    layout: &BucketLayout,
    buckets: &[usize],
    buckets_per_thread: Option<usize>,
    updates_per_bucket: Option<usize>,
    sampling: Sampling,
    rng: &mut RngStream,
) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    let mut scratch = Vec::new();
    visit_coordinates(
        layout,
        buckets,
        buckets_per_thread,
        updates_per_bucket,
        sampling,
        rng,
        &mut scratch,
        |j| {
            out.push(j);
            Ok(())
        },
    )?;
    Ok(out)
}

/// Drive `visit` over the coordinate schedule of one thread for one local
/// round and return the number of updates.
///
/// `buckets_per_thread` (T3) and `updates_per_bucket` (T4) default to one pass
/// over the thread's buckets and one pass over each bucket's coordinates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn visit_coordinates<F>(
    layout: &BucketLayout,
    buckets: &[usize],
    buckets_per_thread: Option<usize>,
    updates_per_bucket: Option<usize>,
    sampling: Sampling,
    rng: &mut RngStream,
    scratch: &mut Vec<usize>,
    mut visit: F,
) -> Result<usize>
where
    F: FnMut(usize) -> Result<()>,
{
    if buckets.is_empty() {
        return Ok(0);
    }
    let visits = buckets_per_thread.unwrap_or(buckets.len());
    let mut updates = 0;
    for t in 0..visits {
        let bucket = match sampling {
            Sampling::Perm => buckets[t % buckets.len()],
            Sampling::Iid => buckets[rng.below(buckets.len())],
        };
        let range = layout.range_of(bucket);
        let len = range.len();
        let count = updates_per_bucket.unwrap_or(len);
        match sampling {
            Sampling::Perm => {
                for u in 0..count {
                    if u % len == 0 {
                        permute_into(range.clone(), rng, scratch);
                    }
                    visit(scratch[u % len])?;
                }
            }
            Sampling::Iid => {
                for _ in 0..count {
                    visit(range.start + rng.below(len))?;
                }
            }
        }
        updates += count;
    }
    Ok(updates)
}
