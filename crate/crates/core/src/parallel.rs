//! Source-based work partitioning.

use std::ops::Range;

/// Splits `0..items` into `workers` contiguous shards whose sizes differ by
/// at most one; earlier shards take the remainder. Shards may be empty when
/// there are more workers than items.
pub fn schedule(workers: usize, items: usize) -> Vec<Range<usize>> {
    let w = workers.max(1);
    let base = items / w;
    let extra = items % w;
    let mut start = 0;
    (0..w)
        .map(|k| {
            let len = base + usize::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

pub(crate) fn build_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .thread_name(|i| format!("usfwi-worker-{i}"))
        .build()
        .expect("thread pool")
}
