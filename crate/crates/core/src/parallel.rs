//! Deterministic fan-out over contiguous shards.

use std::ops::Range;

/// Worker count from `KPLANES_THREADS` (0 or unset = available cores).
pub fn worker_count() -> usize {
    let requested = std::env::var("KPLANES_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

/// Splits `0..n` into at most `shards` contiguous ranges of near-equal size.
pub fn shard_ranges(n: usize, shards: usize) -> Vec<Range<usize>> {
    let shards = shards.clamp(1, n.max(1));
    let base = n / shards;
    let extra = n % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for s in 0..shards {
        let len = base + usize::from(s < extra);
        out.push(start..start + len);
        start += len;
    }
    out
}

/// Runs `f` on each shard and returns results in shard order.
pub fn map_shards<T, F>(n: usize, shards: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    let ranges = shard_ranges(n, shards);
    if ranges.len() == 1 {
        return ranges.into_iter().map(&f).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| {
                let f = &f;
                scope.spawn(move || f(r))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shards_cover_range_in_order() {
        let r = shard_ranges(10, 3);
        assert_eq!(r, vec![0..4, 4..7, 7..10]);
        assert_eq!(shard_ranges(2, 8).len(), 2);
        assert_eq!(shard_ranges(0, 4), vec![0..0]);
    }

    #[test]
    fn results_keep_shard_order() {
        let sums = map_shards(100, 4, |r| r.sum::<usize>());
        assert_eq!(sums.iter().sum::<usize>(), 4950);
        assert_eq!(sums[0], (0..25).sum::<usize>());
    }
}
