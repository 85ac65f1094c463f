//! Block-parallel map with bit-stable reduction.
//!
//! Work over `0..n` is split into fixed-size blocks whose boundaries depend
//! only on `n`, never on the thread count. Threads claim whole blocks, block
//! results are kept per block, and the caller merges them in block order, so
//! floating-point accumulations come out bit-identical for any `threads`.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub const DEFAULT_BLOCK: usize = 1024;

/// Applies `f` to each block of `0..n` and returns the block results in
/// block order. `f` must be a pure function of the block range.
pub fn map_blocks<T, F>(n: usize, block: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync,
{
    assert!(block > 0, "block size must be positive");
    let n_blocks = n.div_ceil(block);
    let threads = threads.max(1).min(n_blocks.max(1));
    let block_range = |b: usize| b * block..((b + 1) * block).min(n);

    if threads <= 1 || n_blocks <= 1 {
        return (0..n_blocks).map(|b| f(block_range(b))).collect();
    }

    let slots: Vec<Mutex<Option<T>>> = (0..n_blocks).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let f = &f;
    let slots_ref = &slots;

    std::thread::scope(|scope| {
        for _ in 0..threads {
            let next = &next;
            scope.spawn(move || loop {
                let b = next.fetch_add(1, Ordering::Relaxed);
                if b >= n_blocks {
                    break;
                }
                let out = f(block_range(b));
                *slots_ref[b].lock().unwrap() = Some(out);
            });
        }
    });

    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap().expect("block computed"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_are_identical_across_thread_counts() {
        let n = 10_000;
        let run = |threads| {
            let parts = map_blocks(n, 64, threads, |range| {
                range.map(|i| ((i as f64) * 0.1).sin()).sum::<f64>()
            });
            // Sequential merge in block order.
            parts.into_iter().fold(0.0_f64, |acc, p| acc + p)
        };
        let s1 = run(1);
        for t in [2, 3, 8] {
            assert_eq!(s1.to_bits(), run(t).to_bits(), "threads={t}");
        }
    }

    #[test]
    fn covers_every_index_exactly_once() {
        let parts = map_blocks(100, 7, 4, |range| range.collect::<Vec<_>>());
        let flat: Vec<usize> = parts.into_iter().flatten().collect();
        assert_eq!(flat, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn empty_input_yields_no_blocks() {
        let parts = map_blocks(0, 8, 4, |_range| 1_u32);
        assert!(parts.is_empty());
    }
}
