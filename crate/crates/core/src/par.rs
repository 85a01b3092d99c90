//! Deterministic fork-join helpers.
//!
//! Work is split by index before any thread starts, and results are written
//! into pre-assigned slots, so the output of every helper is bit-identical
//! for any worker count.

use std::thread;

/// Applies `f` to every item across up to `threads` workers, returning the
/// results in input order.
pub fn parallel_map<T, U, F>(items: &[T], threads: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let mut out: Vec<Option<U>> = (0..items.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let f = &f;
        let mut handles = Vec::new();
        for (in_chunk, out_chunk) in items.chunks(chunk).zip(out.chunks_mut(chunk)) {
            handles.push(scope.spawn(move || {
                for (item, slot) in in_chunk.iter().zip(out_chunk.iter_mut()) {
                    *slot = Some(f(item));
                }
            }));
        }
        for handle in handles {
            handle.join().expect("worker panicked");
        }
    });
    out.into_iter().map(|slot| slot.expect("every slot is filled")).collect()
}
