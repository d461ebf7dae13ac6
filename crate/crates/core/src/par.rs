//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! they run in order on the calling thread. Results are always collected in
//! input order and reductions combine fixed-size chunks left to right, so the
//! output does not depend on the number of worker threads.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used for every deterministic reduction in the crate.
pub const REDUCE_CHUNK: usize = 1024;

/// Number of chunks evaluated concurrently by [`chunked_reduce`].
pub const REDUCE_WAVE: usize = 32;

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Splits `0..n` into [`REDUCE_CHUNK`]-sized ranges, evaluates `fold` on each
/// and combines the partial results strictly in range order. Chunks are
/// evaluated in bounded waves so at most [`REDUCE_WAVE`] partials are alive.
pub fn chunked_reduce<A, F, C>(n: usize, fold: F, mut combine: C) -> Option<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
    C: FnMut(A, A) -> A,
{
    let chunks = n.div_ceil(REDUCE_CHUNK);
    let mut acc: Option<A> = None;
    let mut first = 0;
    while first < chunks {
        let last = (first + REDUCE_WAVE).min(chunks);
        let partials = map_range(last - first, |c| {
            let start = (first + c) * REDUCE_CHUNK;
            fold(start..(start + REDUCE_CHUNK).min(n))
        });
        for p in partials {
            acc = Some(match acc {
                None => p,
                Some(a) => combine(a, p),
            });
        }
        first = last;
    }
    acc
}

/// Runs `f` over disjoint mutable chunks of `data`, where each chunk holds
/// `stride` values per item. `f` receives the index of the first item.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], stride: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let len = REDUCE_CHUNK * stride.max(1);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(len)
            .enumerate()
            .for_each(|(i, chunk)| f(i * REDUCE_CHUNK, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(len)
            .enumerate()
            .for_each(|(i, chunk)| f(i * REDUCE_CHUNK, chunk));
    }
}

/// Like [`for_each_chunk_mut`] over two slices holding `stride_a` and
/// `stride_b` values per item respectively.
pub fn for_each_chunk_pair_mut<A, B, F>(a: &mut [A], stride_a: usize, b: &mut [B], stride_b: usize, f: F)
where
    A: Send,
    B: Send,
    F: Fn(usize, &mut [A], &mut [B]) + Sync + Send,
{
    let la = REDUCE_CHUNK * stride_a.max(1);
    let lb = REDUCE_CHUNK * stride_b.max(1);
    #[cfg(feature = "parallel")]
    {
        a.par_chunks_mut(la)
            .zip(b.par_chunks_mut(lb))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i * REDUCE_CHUNK, ca, cb));
    }
    #[cfg(not(feature = "parallel"))]
    {
        a.chunks_mut(la)
            .zip(b.chunks_mut(lb))
            .enumerate()
            .for_each(|(i, (ca, cb))| f(i * REDUCE_CHUNK, ca, cb));
    }
}

/// Runs two closures, potentially concurrently.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_matches_sequential_sum() {
        let data: Vec<f64> = (0..5000).map(|i| (i as f64).sin()).collect();
        let got = chunked_reduce(
            data.len(),
            |r| data[r].iter().sum::<f64>(),
            |a, b| a + b,
        )
        .unwrap();
        let mut expect = 0.0;
        for chunk in data.chunks(REDUCE_CHUNK) {
            expect += chunk.iter().sum::<f64>();
        }
        assert_eq!(got.to_bits(), expect.to_bits());
    }

    #[test]
    fn empty_reduce_is_none() {
        assert!(chunked_reduce(0, |_| 1, |a, b| a + b).is_none());
    }

    #[test]
    fn chunk_mut_covers_every_item() {
        let mut v = vec![0usize; 3 * 2500];
        for_each_chunk_mut(&mut v, 3, |first, chunk| {
            for (j, item) in chunk.chunks_mut(3).enumerate() {
                item.fill(first + j);
            }
        });
        for (i, item) in v.chunks(3).enumerate() {
            assert!(item.iter().all(|&x| x == i));
        }
    }
}
