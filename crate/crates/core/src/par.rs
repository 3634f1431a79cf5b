//! Data-parallel helpers. With the `std` feature they run on rayon; without it
//! they degrade to plain loops. Results are always returned in index order so
//! reductions built on top stay bit-reproducible regardless of thread count.

use alloc::vec::Vec;

#[cfg(feature = "std")]
pub(crate) fn for_each_chunk_mut<T: Send>(data: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    use rayon::prelude::*;
    if chunk == 0 {
        return;
    }
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "std"))]
pub(crate) fn for_each_chunk_mut<T: Send>(data: &mut [T], chunk: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if chunk == 0 {
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(feature = "std")]
pub(crate) fn map<R: Send>(range: core::ops::Range<usize>, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    range.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn map<R: Send>(range: core::ops::Range<usize>, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
    range.map(f).collect()
}

/// Number of independent partial results reduced at a time.
pub(crate) const REDUCE_GROUP: usize = 8;
