//! Data-parallel helpers with a sequential fallback.
//!
//! Every helper preserves input order in its output, so results are identical
//! whichever execution mode is chosen. With the `parallel` feature disabled,
//! [`Parallelism::Rayon`] silently degrades to sequential execution.

/// Execution mode for the batch loops (scoring, pseudo-labelling, k-means
/// assignment, evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    #[default]
    Rayon,
}

impl Parallelism {
    /// Whether work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

/// Order-preserving map over `0..len`.
pub fn map_range<T, F>(mode: Parallelism, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..len).map(f).collect()
}

/// Order-preserving map over a slice.
pub fn map_slice<S, T, F>(mode: Parallelism, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Applies `f` to fixed-size chunks of `out` in place, passing each chunk's
/// starting row.
pub fn for_each_chunk_mut<T, F>(mode: Parallelism, out: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i * chunk, c));
        return;
    }
    let _ = mode;
    for (i, c) in out.chunks_mut(chunk).enumerate() {
        f(i * chunk, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_range(Parallelism::Sequential, 1000, |i| i * i);
        let par = map_range(Parallelism::Rayon, 1000, |i| i * i);
        assert_eq!(seq, par);

        let items: Vec<u32> = (0..257).collect();
        let a = map_slice(Parallelism::Sequential, &items, |x| x + 1);
        let b = map_slice(Parallelism::Rayon, &items, |x| x + 1);
        assert_eq!(a, b);

        let mut x = vec![0usize; 103];
        let mut y = vec![0usize; 103];
        for_each_chunk_mut(Parallelism::Sequential, &mut x, 10, |start, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = start + j;
            }
        });
        for_each_chunk_mut(Parallelism::Rayon, &mut y, 10, |start, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = start + j;
            }
        });
        assert_eq!(x, y);
        assert_eq!(x[102], 102);
    }
}
