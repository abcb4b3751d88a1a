//! Execution mode for the data-parallel inner loops.
//!
//! Every parallel helper here splits work into index ranges whose boundaries
//! do not depend on the thread count, and combines partial results in index
//! order. Sequential and parallel runs therefore produce bit-identical output.
//! Without the `parallel` feature, [`Exec::Parallel`] runs sequentially.

/// Column chunk width used for batched reductions.
pub const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// True when work will actually be spread across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Evaluates `f(0..n)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`Exec::map`] but short-circuits on the first error in index order.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

/// Splits `0..len` into consecutive `(start, width)` ranges of at most `CHUNK`.
pub fn chunks(len: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(CHUNK.max(1))
        .map(|start| (start, CHUNK.min(len - start)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range() {
        let c = chunks(600);
        assert_eq!(c, vec![(0, 256), (256, 256), (512, 88)]);
        assert!(chunks(0).is_empty());
    }

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        assert_eq!(Exec::Sequential.map(1000, f), Exec::Parallel.map(1000, f));
    }
}
