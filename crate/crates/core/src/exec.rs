//! Batch execution strategy.
//!
//! Independent per-sample work (forward/backward over a batch, evaluation
//! decoding, sweep runs) goes through [`Execution::map`]. With the
//! `parallel` feature the parallel strategy fans out over rayon's pool;
//! without it every strategy runs sequentially. Results are always returned
//! in input order so reductions stay deterministic.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
            }
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_strategies_preserve_order() {
        let xs: Vec<u32> = (0..100).collect();
        let seq = Execution::Sequential.map(&xs, |i, x| (i as u32) * 1000 + x);
        let par = Execution::Parallel.map(&xs, |i, x| (i as u32) * 1000 + x);
        assert_eq!(seq, par);
    }
}
