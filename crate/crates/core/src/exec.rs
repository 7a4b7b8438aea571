//! Execution policy for the data-parallel loops.
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] dispatches onto the
//! rayon pool; without it every policy runs sequentially. Results are always
//! collected by index, so output never depends on the schedule.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f)` collected in index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Like [`Exec::map_range`] but short-circuits on the first error.
    pub fn try_map_range<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }
}

/// Runs `f` inside a dedicated pool of `jobs` threads when parallelism is
/// available; otherwise just calls it.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    #[cfg(feature = "parallel")]
    if let Some(jobs) = jobs {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
            return pool.install(f);
        }
    }
    let _ = jobs;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_policies_agree() {
        let seq = Exec::Sequential.map_range(1000, |i| (i as f64).sqrt());
        let par = Exec::Parallel.map_range(1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);
    }

    #[test]
    fn try_map_propagates_errors() {
        let r: Result<Vec<usize>, String> =
            Exec::Parallel.try_map_range(10, |i| if i == 7 { Err(format!("bad {i}")) } else { Ok(i) });
        assert_eq!(r.unwrap_err(), "bad 7");
    }
}
