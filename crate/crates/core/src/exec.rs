//! Data-parallel execution of independent work items.
//!
//! With the `parallel` feature (default) work is fanned out over the rayon
//! pool; without it, or when [`Execution::Sequential`] is requested, items run
//! in order on the calling thread. Result order always follows item index.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
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

    /// Runs `f` inside a dedicated pool of `jobs` workers when parallel
    /// execution is available; otherwise calls it directly.
    pub fn with_jobs<R: Send>(self, jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
        match (self, jobs) {
            #[cfg(feature = "parallel")]
            (Execution::Parallel, Some(n)) if n > 0 => {
                match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => pool.install(f),
                    Err(_) => f(),
                }
            }
            _ => f(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_preserve_order() {
        let items: Vec<u64> = (0..257).collect();
        let seq = Execution::Sequential.map(&items, |i, x| (i as u64) * 1000 + x * x);
        let par = Execution::Parallel.map(&items, |i, x| (i as u64) * 1000 + x * x);
        assert_eq!(seq, par);
        assert_eq!(seq[3], 3009);
    }

    #[test]
    fn with_jobs_runs_closure() {
        assert_eq!(Execution::Parallel.with_jobs(Some(2), || 5), 5);
        assert_eq!(Execution::Sequential.with_jobs(None, || 6), 6);
    }
}
