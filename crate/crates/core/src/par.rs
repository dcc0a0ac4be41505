//! Order-preserving data parallelism.
//!
//! Every batch operation in the crate goes through [`map_ordered`] so that the
//! output sequence is identical regardless of the execution mode or thread
//! count. With the `parallel` feature disabled, [`Execution::Parallel`] runs
//! sequentially.

/// How a batch of independent items is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Use the global pool (`threads: None`) or a dedicated pool of the given size.
    Parallel {
        threads: Option<usize>,
    },
    #[default]
    Auto,
}

impl Execution {
    pub fn with_threads(threads: usize) -> Self {
        if threads <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel {
                threads: Some(threads),
            }
        }
    }

    /// True when this build can actually run work on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Execution::Sequential)
    }
}

/// Applies `f` to every item and returns the results in input order.
pub fn map_ordered<T, U, F>(items: &[T], exec: Execution, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match exec {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Auto | Execution::Parallel { threads: None } => {
                items.par_iter().map(f).collect()
            }
            Execution::Parallel { threads: Some(n) } => {
                match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                    Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                    Err(_) => items.iter().map(f).collect(),
                }
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = exec;
        items.iter().map(f).collect()
    }
}

/// Like [`map_ordered`] over the index range `0..n`.
pub fn map_range<U, F>(n: usize, exec: Execution, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map_ordered(&idx, exec, |&i| f(i))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_every_mode() {
        let items: Vec<u64> = (0..10_000).collect();
        let expect: Vec<u64> = items.iter().map(|x| x * x + 1).collect();
        for exec in [
            Execution::Sequential,
            Execution::Auto,
            Execution::Parallel { threads: None },
            Execution::with_threads(3),
        ] {
            assert_eq!(map_ordered(&items, exec, |x| x * x + 1), expect);
        }
    }

    #[test]
    fn with_threads_one_is_sequential() {
        assert_eq!(Execution::with_threads(1), Execution::Sequential);
        assert_eq!(Execution::with_threads(0), Execution::Sequential);
    }
}
