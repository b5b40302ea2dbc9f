//! Data-parallel helpers. With the `parallel` feature the work is spread over
//! the rayon pool; without it every call runs sequentially. Results are always
//! returned in input order so scheduling never changes an outcome.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` when the crate was built with the `parallel` feature.
    pub fn available() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
        _ => (0..n).map(f).collect(),
    }
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<'a, S, T, F>(exec: Execution, items: &'a [S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map_slice`] but caps the number of concurrently running calls at
/// `max_inflight`. Used for adapter calls that may block on the network.
pub fn map_slice_bounded<'a, S, T, F>(
    exec: Execution,
    max_inflight: usize,
    items: &'a [S],
    f: F,
) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&'a S) -> T + Sync + Send,
{
    #[cfg(not(feature = "parallel"))]
    let _ = max_inflight;
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel if max_inflight > 1 && items.len() > 1 => {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new()
                .num_threads(max_inflight)
                .build()
            {
                Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
                Err(_) => items.iter().map(f).collect(),
            }
        }
        _ => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let xs: Vec<u64> = (0..1000).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(map_slice(exec, &xs, |x| x * 2), map_range(exec, 1000, |i| i as u64 * 2));
            assert_eq!(
                map_slice_bounded(exec, 3, &xs, |x| x + 1),
                xs.iter().map(|x| x + 1).collect::<Vec<_>>()
            );
        }
    }
}
