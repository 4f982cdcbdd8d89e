//! Data parallelism via model replicas.
//!
//! Tensors and tapes are confined to one thread, so workers never share
//! them: each worker rebuilds its models from a plain-data parameter
//! snapshot and returns plain data. Results are collected in chunk order,
//! and callers reduce in example order, so outcomes are independent of the
//! worker count and of scheduling.

use crate::error::Result;
use crate::tensor::Tensor;

/// Parameter values in registration order; plain data, safe to share
/// across threads.
#[derive(Debug, Clone)]
pub struct ParamSnapshot {
    pub values: Vec<Vec<f64>>,
}

pub fn snapshot(params: &[Tensor]) -> ParamSnapshot {
    ParamSnapshot {
        values: params.iter().map(|p| p.to_vec()).collect(),
    }
}

pub fn restore(params: &[Tensor], snap: &ParamSnapshot) -> Result<()> {
    assert_eq!(params.len(), snap.values.len(), "snapshot arity mismatch");
    for (p, v) in params.iter().zip(&snap.values) {
        p.set_data(v)?;
    }
    Ok(())
}

/// Split `items` into up to `workers` contiguous chunks, run `f` on each
/// chunk in its own thread, and return the per-chunk results in order.
/// `f` receives the chunk's starting index into `items`.
pub fn parallel_chunks<E, R, F>(items: &[E], workers: usize, f: F) -> Vec<R>
where
    E: Sync,
    R: Send,
    F: Fn(usize, &[E]) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let workers = workers.max(1).min(items.len());
    if workers == 1 {
        return vec![f(0, items)];
    }
    let chunk_size = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (c, chunk) in items.chunks(chunk_size).enumerate() {
            let start = c * chunk_size;
            let f = &f;
            handles.push(scope.spawn(move || f(start, chunk)));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    })
}

/// Sum per-example gradient vectors in example order (worker-count
/// independent) into a single gradient per parameter.
pub fn sum_example_grads(per_example: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let first = per_example.first().expect("at least one example");
    let mut total: Vec<Vec<f64>> = first.iter().map(|g| vec![0.0; g.len()]).collect();
    for example in per_example {
        for (acc, g) in total.iter_mut().zip(example) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_preserve_order() {
        let items: Vec<usize> = (0..23).collect();
        for workers in [1, 2, 3, 8, 32] {
            let chunks = parallel_chunks(&items, workers, |start, chunk| {
                chunk.iter().map(|&x| (start, x * 2)).collect::<Vec<_>>()
            });
            let flat: Vec<usize> = chunks.into_iter().flatten().map(|(_, x)| x).collect();
            let expected: Vec<usize> = items.iter().map(|&x| x * 2).collect();
            assert_eq!(flat, expected, "workers = {workers}");
        }
    }

    #[test]
    fn grad_sum_is_example_ordered() {
        let a = vec![vec![1.0, 2.0], vec![10.0]];
        let b = vec![vec![0.5, -2.0], vec![1.0]];
        let total = sum_example_grads(&[a, b]);
        assert_eq!(total, vec![vec![1.5, 0.0], vec![11.0]]);
    }

    #[test]
    fn snapshot_restore_round_trip() {
        let p = Tensor::param("w", vec![1.0, 2.0], &[2]).unwrap();
        let snap = snapshot(&[p.clone()]);
        p.set_data(&[9.0, 9.0]).unwrap();
        restore(&[p.clone()], &snap).unwrap();
        assert_eq!(p.to_vec(), vec![1.0, 2.0]);
    }
}
