//! Deterministic data-parallel node loops.
//!
//! Every parallel loop here writes each output slot from a pure function of
//! its global index, so results are bit-identical for any worker count.
//! Reductions (means, norms) stay serial with a fixed summation order.

/// Worker count: `CELLHOM_THREADS` if set, else available parallelism.
pub fn thread_count() -> usize {
    if let Ok(v) = std::env::var("CELLHOM_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.clamp(1, 256);
        }
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Fill `out[i] = f(i)` for all i, chunked across workers.
pub fn par_fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    par_node_fill(out, 1, |i, slot| slot[0] = f(i));
}

/// Treat `out` as rows of `per_node` values and fill row i via
/// `f(i, row)`. Rows never straddle worker boundaries.
pub fn par_node_fill<F>(out: &mut [f64], per_node: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let nodes = out.len() / per_node;
    let workers = thread_count().min(nodes.max(1));
    if workers <= 1 || nodes < 2048 {
        for (i, row) in out.chunks_mut(per_node).enumerate() {
            f(i, row);
        }
        return;
    }
    let rows_per_worker = nodes.div_ceil(workers);
    std::thread::scope(|scope| {
        for (w, chunk) in out.chunks_mut(rows_per_worker * per_node).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = w * rows_per_worker;
                for (k, row) in chunk.chunks_mut(per_node).enumerate() {
                    f(base + k, row);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_matches_serial() {
        let mut a = vec![0.0; 5000];
        par_fill(&mut a, |i| (i as f64).sin());
        for (i, v) in a.iter().enumerate() {
            assert_eq!(*v, (i as f64).sin());
        }
    }

    #[test]
    fn node_rows_are_contiguous() {
        let mut a = vec![0.0; 3 * 4096];
        par_node_fill(&mut a, 3, |i, row| {
            row[0] = i as f64;
            row[1] = 2.0 * i as f64;
            row[2] = -(i as f64);
        });
        assert_eq!(a[3 * 100], 100.0);
        assert_eq!(a[3 * 100 + 1], 200.0);
        assert_eq!(a[3 * 100 + 2], -100.0);
    }
}
