//! Bounded worker pool for independent pure tasks with order-deterministic
//! result assembly: the output only depends on the task function, never on
//! scheduling or worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

/// Apply `f` to every index in `0..n` using at most `workers` threads.
/// Results are returned in index order.
pub fn map_indexed<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.max(1).min(n.max(1));
    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, T)>();
    thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                if tx.send((i, f(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
        for (i, r) in rx {
            out[i] = Some(r);
        }
        out.into_iter()
            .map(|o| o.expect("every index produced a result"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_matches_sequential() {
        let seq = map_indexed(257, 1, |i| i * i);
        let par = map_indexed(257, 8, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn worker_count_does_not_change_floats() {
        let f = |i: usize| ((i as f64) * 0.1).sin().exp();
        let a = map_indexed(1000, 1, f);
        let b = map_indexed(1000, 7, f);
        assert_eq!(a, b); // bitwise identical
    }

    #[test]
    fn empty_input() {
        let out: Vec<u32> = map_indexed(0, 4, |_| 1);
        assert!(out.is_empty());
    }
}
