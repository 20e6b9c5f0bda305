//! Small process-level utilities: the MDT_THREADS cap and an order-preserving
//! parallel map used for independent runs (seeds, ablation rows).

use std::sync::Mutex;

/// Worker cap: the MDT_THREADS environment variable when set (minimum 1),
/// otherwise the machine's available parallelism.
pub fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("MDT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Run `f` over every item on up to `thread_cap()` worker threads, returning
/// results in input order. Items are claimed from a shared queue, so the
/// schedule is work-stealing but the output order is deterministic.
pub fn parallel_map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    let n = items.len();
    let workers = thread_cap().min(n.max(1));
    if workers <= 1 {
        return items.into_iter().map(f).collect();
    }
    let queue: Mutex<Vec<(usize, T)>> = Mutex::new(items.into_iter().enumerate().rev().collect());
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let next = queue.lock().expect("queue lock").pop();
                match next {
                    Some((i, item)) => {
                        let r = f(item);
                        results.lock().expect("results lock")[i] = Some(r);
                    }
                    None => break,
                }
            });
        }
    });
    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}
