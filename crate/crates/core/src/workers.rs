use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Map `f` over `inputs` on up to `workers` threads, returning results in
/// input order.
pub fn ordered_map<T, R, F>(inputs: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(inputs.len().max(1));
    if workers == 1 {
        return inputs.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..inputs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let out = f(i, &inputs[i]);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|slot| slot.expect("every index visited"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let xs: Vec<u64> = (0..200).collect();
        let out = ordered_map(&xs, 8, |i, x| {
            if i % 7 == 0 {
                std::thread::yield_now();
            }
            x * x
        });
        assert_eq!(out, xs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(ordered_map(&Vec::<u8>::new(), 4, |_, x| *x).is_empty());
    }
}
