//! Recycled activation buffers. Large fresh allocations come straight from
//! the OS and pay a page fault per 4 KiB on first touch, which costs more
//! than the arithmetic for the first conv layer; reusing freed buffers
//! avoids that.

use std::cell::RefCell;

const MIN_POOLED: usize = 1 << 14;
const MAX_BUFFERS: usize = 32;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Zero-filled buffer of length `len`, reusing a pooled allocation when one
/// is large enough.
pub(crate) fn zeroed(len: usize) -> Vec<f64> {
    if len >= MIN_POOLED {
        let reused = POOL.with(|p| {
            let mut p = p.borrow_mut();
            let best = p
                .iter()
                .enumerate()
                .filter(|(_, b)| b.capacity() >= len)
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i);
            best.map(|i| p.swap_remove(i))
        });
        if let Some(mut v) = reused {
            v.clear();
            v.resize(len, 0.0);
            return v;
        }
    }
    vec![0.0; len]
}

pub(crate) fn copied(src: &[f64]) -> Vec<f64> {
    let mut v = zeroed(src.len());
    v.copy_from_slice(src);
    v
}

pub(crate) fn recycle(v: Vec<f64>) {
    if v.capacity() < MIN_POOLED {
        return;
    }
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        p.push(v);
        if p.len() > MAX_BUFFERS {
            // drop the smallest
            let i = p
                .iter()
                .enumerate()
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i)
                .expect("non-empty");
            p.swap_remove(i);
        }
    });
}
