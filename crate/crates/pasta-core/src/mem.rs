//! Process-level allocation accounting used by the benchmark harness.
//!
//! `TrackingAllocator` wraps the system allocator and keeps live/peak byte
//! counters. Binaries that want memory reports install it with
//! `#[global_allocator]`; the library works unchanged without it (counters
//! just stay at zero).
//!
//! A soft cap turns would-be exhaustion into a recoverable
//! [`Error::OutOfMemory`](crate::Error::OutOfMemory): tensor buffer
//! allocations call [`check_cap`] before allocating, so a forward pass under
//! a cap fails cleanly instead of aborting the process.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
/// 0 means "no cap".
static SOFT_CAP: AtomicUsize = AtomicUsize::new(0);

pub struct TrackingAllocator;

fn on_alloc(size: usize) {
    let live = LIVE.fetch_add(size, Ordering::Relaxed) + size;
    PEAK.fetch_max(live, Ordering::Relaxed);
}

fn on_dealloc(size: usize) {
    LIVE.fetch_sub(size, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for TrackingAllocator {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = System.alloc(layout);
        if !p.is_null() {
            on_alloc(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout);
        on_dealloc(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = System.realloc(ptr, layout, new_size);
        if !p.is_null() {
            on_dealloc(layout.size());
            on_alloc(new_size);
        }
        p
    }
}

/// Bytes currently allocated (0 when no tracking allocator is installed).
pub fn live_bytes() -> usize {
    LIVE.load(Ordering::Relaxed)
}

/// High-water mark since process start or the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.load(Ordering::Relaxed)
}

pub fn reset_peak() {
    PEAK.store(LIVE.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Install or clear the soft memory cap. `None` disables it.
pub fn set_soft_cap(cap: Option<usize>) {
    SOFT_CAP.store(cap.unwrap_or(0), Ordering::Relaxed);
}

pub fn soft_cap() -> Option<usize> {
    match SOFT_CAP.load(Ordering::Relaxed) {
        0 => None,
        c => Some(c),
    }
}

/// Called before large buffer allocations. Errors when the allocation would
/// push live bytes past the soft cap.
pub fn check_cap(requested: usize) -> Result<()> {
    let cap = SOFT_CAP.load(Ordering::Relaxed);
    if cap != 0 {
        let live = LIVE.load(Ordering::Relaxed);
        if live.saturating_add(requested) > cap {
            return Err(Error::OutOfMemory {
                requested,
                live,
                cap,
            });
        }
    }
    Ok(())
}
