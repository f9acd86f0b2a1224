// structure context
use std::{cell::Cell, thread::{self, Thread}};

use core::sync::atomic::{AtomicBool, AtomicPtr, Ordering};

const STATE_MASK: usize = 0x3;

#[repr(align(4))]
struct Waiter {
    thread: Cell<Option<Thread>>,
    signaled: AtomicBool,
    next: *mut Waiter,
}

thread: Cell<Option<Thread>>

signaled: AtomicBool

next: *mut Waiter

// dependency context
pub(crate) fn addr<T>(ptr: *mut T) -> usize {
    // SAFETY: every pointer is a valid usize bit pattern
    unsafe { core::mem::transmute(ptr) }
}

pub(crate) fn map_addr<T>(ptr: *mut T, f: impl FnOnce(usize) -> usize) -> *mut T {
    let offset = f(addr(ptr)).wrapping_sub(addr(ptr));
    ptr.cast::<u8>().wrapping_add(offset).cast::<T>()
}

pub fn current() -> Thread;

pub fn park();

pub fn compare_exchange(&self, current: *mut T, new: *mut T, success: Ordering, failure: Ordering) -> Result<*mut T, *mut T>;

// map_addr::f: impl FnOnce(usize) -> usize

// wait returns ()