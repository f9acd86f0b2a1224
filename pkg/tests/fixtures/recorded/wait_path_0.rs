use waitdemo::{Waiter, STATE_MASK};
#[test]
fn test_wait_state_mask() { let ptr: *mut Waiter = std::ptr::null_mut();
    let addr: usize = ptr & STATE_MASK;
    assert_eq!(addr, 0);
}
