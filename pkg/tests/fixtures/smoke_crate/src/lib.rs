pub const STATE_MASK: usize = 0b11;

pub struct Waiter {
    pub next: *mut Waiter,
}

pub fn classify(x: i32) -> &'static str {
    if x > 10 {
        "big"
    } else {
        "small"
    }
}

pub fn in_range(x: i32) -> bool {
    if x >= 0 && x <= 10 {
        return true;
    }
    false
}
