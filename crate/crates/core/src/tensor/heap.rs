//! Tapes allocate and drop many mid-sized buffers per step. glibc returns
//! freed memory to the kernel by default, so every step pays page faults
//! again; raising the trim and mmap thresholds keeps the heap resident.

use std::sync::Once;

static TUNE: Once = Once::new();

#[cfg(all(target_os = "linux", target_env = "gnu"))]
pub(crate) fn keep_resident() {
    extern "C" {
        fn mallopt(param: i32, value: i32) -> i32;
    }
    const M_TRIM_THRESHOLD: i32 = -1;
    const M_MMAP_THRESHOLD: i32 = -3;
    TUNE.call_once(|| {
        // SAFETY: mallopt only adjusts allocator tunables.
        unsafe {
            mallopt(M_TRIM_THRESHOLD, 1 << 30);
            mallopt(M_MMAP_THRESHOLD, 1 << 30);
        }
    });
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
pub(crate) fn keep_resident() {
    TUNE.call_once(|| {});
}
