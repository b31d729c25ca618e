fn main() {
    tune_allocator();
    std::process::exit(bitrain_cli::run(std::env::args_os()));
}

/// Keeps large activation buffers on the heap instead of fresh mappings;
/// training steps otherwise spend much of their time in page faults.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // SAFETY: mallopt only adjusts allocator thresholds and is called
    // before any other thread exists.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}
