//! Process resource accounting: CPU time, peak RSS, open descriptors.

use std::time::Duration;

/// A `getrusage(RUSAGE_SELF)` snapshot.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Usage {
    pub user: Duration,
    pub system: Duration,
    pub max_rss_bytes: u64,
}

fn tv(t: libc::timeval) -> Duration {
    Duration::new(t.tv_sec.max(0) as u64, (t.tv_usec.max(0) as u32) * 1000)
}

impl Usage {
    pub fn now() -> Usage {
        // SAFETY: zeroed rusage is a valid out-parameter for getrusage.
        let mut ru: libc::rusage = unsafe { std::mem::zeroed() };
        // SAFETY: `ru` is a valid pointer for the duration of the call.
        if unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut ru) } != 0 {
            return Usage::default();
        }
        // ru_maxrss is KiB on Linux and bytes on macOS.
        let scale = if cfg!(target_os = "macos") { 1 } else { 1024 };
        Usage {
            user: tv(ru.ru_utime),
            system: tv(ru.ru_stime),
            max_rss_bytes: ru.ru_maxrss.max(0) as u64 * scale,
        }
    }

    /// CPU seconds (user, kernel) consumed since `earlier`.
    pub fn cpu_since(&self, earlier: &Usage) -> (f64, f64) {
        (
            self.user.saturating_sub(earlier.user).as_secs_f64(),
            self.system.saturating_sub(earlier.system).as_secs_f64(),
        )
    }
}

/// Number of descriptors this process holds open, or `None` where
/// `/proc/self/fd` is unavailable.
pub fn open_descriptors() -> Option<usize> {
    // The directory handle itself shows up in the listing.
    std::fs::read_dir("/proc/self/fd").ok().map(|d| d.count().saturating_sub(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_is_monotone() {
        let a = Usage::now();
        let mut x = 0u64;
        for i in 0..2_000_000u64 {
            x = x.wrapping_mul(31).wrapping_add(i);
        }
        std::hint::black_box(x);
        let b = Usage::now();
        let (u, s) = b.cpu_since(&a);
        assert!(u >= 0.0 && s >= 0.0);
        assert!(b.max_rss_bytes >= a.max_rss_bytes);
        assert!(b.max_rss_bytes > 0);
    }

    #[cfg(target_os = "linux")]
    #[test]
    fn census_sees_new_descriptors() {
        let files: Vec<_> = (0..16).map(|_| std::fs::File::open("/proc/self/status").unwrap()).collect();
        assert!(open_descriptors().unwrap() >= files.len());
    }
}
