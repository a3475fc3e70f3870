//! Status lines for long correlation runs, written to stderr.

use std::sync::Mutex;
use std::time::{Duration, Instant};

pub struct Progress {
    label: String,
    total: u64,
    start: Instant,
    interval: Duration,
    quiet: bool,
    last: Mutex<Instant>,
}

impl Progress {
    pub fn new(label: impl Into<String>, total: u64, interval: Duration, quiet: bool) -> Self {
        let start = Instant::now();
        Self {
            label: label.into(),
            total,
            start,
            interval,
            quiet,
            last: Mutex::new(start),
        }
    }

    /// Called with the cumulative count from any worker thread; prints at
    /// most once per interval.
    pub fn update(&self, done: u64) {
        if self.quiet || done >= self.total {
            return;
        }
        let Ok(mut last) = self.last.try_lock() else {
            return;
        };
        let now = Instant::now();
        if now.duration_since(*last) >= self.interval {
            *last = now;
            eprintln!(
                "{}",
                status_line(&self.label, done, self.total, self.start.elapsed())
            );
        }
    }

    pub fn finish(&self) {
        if !self.quiet {
            eprintln!(
                "{}",
                status_line(&self.label, self.total, self.total, self.start.elapsed())
            );
        }
    }
}

fn fmt_duration(secs: f64) -> String {
    let s = secs.round() as u64;
    match s {
        0..60 => format!("{s}s"),
        60..3600 => format!("{}m{:02}s", s / 60, s % 60),
        _ => format!("{}h{:02}m", s / 3600, (s % 3600) / 60),
    }
}

/// `label: done/total comparisons (pct%), rate/s, ETA t` while running and
/// `label: total/total comparisons (100.0%) in t` once complete.
pub fn status_line(label: &str, done: u64, total: u64, elapsed: Duration) -> String {
    let pct = if total == 0 {
        100.0
    } else {
        100.0 * done as f64 / total as f64
    };
    let secs = elapsed.as_secs_f64();
    if done >= total {
        return format!(
            "{label}: {done}/{total} comparisons ({pct:.1}%) in {}",
            fmt_duration(secs)
        );
    }
    let rate = if secs > 0.0 { done as f64 / secs } else { 0.0 };
    let eta = if rate > 0.0 {
        fmt_duration((total - done) as f64 / rate)
    } else {
        "unknown".to_string()
    };
    format!("{label}: {done}/{total} comparisons ({pct:.1}%), {rate:.3e}/s, ETA {eta}")
}
