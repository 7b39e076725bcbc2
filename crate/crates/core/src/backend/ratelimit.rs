use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use super::Clock;

const WINDOW: Duration = Duration::from_secs(1);

/// Sliding-window limiter: at most `per_second` dispatches inside any
/// one-second window.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: u32,
    recent: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_second: u32) -> Self {
        Self {
            per_second: per_second.max(1),
            recent: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_second(&self) -> u32 {
        self.per_second
    }

    /// Blocks until a dispatch slot is free, records it and returns its time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        loop {
            let wait = {
                let mut recent = self.recent.lock().expect("rate limiter poisoned");
                let now = clock.now();
                while recent.front().is_some_and(|t| now.saturating_sub(*t) >= WINDOW) {
                    recent.pop_front();
                }
                if recent.len() < self.per_second as usize {
                    recent.push_back(now);
                    return now;
                }
                (recent[0] + WINDOW).saturating_sub(now)
            };
            clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}
