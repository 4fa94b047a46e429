use std::collections::VecDeque;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Completion rate over a sliding time window.
#[derive(Debug, Clone)]
pub struct ThroughputMeter {
    window: Duration,
    events: VecDeque<Instant>,
    first: Option<Instant>,
    last: Option<Instant>,
    total: u64,
    peak: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub window_secs: f64,
    /// Completions per second inside the window ending now.
    pub current: f64,
    /// Completions per second from the first to the last completion.
    pub mean: f64,
    /// Highest windowed rate seen at any completion.
    pub peak: f64,
    pub total: u64,
}

impl ThroughputMeter {
    pub fn new(window: Duration) -> Self {
        assert!(!window.is_zero(), "window must be positive");
        Self { window, events: VecDeque::new(), first: None, last: None, total: 0, peak: 0.0 }
    }

    pub fn record(&mut self, at: Instant) {
        self.first.get_or_insert(at);
        self.last = Some(at);
        self.total += 1;
        self.events.push_back(at);
        let rate = self.rate(at);
        self.peak = self.peak.max(rate);
    }

    /// Completions in `(at - window, at]` divided by the window length.
    pub fn rate(&mut self, at: Instant) -> f64 {
        while let Some(&t) = self.events.front() {
            if at.saturating_duration_since(t) >= self.window {
                self.events.pop_front();
            } else {
                break;
            }
        }
        let n = self.events.iter().filter(|&&t| t <= at).count();
        n as f64 / self.window.as_secs_f64()
    }

    pub fn snapshot(&mut self, at: Instant) -> Throughput {
        let mean = match (self.first, self.last) {
            (Some(a), Some(b)) if b > a => self.total as f64 / (b - a).as_secs_f64(),
            _ => 0.0,
        };
        Throughput { window_secs: self.window.as_secs_f64(), current: self.rate(at), mean, peak: self.peak, total: self.total }
    }
}
