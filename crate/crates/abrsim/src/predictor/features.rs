//! Per-user history and the fixed-shape feature matrix.
//!
//! The matrix is 5 channels by 8 positions. Channels 0-1 hold the last
//! eight segments' bitrate and throughput; channels 2-4 hold the last eight
//! stall events: stall time, seconds since the previous stall, and seconds
//! since the previous stall-triggered exit. Missing history is zero-filled
//! oldest-first, so the most recent entry always sits at position 7.
//! Intervals are measured in seconds of watched content.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::user::SegmentContext;

pub const FEATURE_CHANNELS: usize = 5;
pub const FEATURE_LEN: usize = 8;

/// One recorded stall event in a user's history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StallEvent {
    pub stall_time_s: f64,
    /// Watched-content seconds since the previous stall (0 for the first).
    pub since_prev_stall_s: f64,
    /// Watched-content seconds since the last stall-triggered exit
    /// (0 until the user has one).
    pub since_prev_exit_s: f64,
}

/// Evolving per-user playback and engagement history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct UserState {
    bitrates_kbps: VecDeque<f64>,
    throughputs_kbps: VecDeque<f64>,
    stalls: VecDeque<StallEvent>,
    /// Cumulative watched-content clock, running across sessions.
    watch_clock_s: f64,
    last_stall_clock_s: Option<f64>,
    last_exit_clock_s: Option<f64>,
    /// The segment most recently observed, if any.
    last_segment: Option<SegmentContext>,
    /// Level of the segment before the most recent one.
    prev_level: Option<usize>,
    /// Stall events seen today (persists across sessions within a day).
    pub day_stall_count: u32,
    /// Stall-triggered exits recorded over the user's lifetime.
    pub stall_exit_count: u32,
}

impl UserState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record one watched segment.
    pub fn observe_segment(
        &mut self,
        level: usize,
        bitrate_kbps: f64,
        throughput_kbps: f64,
        stall_time_s: f64,
        switched: bool,
        segment_length_s: f64,
    ) {
        push_cap(&mut self.bitrates_kbps, bitrate_kbps);
        push_cap(&mut self.throughputs_kbps, throughput_kbps);
        self.watch_clock_s += segment_length_s;
        if stall_time_s > 0.0 {
            // with no prior event the interval is the whole watch history:
            // a user who never exited must not look like one who just did
            let since_prev_stall_s =
                self.watch_clock_s - self.last_stall_clock_s.unwrap_or(0.0);
            let since_prev_exit_s =
                self.watch_clock_s - self.last_exit_clock_s.unwrap_or(0.0);
            push_cap(
                &mut self.stalls,
                StallEvent {
                    stall_time_s,
                    since_prev_stall_s,
                    since_prev_exit_s,
                },
            );
            self.last_stall_clock_s = Some(self.watch_clock_s);
            self.day_stall_count += 1;
        }
        self.prev_level = self.last_segment.as_ref().map(|s| s.level);
        self.last_segment = Some(SegmentContext {
            level,
            switched,
            stall_time_s,
        });
    }

    /// Record that the user exited; stall-triggered exits feed the interval
    /// channel.
    pub fn observe_exit(&mut self, caused_by_stall: bool) {
        if caused_by_stall {
            self.last_exit_clock_s = Some(self.watch_clock_s);
            self.stall_exit_count += 1;
        }
    }

    pub fn last_segment(&self) -> Option<&SegmentContext> {
        self.last_segment.as_ref()
    }

    /// Level of the segment before the most recent one.
    pub fn prev_level(&self) -> Option<usize> {
        self.prev_level
    }

    pub fn recent_throughputs(&self) -> Vec<f64> {
        self.throughputs_kbps.iter().copied().collect()
    }

    pub fn watch_clock_s(&self) -> f64 {
        self.watch_clock_s
    }

    pub fn stall_events(&self) -> impl Iterator<Item = &StallEvent> {
        self.stalls.iter()
    }

    /// Reset the daily counter at a day boundary; long-term history stays.
    pub fn start_new_day(&mut self) {
        self.day_stall_count = 0;
    }
}

fn push_cap<T>(buf: &mut VecDeque<T>, value: T) {
    buf.push_back(value);
    while buf.len() > FEATURE_LEN {
        buf.pop_front();
    }
}

/// Normalization constants recorded alongside trained models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    /// Bitrates divide by the ladder maximum.
    pub bitrate_max_kbps: f64,
    /// Throughputs divide by the corpus 95th percentile.
    pub throughput_p95_kbps: f64,
    /// Stall times divide by this many seconds.
    pub stall_norm_s: f64,
    /// Interval channels divide by this many seconds.
    pub interval_norm_s: f64,
    /// Intervals saturate here (seconds) before normalization.
    pub interval_cap_s: f64,
}

impl FeatureScale {
    pub fn new(bitrate_max_kbps: f64, throughput_p95_kbps: f64) -> Self {
        FeatureScale {
            bitrate_max_kbps: bitrate_max_kbps.max(1.0),
            throughput_p95_kbps: throughput_p95_kbps.max(1.0),
            stall_norm_s: 6.0,
            interval_norm_s: 60.0,
            interval_cap_s: 480.0,
        }
    }

    /// 95th percentile of a throughput sample set (nearest-rank).
    pub fn p95(samples: &[f64]) -> f64 {
        if samples.is_empty() {
            return 1.0;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
        sorted[rank - 1]
    }
}

/// The fixed 5x8 input, row-major by channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix(pub [[f64; FEATURE_LEN]; FEATURE_CHANNELS]);

impl FeatureMatrix {
    pub fn zeros() -> Self {
        FeatureMatrix([[0.0; FEATURE_LEN]; FEATURE_CHANNELS])
    }

    pub fn as_flat(&self) -> [f64; FEATURE_CHANNELS * FEATURE_LEN] {
        let mut out = [0.0; FEATURE_CHANNELS * FEATURE_LEN];
        for (c, row) in self.0.iter().enumerate() {
            out[c * FEATURE_LEN..(c + 1) * FEATURE_LEN].copy_from_slice(row);
        }
        out
    }

    pub fn count_zeros(&self) -> usize {
        self.0.iter().flatten().filter(|v| **v == 0.0).count()
    }
}

/// Build the normalized feature matrix from a user's history.
pub fn build_features(state: &UserState, scale: &FeatureScale) -> FeatureMatrix {
    let mut m = FeatureMatrix::zeros();
    fill_right(&mut m.0[0], state.bitrates_kbps.iter(), |b| {
        b / scale.bitrate_max_kbps
    });
    fill_right(&mut m.0[1], state.throughputs_kbps.iter(), |t| {
        t / scale.throughput_p95_kbps
    });
    fill_right(&mut m.0[2], state.stalls.iter(), |e| {
        e.stall_time_s / scale.stall_norm_s
    });
    fill_right(&mut m.0[3], state.stalls.iter(), |e| {
        e.since_prev_stall_s.min(scale.interval_cap_s) / scale.interval_norm_s
    });
    fill_right(&mut m.0[4], state.stalls.iter(), |e| {
        e.since_prev_exit_s.min(scale.interval_cap_s) / scale.interval_norm_s
    });
    m
}

/// Pack up to the last 8 values right-aligned: oldest-first zero padding.
fn fill_right<'a, T: 'a>(
    row: &mut [f64; FEATURE_LEN],
    items: impl ExactSizeIterator<Item = &'a T>,
    f: impl Fn(&T) -> f64,
) {
    let n = items.len().min(FEATURE_LEN);
    let skip = items.len() - n;
    for (i, item) in items.skip(skip).enumerate() {
        row[FEATURE_LEN - n + i] = f(item);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scale() -> FeatureScale {
        FeatureScale::new(6000.0, 8000.0)
    }

    #[test]
    fn single_segment_pads_everything_else() {
        let mut s = UserState::new();
        s.observe_segment(1, 1800.0, 3000.0, 0.0, false, 1.0);
        let m = build_features(&s, &scale());
        // one bitrate and one throughput cell; stall channels untouched
        assert_eq!(m.count_zeros(), 38);
        assert!((m.0[0][7] - 0.3).abs() < 1e-12);
        assert!((m.0[1][7] - 0.375).abs() < 1e-12);
        assert_eq!(m.0[0][..7], [0.0; 7]);
        assert_eq!(m.0[2], [0.0; 8]);
    }

    #[test]
    fn twenty_segments_keep_the_last_eight() {
        let mut s = UserState::new();
        for i in 0..20 {
            let stall = if [4, 9, 15].contains(&i) { 1.0 } else { 0.0 };
            s.observe_segment(0, (i + 1) as f64 * 100.0, 1000.0, stall, false, 1.0);
        }
        let m = build_features(&s, &scale());
        // channel 0 reflects segments 13..=20 (1-based)
        let expected: Vec<f64> = (13..=20).map(|i| i as f64 * 100.0 / 6000.0).collect();
        assert_eq!(m.0[0].to_vec(), expected);
        // three stall events, right-aligned with five zeros in front
        assert_eq!(m.0[2][..5], [0.0; 5]);
        assert!(m.0[2][5..].iter().all(|v| *v > 0.0));
    }

    #[test]
    fn ninth_stall_evicts_the_oldest() {
        let mut s = UserState::new();
        for i in 0..9 {
            s.observe_segment(0, 800.0, 1000.0, (i + 1) as f64 * 0.1, false, 1.0);
        }
        let m = build_features(&s, &scale());
        // stall times 0.2..=0.9 remain after the 0.1 event is evicted
        assert!((m.0[2][0] - 0.02).abs() < 1e-12);
        assert!((m.0[2][7] - 0.09).abs() < 1e-12);
    }

    #[test]
    fn intervals_reference_stall_and_exit_clocks() {
        let mut s = UserState::new();
        s.observe_segment(0, 800.0, 1000.0, 0.5, false, 1.0); // stall at clock 1
        s.observe_exit(true); // exit at clock 1
        for _ in 0..4 {
            s.observe_segment(0, 800.0, 1000.0, 0.0, false, 1.0);
        }
        s.observe_segment(0, 800.0, 1000.0, 0.8, false, 1.0); // stall at clock 6
        let events: Vec<_> = s.stall_events().copied().collect();
        assert_eq!(events.len(), 2);
        // first event: no prior stall or exit, intervals span the history
        assert_eq!(events[0].since_prev_stall_s, 1.0);
        assert_eq!(events[0].since_prev_exit_s, 1.0);
        assert_eq!(events[1].since_prev_stall_s, 5.0);
        assert_eq!(events[1].since_prev_exit_s, 5.0);
        assert_eq!(s.stall_exit_count, 1);
    }

    #[test]
    fn p95_nearest_rank() {
        let samples: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(FeatureScale::p95(&samples), 95.0);
        assert_eq!(FeatureScale::p95(&[42.0]), 42.0);
    }

    #[test]
    fn state_serializes_for_persistence() {
        let mut s = UserState::new();
        s.observe_segment(2, 3500.0, 4000.0, 1.2, true, 1.0);
        s.observe_exit(true);
        let json = serde_json::to_string(&s).unwrap();
        let back: UserState = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
