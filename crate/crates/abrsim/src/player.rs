//! Single-session playback dynamics.
//!
//! One step downloads one segment: download time drains the buffer, the
//! finished segment adds `L` seconds of content, overflow past `B_max` (plus
//! RTT) is spent waiting. Two-phase evaluation resolves the wait term: first
//! the tentative post-download buffer, then the wait, then the clamp.

use serde::{Deserialize, Serialize};

use crate::bandwidth::BandwidthModel;
use crate::error::{Error, Result};
use crate::manifest::VideoManifest;

/// Player-side state carried between segment downloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerEnv {
    /// Buffered content in seconds.
    pub buffer_s: f64,
    /// Buffer capacity in seconds.
    pub b_max_s: f64,
    /// Round-trip time charged on every step, in seconds.
    pub rtt_s: f64,
    /// Level of the most recently downloaded segment, if any.
    pub last_level: Option<usize>,
    pub segments_played: u32,
    /// Wall clock in seconds, monotone across steps.
    pub clock_s: f64,
}

impl PlayerEnv {
    pub fn new(b_max_s: f64) -> Self {
        PlayerEnv {
            buffer_s: 0.0,
            b_max_s,
            rtt_s: 0.0,
            last_level: None,
            segments_played: 0,
            clock_s: 0.0,
        }
    }
}

/// Everything observed while downloading and playing one segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub level_index: usize,
    pub download_time_s: f64,
    pub stall_time_s: f64,
    pub wait_time_s: f64,
    pub buffer_after_s: f64,
    pub throughput_kbps: f64,
}

/// Stall incurred downloading for `download_time` seconds against a buffer.
pub fn stall_time(buffer_s: f64, download_time_s: f64) -> f64 {
    (download_time_s - buffer_s).max(0.0)
}

/// How the buffer capacity is derived from the bandwidth model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BMaxRule {
    Constant { seconds: f64 },
    /// `base + slope * mean_kbps / 1000`, clamped to [min_s, max_s].
    AffineInMean {
        base_s: f64,
        slope_s_per_mbps: f64,
        min_s: f64,
        max_s: f64,
    },
}

impl Default for BMaxRule {
    fn default() -> Self {
        BMaxRule::Constant { seconds: 10.0 }
    }
}

impl BMaxRule {
    pub fn b_max(&self, model: &BandwidthModel) -> f64 {
        match *self {
            BMaxRule::Constant { seconds } => seconds,
            BMaxRule::AffineInMean {
                base_s,
                slope_s_per_mbps,
                min_s,
                max_s,
            } => (base_s + slope_s_per_mbps * model.mean_kbps / 1000.0).clamp(min_s, max_s),
        }
    }
}

/// Advance the player by one segment at `level` under bandwidth `c_kbps`.
pub fn step(
    env: &PlayerEnv,
    manifest: &VideoManifest,
    level: usize,
    c_kbps: f64,
) -> Result<(PlayerEnv, SegmentOutcome)> {
    let rung = manifest.level(level)?;
    if !(c_kbps > 0.0) {
        return Err(Error::InvalidParam(format!(
            "bandwidth must be > 0, got {c_kbps}"
        )));
    }
    // megabits over kilobits/second: x1000 to get seconds
    let download_time_s = rung.segment_size_mbit * 1000.0 / c_kbps;
    let stall_time_s = stall_time(env.buffer_s, download_time_s);
    let tentative = (env.buffer_s - download_time_s).max(0.0) + manifest.segment_length_s;
    let wait_time_s = (tentative - env.b_max_s).max(0.0) + env.rtt_s;
    let buffer_after_s = (tentative - wait_time_s).max(0.0);

    let next = PlayerEnv {
        buffer_s: buffer_after_s,
        b_max_s: env.b_max_s,
        rtt_s: env.rtt_s,
        last_level: Some(level),
        segments_played: env.segments_played + 1,
        clock_s: env.clock_s + download_time_s + wait_time_s,
    };
    let outcome = SegmentOutcome {
        level_index: level,
        download_time_s,
        stall_time_s,
        wait_time_s,
        buffer_after_s,
        throughput_kbps: c_kbps,
    };
    Ok((next, outcome))
}
