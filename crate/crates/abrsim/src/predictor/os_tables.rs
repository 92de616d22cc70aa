//! Population-level exit statistics for quality and smoothness, estimated
//! over non-stall segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SessionTrace;

/// Direction of a level change between consecutive segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchPattern {
    None,
    Up,
    Down,
}

/// Empirical exit-rate tables over non-stall segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OsTables {
    /// Exit rate per quality level on non-stall, non-switch segments.
    pub quality: Vec<f64>,
    /// Exit rate on non-stall segments that switched up / down.
    pub switch_up: f64,
    pub switch_down: f64,
    /// Pooled non-stall, non-switch exit rate (switch uplift baseline).
    pub no_switch_baseline: f64,
    /// Pooled non-stall exit rate; the empty-cell fallback.
    pub global_non_stall: f64,
}

impl OsTables {
    /// Contribution used by the hybrid predictor: the quality table value
    /// plus the switch uplift over baseline, clamped to [0, 1].
    pub fn contribution(&self, level: usize, pattern: SwitchPattern) -> f64 {
        let q = self
            .quality
            .get(level)
            .copied()
            .unwrap_or(self.global_non_stall);
        let uplift = match pattern {
            SwitchPattern::None => 0.0,
            SwitchPattern::Up => (self.switch_up - self.no_switch_baseline).max(0.0),
            SwitchPattern::Down => (self.switch_down - self.no_switch_baseline).max(0.0),
        };
        (q + uplift).clamp(0.0, 1.0)
    }
}

/// Estimate the tables from a session corpus. Cells with no observations
/// fall back to the pooled non-stall rate.
pub fn build_os_tables(traces: &[SessionTrace], num_levels: usize) -> Result<OsTables> {
    let mut level_counts = vec![(0u64, 0u64); num_levels]; // (segments, exits)
    let mut up = (0u64, 0u64);
    let mut down = (0u64, 0u64);
    let mut baseline = (0u64, 0u64);
    let mut global = (0u64, 0u64);

    for trace in traces {
        let mut prev_level: Option<usize> = None;
        for (i, out) in trace.outcomes.iter().enumerate() {
            let exited = trace.exited_at == Some(i);
            let pattern = match prev_level {
                Some(p) if out.level_index > p => SwitchPattern::Up,
                Some(p) if out.level_index < p => SwitchPattern::Down,
                _ => SwitchPattern::None,
            };
            prev_level = Some(out.level_index);
            if out.stall_time_s > 0.0 {
                continue;
            }
            global.0 += 1;
            global.1 += exited as u64;
            match pattern {
                SwitchPattern::None => {
                    baseline.0 += 1;
                    baseline.1 += exited as u64;
                    if let Some(cell) = level_counts.get_mut(out.level_index) {
                        cell.0 += 1;
                        cell.1 += exited as u64;
                    }
                }
                SwitchPattern::Up => {
                    up.0 += 1;
                    up.1 += exited as u64;
                }
                SwitchPattern::Down => {
                    down.0 += 1;
                    down.1 += exited as u64;
                }
            }
        }
    }

    if global.0 == 0 {
        return Err(Error::EmptyInput(
            "corpus has no non-stall segments".into(),
        ));
    }
    let rate = |(n, e): (u64, u64), fallback: f64| {
        if n > 0 {
            e as f64 / n as f64
        } else {
            fallback
        }
    };
    let global_rate = rate(global, 0.0);
    Ok(OsTables {
        quality: level_counts
            .iter()
            .map(|&cell| rate(cell, global_rate))
            .collect(),
        switch_up: rate(up, global_rate),
        switch_down: rate(down, global_rate),
        no_switch_baseline: rate(baseline, global_rate),
        global_non_stall: global_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ExitCause;
    use crate::player::SegmentOutcome;

    fn outcome(level: usize, stall: f64) -> SegmentOutcome {
        SegmentOutcome {
            level_index: level,
            download_time_s: 0.2,
            stall_time_s: stall,
            wait_time_s: 0.0,
            buffer_after_s: 5.0,
            throughput_kbps: 4000.0,
        }
    }

    fn session(levels: &[usize], exited_at: Option<usize>) -> SessionTrace {
        SessionTrace::new(
            "u",
            levels.iter().map(|&l| outcome(l, 0.0)).collect(),
            exited_at,
            if exited_at.is_some() {
                ExitCause::Random
            } else {
                ExitCause::None
            },
            1.0,
        )
    }

    #[test]
    fn recovers_per_level_rates() {
        // level 0: 1 exit out of 4+16... build 20 sessions at level 0 with
        // 2 exits, 20 at level 1 with 1 exit
        let mut traces = Vec::new();
        for i in 0..20 {
            traces.push(session(&[0, 0, 0, 0, 0], (i < 2).then_some(4)));
        }
        for i in 0..20 {
            traces.push(session(&[1, 1, 1, 1, 1], (i < 1).then_some(4)));
        }
        let t = build_os_tables(&traces, 2).unwrap();
        assert!((t.quality[0] - 2.0 / 100.0).abs() < 1e-12);
        assert!((t.quality[1] - 1.0 / 100.0).abs() < 1e-12);
    }

    #[test]
    fn no_switches_falls_back() {
        let traces = vec![session(&[0, 0, 0], None); 5];
        let t = build_os_tables(&traces, 2).unwrap();
        assert_eq!(t.switch_up, t.global_non_stall);
        assert_eq!(t.switch_down, t.global_non_stall);
        // level 1 never observed: falls back too
        assert_eq!(t.quality[1], t.global_non_stall);
    }

    #[test]
    fn contribution_applies_switch_uplift() {
        let t = OsTables {
            quality: vec![0.004, 0.002],
            switch_up: 0.02,
            switch_down: 0.03,
            no_switch_baseline: 0.003,
            global_non_stall: 0.003,
        };
        assert_eq!(t.contribution(0, SwitchPattern::None), 0.004);
        assert!((t.contribution(1, SwitchPattern::Up) - (0.002 + 0.017)).abs() < 1e-12);
        assert!((t.contribution(1, SwitchPattern::Down) - (0.002 + 0.027)).abs() < 1e-12);
    }

    #[test]
    fn stall_segments_are_excluded() {
        let mut with_stall = session(&[0, 0], Some(1));
        with_stall.outcomes[1].stall_time_s = 2.0;
        let traces = vec![with_stall, session(&[0, 0], None)];
        let t = build_os_tables(&traces, 1).unwrap();
        // the exit happened on a stall segment, so it never enters the table
        assert_eq!(t.quality[0], 0.0);
    }
}
