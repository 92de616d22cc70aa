//! Session scoring: the linear objective, completion rate, and the
//! stall-exit rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::VideoManifest;
use crate::player::SegmentOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitCause {
    /// Exit traced to the engagement model's stall rule or stall response.
    Stall,
    /// Background exit unrelated to playback quality.
    Random,
    None,
}

/// One playback session: per-segment outcomes and how it ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub user_id: String,
    pub outcomes: Vec<SegmentOutcome>,
    /// Segment index at which the user left, if they did.
    pub exited_at: Option<usize>,
    pub exit_cause: ExitCause,
    /// Seconds of content watched: segments watched times segment length.
    pub watch_time_s: f64,
}

impl SessionTrace {
    pub fn new(
        user_id: impl Into<String>,
        outcomes: Vec<SegmentOutcome>,
        exited_at: Option<usize>,
        exit_cause: ExitCause,
        segment_length_s: f64,
    ) -> Self {
        if let Some(idx) = exited_at {
            debug_assert!(idx < outcomes.len(), "exit index past the trace");
        }
        let watch_time_s = outcomes.len() as f64 * segment_length_s;
        SessionTrace {
            user_id: user_id.into(),
            outcomes,
            exited_at,
            exit_cause,
            watch_time_s,
        }
    }

    pub fn total_stall_s(&self) -> f64 {
        self.outcomes.iter().map(|o| o.stall_time_s).sum()
    }

    pub fn stall_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.stall_time_s > 0.0).count()
    }

    /// Completed means the user watched every segment of a bounded video.
    pub fn completed(&self, manifest: &VideoManifest) -> bool {
        self.exited_at.is_none() && self.outcomes.len() as u32 >= manifest.num_segments
    }
}

/// Linear session score: summed quality, minus weighted stall time, minus
/// weighted quality jumps between consecutive segments.
pub fn qoe_lin(
    trace: &SessionTrace,
    manifest: &VideoManifest,
    stall_weight: f64,
    switch_weight: f64,
) -> Result<f64> {
    if trace.outcomes.is_empty() {
        return Err(Error::EmptyInput("session has no segments".into()));
    }
    let mut score = 0.0;
    let mut prev_q: Option<f64> = None;
    for out in &trace.outcomes {
        let q = manifest.quality(out.level_index)?;
        score += q - stall_weight * out.stall_time_s;
        if let Some(pq) = prev_q {
            score -= switch_weight * (q - pq).abs();
        }
        prev_q = Some(q);
    }
    Ok(score)
}

/// Fraction of sessions that watched a bounded video to the end.
pub fn completion_rate(traces: &[SessionTrace], manifest: &VideoManifest) -> Result<f64> {
    if manifest.num_segments == 0 {
        return Err(Error::UnboundedVideo("completion_rate".into()));
    }
    if traces.is_empty() {
        return Err(Error::EmptyInput("no sessions".into()));
    }
    let done = traces.iter().filter(|t| t.completed(manifest)).count();
    Ok(done as f64 / traces.len() as f64)
}

/// Fraction of stall events followed by an exit at the same or the next
/// segment. `None` when the sessions contain no stall events.
pub fn stall_exit_rate(traces: &[SessionTrace]) -> Option<f64> {
    let mut stalls = 0usize;
    let mut fatal = 0usize;
    for trace in traces {
        for (i, out) in trace.outcomes.iter().enumerate() {
            if out.stall_time_s > 0.0 {
                stalls += 1;
                if let Some(e) = trace.exited_at {
                    if e == i || e == i + 1 {
                        fatal += 1;
                    }
                }
            }
        }
    }
    (stalls > 0).then(|| fatal as f64 / stalls as f64)
}

/// Pearson correlation; `None` when either series is degenerate.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::QualityLevel;

    fn manifest(n_levels: usize, num_segments: u32) -> VideoManifest {
        VideoManifest {
            segment_length_s: 1.0,
            num_segments,
            levels: (0..n_levels)
                .map(|i| QualityLevel {
                    bitrate_kbps: 1000 * (i as u32 + 1),
                    quality_value: (i + 1) as f64,
                    segment_size_mbit: (i + 1) as f64,
                })
                .collect(),
        }
    }

    fn outcome(level: usize, stall: f64) -> SegmentOutcome {
        SegmentOutcome {
            level_index: level,
            download_time_s: 0.5,
            stall_time_s: stall,
            wait_time_s: 0.0,
            buffer_after_s: 5.0,
            throughput_kbps: 3000.0,
        }
    }

    fn trace(levels_stalls: &[(usize, f64)], exited_at: Option<usize>) -> SessionTrace {
        let outcomes = levels_stalls.iter().map(|&(l, s)| outcome(l, s)).collect();
        let cause = if exited_at.is_some() {
            ExitCause::Stall
        } else {
            ExitCause::None
        };
        SessionTrace::new("u", outcomes, exited_at, cause, 1.0)
    }

    #[test]
    fn constant_quality_score() {
        let m = manifest(3, 0);
        let t = trace(&[(2, 0.0), (2, 0.0), (2, 0.0)], None);
        assert_eq!(qoe_lin(&t, &m, 4.0, 1.0).unwrap(), 9.0);
    }

    #[test]
    fn stall_and_switch_penalties() {
        let m = manifest(3, 0);
        let t = trace(&[(1, 0.0), (2, 1.5)], None);
        // 2 + 3 - 3*1.5 - |3-2| = -0.5
        assert_eq!(qoe_lin(&t, &m, 3.0, 1.0).unwrap(), -0.5);
    }

    #[test]
    fn stall_weight_at_max_quality_convention() {
        let m = manifest(4, 0);
        let mu = m.max_quality_value();
        assert_eq!(mu, 4.0);
        let t = trace(&[(3, 1.0)], None);
        assert_eq!(qoe_lin(&t, &m, mu, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn completion_rate_bounds() {
        let m = manifest(3, 2);
        let all = vec![trace(&[(0, 0.0), (0, 0.0)], None); 4];
        assert_eq!(completion_rate(&all, &m).unwrap(), 1.0);
        let none = vec![trace(&[(0, 0.0)], Some(0)); 4];
        assert_eq!(completion_rate(&none, &m).unwrap(), 0.0);
    }

    #[test]
    fn completion_rate_fractional() {
        let m = manifest(3, 2);
        let mut traces = vec![trace(&[(0, 0.0)], Some(0)); 37];
        traces.extend(vec![trace(&[(0, 0.0), (0, 0.0)], None); 3]);
        let r = completion_rate(&traces, &m).unwrap();
        assert!((r - 0.075).abs() < 1e-12);
    }

    #[test]
    fn completion_rate_requires_bounded_video() {
        let m = manifest(3, 0);
        assert!(matches!(
            completion_rate(&[trace(&[(0, 0.0)], None)], &m),
            Err(Error::UnboundedVideo(_))
        ));
    }

    #[test]
    fn stall_exit_rate_counts_same_and_next_segment() {
        // 10 stalls total; 3 sessions exit on the stall segment, 1 exits on
        // the segment after a stall
        let mut traces = Vec::new();
        for _ in 0..3 {
            traces.push(trace(&[(0, 1.0)], Some(0)));
        }
        traces.push(trace(&[(0, 1.0), (0, 0.0)], Some(1)));
        for _ in 0..6 {
            traces.push(trace(&[(0, 1.0), (0, 0.0), (0, 0.0)], None));
        }
        assert_eq!(stall_exit_rate(&traces), Some(0.4));
    }

    #[test]
    fn stall_exit_rate_trivial_cases() {
        let all_exit = vec![trace(&[(0, 1.0)], Some(0)); 3];
        assert_eq!(stall_exit_rate(&all_exit), Some(1.0));
        let no_exit = vec![trace(&[(0, 1.0), (0, 0.0)], None); 3];
        assert_eq!(stall_exit_rate(&no_exit), Some(0.0));
        let no_stalls = vec![trace(&[(0, 0.0)], None); 3];
        assert_eq!(stall_exit_rate(&no_stalls), None);
    }

    #[test]
    fn pearson_matches_hand_arithmetic() {
        // hand-computed on a 4-point set
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 1.0, 4.0, 3.0];
        // means 2.5; cov sum = 1.5+0+0.5+1.5... compute directly:
        // (−1.5)(−0.5)+(−0.5)(−1.5)+(0.5)(1.5)+(1.5)(0.5) = 3.0
        // sxx = syy = 5.0 → r = 3/5 = 0.6
        let r = pearson(&xs, &ys).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
    }
}
