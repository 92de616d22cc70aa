//! Synthetic user engagement: deterministic threshold rules and stochastic
//! hazard users.
//!
//! Rule users drive ground-truth exits in grid studies; hazard users
//! generate training logs and exhibit graded stall sensitivity. Default
//! hazard calibrations keep the effect sizes in a strict hierarchy: quality
//! effects are an order of magnitude below switch effects, which sit an
//! order below stall effects.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ExitCause;

/// Deterministic engagement rule: exit when either stall budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleUser {
    /// Cumulative stall seconds the user tolerates, in [2, 9].
    pub stall_time_threshold_s: u32,
    /// Number of stall events the user tolerates, in [2, 9].
    pub stall_count_threshold: u32,
}

impl RuleUser {
    pub fn new(stall_time_threshold_s: u32, stall_count_threshold: u32) -> Result<Self> {
        for (name, v) in [
            ("stall_time_threshold_s", stall_time_threshold_s),
            ("stall_count_threshold", stall_count_threshold),
        ] {
            if !(2..=9).contains(&v) {
                return Err(Error::InvalidParam(format!("{name} {v} outside [2, 9]")));
            }
        }
        Ok(RuleUser {
            stall_time_threshold_s,
            stall_count_threshold,
        })
    }

    pub fn id(&self) -> String {
        format!(
            "rule_t{}_c{}",
            self.stall_time_threshold_s, self.stall_count_threshold
        )
    }
}

/// True iff the session state trips either rule threshold.
pub fn rule_exit(user: &RuleUser, cumulative_stall_s: f64, stall_count: u32) -> bool {
    cumulative_stall_s >= user.stall_time_threshold_s as f64
        || stall_count >= user.stall_count_threshold
}

/// The full 8x8 grid of rule users, outer loop on the time threshold.
pub fn grid() -> Vec<RuleUser> {
    let mut users = Vec::with_capacity(64);
    for t in 2..=9 {
        for c in 2..=9 {
            users.push(RuleUser::new(t, c).expect("grid thresholds valid"));
        }
    }
    users
}

/// Monotone stall-time response shapes observed across users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum StallResponse {
    /// Probability grows linearly with stall time up to a cap.
    Linear { slope_per_s: f64, cap: f64 },
    /// Low response below the threshold, high at or above it.
    Threshold {
        threshold_s: f64,
        below: f64,
        above: f64,
    },
    /// `cap * (1 - exp(-rate * t))`.
    Saturating { cap: f64, rate_per_s: f64 },
}

impl StallResponse {
    pub fn eval(&self, stall_s: f64) -> f64 {
        if stall_s <= 0.0 {
            return 0.0;
        }
        match *self {
            StallResponse::Linear { slope_per_s, cap } => (slope_per_s * stall_s).min(cap),
            StallResponse::Threshold {
                threshold_s,
                below,
                above,
            } => {
                if stall_s >= threshold_s {
                    above
                } else {
                    below
                }
            }
            StallResponse::Saturating { cap, rate_per_s } => {
                cap * (1.0 - (-rate_per_s * stall_s).exp())
            }
        }
    }

    /// Largest response over the plausible stall range.
    pub fn max_effect(&self) -> f64 {
        self.eval(60.0)
    }
}

/// Stochastic per-segment exit model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardUser {
    pub id: String,
    /// Per-segment exit probability with nothing notable happening.
    pub base_rate: f64,
    /// Signed additive adjustment per quality level.
    pub quality_deltas: Vec<f64>,
    /// Additive probability on segments that switched level.
    pub switch_delta: f64,
    pub stall_response: StallResponse,
}

impl HazardUser {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.base_rate) {
            return Err(Error::InvalidParam("base_rate outside [0, 1]".into()));
        }
        let probe = [0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0];
        let mut prev = -1.0;
        for t in probe {
            let v = self.stall_response.eval(t);
            if v < prev - 1e-12 {
                return Err(Error::InvalidParam(
                    "stall_response must be monotone non-decreasing".into(),
                ));
            }
            prev = v;
        }
        Ok(())
    }
}

/// What the exit models see about the segment just watched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentContext {
    pub level: usize,
    pub switched: bool,
    pub stall_time_s: f64,
}

/// Per-segment exit probability: base plus quality, switch, and stall
/// adjustments, clamped to [0, 1].
pub fn hazard_exit_prob(user: &HazardUser, ctx: &SegmentContext) -> f64 {
    let quality = user
        .quality_deltas
        .get(ctx.level)
        .copied()
        .unwrap_or_else(|| user.quality_deltas.last().copied().unwrap_or(0.0));
    let switch = if ctx.switched { user.switch_delta } else { 0.0 };
    let stall = user.stall_response.eval(ctx.stall_time_s);
    (user.base_rate + quality + switch + stall).clamp(0.0, 1.0)
}

/// Session-cumulative stall state the rule models react to.
#[derive(Debug, Clone, Copy, Default)]
pub struct SessionStallState {
    pub cumulative_stall_s: f64,
    pub stall_count: u32,
}

/// Ground-truth exit behavior driving a simulated session.
pub trait EngagementModel: Send + Sync {
    fn decide_exit(
        &self,
        session: &SessionStallState,
        ctx: &SegmentContext,
        rng: &mut ChaCha8Rng,
    ) -> Option<ExitCause>;
}

impl EngagementModel for RuleUser {
    fn decide_exit(
        &self,
        session: &SessionStallState,
        _ctx: &SegmentContext,
        _rng: &mut ChaCha8Rng,
    ) -> Option<ExitCause> {
        rule_exit(self, session.cumulative_stall_s, session.stall_count).then_some(ExitCause::Stall)
    }
}

impl EngagementModel for HazardUser {
    fn decide_exit(
        &self,
        _session: &SessionStallState,
        ctx: &SegmentContext,
        rng: &mut ChaCha8Rng,
    ) -> Option<ExitCause> {
        let p = hazard_exit_prob(self, ctx);
        if rng.gen::<f64>() < p {
            Some(if ctx.stall_time_s > 0.0 {
                ExitCause::Stall
            } else {
                ExitCause::Random
            })
        } else {
            None
        }
    }
}

/// Never exits; useful for isolating playback dynamics.
pub struct NeverExit;

impl EngagementModel for NeverExit {
    fn decide_exit(
        &self,
        _session: &SessionStallState,
        _ctx: &SegmentContext,
        _rng: &mut ChaCha8Rng,
    ) -> Option<ExitCause> {
        None
    }
}

/// Check the shipped calibration keeps effect magnitudes strictly ordered:
/// quality < switch < stall.
pub fn validate_hierarchy(users: &[HazardUser]) -> Result<()> {
    if users.is_empty() {
        return Err(Error::EmptyInput("no hazard users".into()));
    }
    let max_quality = users
        .iter()
        .flat_map(|u| u.quality_deltas.iter().map(|d| d.abs()))
        .fold(0.0f64, f64::max);
    let max_switch = users
        .iter()
        .map(|u| u.switch_delta.abs())
        .fold(0.0f64, f64::max);
    let max_stall = users
        .iter()
        .map(|u| u.stall_response.max_effect())
        .fold(0.0f64, f64::max);
    if !(max_quality < max_switch && max_switch < max_stall) {
        return Err(Error::InvalidParam(format!(
            "effect hierarchy violated: quality {max_quality}, switch {max_switch}, stall {max_stall}"
        )));
    }
    for u in users {
        u.validate()?;
    }
    Ok(())
}

/// The default synthetic population: threshold-dominated with linear and
/// saturating minorities, spanning low to high stall sensitivity.
pub fn default_hazard_population(count: usize, num_levels: usize, seed: u64) -> Vec<HazardUser> {
    let mut rng = crate::rng::substream(seed, &[crate::rng::tags::USER]);
    (0..count)
        .map(|i| {
            let base_rate = rng.gen_range(0.002..0.005);
            let qsens = rng.gen_range(0.5..1.5);
            let quality_deltas: Vec<f64> = (0..num_levels)
                .map(|l| {
                    let centered = (num_levels as f64 - 1.0) / 2.0 - l as f64;
                    1.0e-3 * qsens * centered / ((num_levels as f64 - 1.0) / 2.0).max(1.0)
                })
                .collect();
            let switch_delta = rng.gen_range(0.008..0.025);
            let shape_draw = rng.gen::<f64>();
            let stall_response = if shape_draw < 0.96 {
                // a sensitive and a tolerant tier, both steep, so exits
                // stay predictable from history
                let tier = [2.5, 4.0][i % 2];
                StallResponse::Threshold {
                    threshold_s: tier,
                    below: rng.gen_range(0.003..0.008),
                    above: rng.gen_range(0.97..0.995),
                }
            } else if shape_draw < 0.98 {
                StallResponse::Linear {
                    slope_per_s: rng.gen_range(0.3..0.45),
                    cap: rng.gen_range(0.85..0.95),
                }
            } else {
                StallResponse::Saturating {
                    cap: rng.gen_range(0.85..0.95),
                    rate_per_s: rng.gen_range(0.6..1.0),
                }
            };
            HazardUser {
                id: format!("hazard_{i:03}"),
                base_rate,
                quality_deltas,
                switch_delta,
                stall_response,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_exit_thresholds() {
        let u = RuleUser::new(5, 3).unwrap();
        assert!(!rule_exit(&u, 4.9, 2));
        assert!(rule_exit(&u, 5.0, 0));
        let strict = RuleUser::new(2, 2).unwrap();
        assert!(rule_exit(&strict, 0.0, 2));
    }

    #[test]
    fn rule_user_rejects_out_of_range() {
        assert!(RuleUser::new(1, 5).is_err());
        assert!(RuleUser::new(5, 10).is_err());
    }

    #[test]
    fn grid_is_the_full_product() {
        let g = grid();
        assert_eq!(g.len(), 64);
        assert_eq!(g[0], RuleUser::new(2, 2).unwrap());
        assert_eq!(g[63], RuleUser::new(9, 9).unwrap());
        let mut seen: Vec<_> = g
            .iter()
            .map(|u| (u.stall_time_threshold_s, u.stall_count_threshold))
            .collect();
        seen.dedup();
        assert_eq!(seen.len(), 64);
    }

    #[test]
    fn hazard_prob_is_additive_and_clamped() {
        let u = HazardUser {
            id: "u".into(),
            base_rate: 0.005,
            quality_deltas: vec![0.001, 0.0, -0.001],
            switch_delta: 0.01,
            stall_response: StallResponse::Linear {
                slope_per_s: 0.5,
                cap: 1.0,
            },
        };
        let quiet = SegmentContext {
            level: 2,
            switched: false,
            stall_time_s: 0.0,
        };
        assert!((hazard_exit_prob(&u, &quiet) - 0.004).abs() < 1e-12);

        let stalled = SegmentContext {
            level: 1,
            switched: false,
            stall_time_s: 3.0,
        };
        // 0.005 + 0 + min(1.5, 1.0) -> clamped at 1.0
        assert_eq!(hazard_exit_prob(&u, &stalled), 1.0);

        let zeroed = HazardUser {
            quality_deltas: vec![0.0; 3],
            switch_delta: 0.0,
            stall_response: StallResponse::Linear {
                slope_per_s: 0.0,
                cap: 0.0,
            },
            ..u
        };
        assert_eq!(hazard_exit_prob(&zeroed, &quiet), 0.005);
    }

    #[test]
    fn stall_responses_are_monotone() {
        let shapes = [
            StallResponse::Linear {
                slope_per_s: 0.2,
                cap: 0.5,
            },
            StallResponse::Threshold {
                threshold_s: 2.0,
                below: 0.02,
                above: 0.9,
            },
            StallResponse::Saturating {
                cap: 0.5,
                rate_per_s: 0.9,
            },
        ];
        for s in shapes {
            let mut prev = -1.0;
            for i in 0..100 {
                let v = s.eval(i as f64 * 0.2);
                assert!(v >= prev);
                prev = v;
            }
        }
    }

    #[test]
    fn default_population_satisfies_hierarchy() {
        let users = default_hazard_population(40, 4, 7);
        validate_hierarchy(&users).unwrap();
    }
}
