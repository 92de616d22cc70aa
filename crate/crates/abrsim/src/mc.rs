//! Monte Carlo estimation of the exit rate a candidate parameter vector
//! would induce, plus the two pruning rules used online.
//!
//! Each rollout forks the live session state, draws bandwidth from the
//! fitted model, lets the ABR run with the candidate parameters, and asks
//! the exit predictor for a per-segment exit probability. The estimate is
//! total exits over total segments watched across rollouts. The exit draw
//! happens at the top of each iteration and the segment still counts as
//! watched, so a predictor pinned at 1 yields exactly 1.0.

use serde::{Deserialize, Serialize};

use crate::abr::Abr;
use crate::bandwidth::BandwidthModel;
use crate::error::Result;
use crate::manifest::VideoManifest;
use crate::params::QoeParams;
use crate::player::{self, PlayerEnv};
use crate::predictor::{ExitPredictor, UserState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of rollouts per evaluation.
    pub samples: usize,
    /// Max simulated playback seconds per rollout.
    pub t_sample_s: f64,
    pub seed: u64,
    pub prune_enabled: bool,
}

impl McConfig {
    pub fn new(samples: usize, t_sample_s: f64, seed: u64) -> Self {
        McConfig {
            samples,
            t_sample_s,
            seed,
            prune_enabled: false,
        }
    }
}

/// Result of one candidate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub exit_rate: f64,
    pub exited: u64,
    pub watched: u64,
    /// True when evaluation stopped early under the pruning rule.
    pub pruned: bool,
}

/// Early-termination check between rollouts: prune when the partial rate
/// minus one standard error already exceeds the best (lowest) exit rate
/// seen for other candidates. Conservative: a pruned candidate is
/// statistically unable to become the new incumbent.
pub fn prune_early(exited: u64, watched: u64, _remaining_budget: u64, best_exit_rate: f64) -> bool {
    if watched == 0 || !best_exit_rate.is_finite() {
        return false;
    }
    let rate = exited as f64 / watched as f64;
    let se = (rate * (1.0 - rate) / watched as f64).sqrt();
    rate - se > best_exit_rate
}

/// Pre-play check: when the bandwidth model sits three standard deviations
/// above the top ladder bitrate, stalls are negligible and tuning is
/// skipped entirely.
pub fn prune_preplay(model: &BandwidthModel, manifest: &VideoManifest) -> bool {
    model.mean_kbps - 3.0 * model.stddev_kbps > manifest.max_bitrate_kbps() as f64
}

/// Estimate the exit rate induced by `candidate` from the current session
/// state. Deterministic per `cfg.seed`; rollout substreams are independent
/// of pruning decisions. `best_exit_rate` feeds the pruning rule (pass
/// `f64::INFINITY` for the first candidate).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_parameters(
    candidate: &QoeParams,
    model: &BandwidthModel,
    state: &UserState,
    env: &PlayerEnv,
    predictor: &dyn ExitPredictor,
    abr_template: &Abr,
    manifest: &VideoManifest,
    cfg: &McConfig,
    best_exit_rate: f64,
) -> Result<McEstimate> {
    let mut exited = 0u64;
    let mut watched = 0u64;
    let mut pruned = false;
    let segment_len = manifest.segment_length_s;
    let segments_per_rollout = (cfg.t_sample_s / segment_len).ceil() as u64;
    let total_budget = segments_per_rollout * cfg.samples as u64;

    for m in 0..cfg.samples {
        let mut rollout_rng = rng::substream(cfg.seed, &[rng::tags::ROLLOUT, m as u64]);
        let mut sim_state = state.clone();
        let mut sim_env = *env;
        let mut abr = abr_template.clone();
        abr.update_params(*candidate)?;
        let mut t = 0.0;
        let mut has_exited = false;

        while t < cfg.t_sample_s && !has_exited {
            let p_exit = predictor.predict(&sim_state);
            if rand::Rng::gen::<f64>(&mut rollout_rng) < p_exit {
                exited += 1;
                has_exited = true;
            }
            let c_kbps = model.sample(&mut rollout_rng);
            let level = abr.select(manifest, &sim_env)?;
            let (next_env, out) = player::step(&sim_env, manifest, level, c_kbps)?;
            abr.observe(out.throughput_kbps);
            let switched = sim_env.last_level.map(|l| l != level).unwrap_or(false);
            sim_state.observe_segment(
                level,
                manifest.level(level)?.bitrate_kbps as f64,
                out.throughput_kbps,
                out.stall_time_s,
                switched,
                segment_len,
            );
            sim_env = next_env;
            t += segment_len;
            watched += 1;
        }

        if cfg.prune_enabled {
            let remaining = total_budget.saturating_sub(watched);
            if prune_early(exited, watched, remaining, best_exit_rate) {
                pruned = true;
                break;
            }
        }
    }

    Ok(McEstimate {
        exit_rate: exited as f64 / watched.max(1) as f64,
        exited,
        watched,
        pruned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abr::{Abr, AbrConfig};
    use crate::predictor::ConstantPredictor;

    fn setup() -> (VideoManifest, BandwidthModel, UserState, PlayerEnv, Abr) {
        let manifest = VideoManifest::default_ladder(0);
        let model = BandwidthModel {
            mean_kbps: 4000.0,
            stddev_kbps: 400.0,
            window: 8,
        };
        let state = UserState::new();
        let env = PlayerEnv::new(10.0);
        let abr = Abr::new(AbrConfig::hyb(), QoeParams::Hyb { beta: 0.6 }).unwrap();
        (manifest, model, state, env, abr)
    }

    #[test]
    fn zero_predictor_yields_zero() {
        let (manifest, model, state, env, abr) = setup();
        let cfg = McConfig::new(8, 12.0, 1);
        let est = evaluate_parameters(
            &QoeParams::Hyb { beta: 0.6 },
            &model,
            &state,
            &env,
            &ConstantPredictor(0.0),
            &abr,
            &manifest,
            &cfg,
            f64::INFINITY,
        )
        .unwrap();
        assert_eq!(est.exit_rate, 0.0);
        assert_eq!(est.watched, 8 * 12);
    }

    #[test]
    fn certain_predictor_yields_one() {
        let (manifest, model, state, env, abr) = setup();
        let cfg = McConfig::new(8, 12.0, 1);
        let est = evaluate_parameters(
            &QoeParams::Hyb { beta: 0.6 },
            &model,
            &state,
            &env,
            &ConstantPredictor(1.0),
            &abr,
            &manifest,
            &cfg,
            f64::INFINITY,
        )
        .unwrap();
        // every rollout exits on its first segment, which still counts
        assert_eq!(est.exit_rate, 1.0);
        assert_eq!(est.watched, 8);
    }

    #[test]
    fn estimates_are_deterministic_per_seed() {
        let (manifest, model, state, env, abr) = setup();
        let cfg = McConfig::new(16, 20.0, 42);
        let run = || {
            evaluate_parameters(
                &QoeParams::Hyb { beta: 0.6 },
                &model,
                &state,
                &env,
                &ConstantPredictor(0.08),
                &abr,
                &manifest,
                &cfg,
                f64::INFINITY,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prune_early_rule() {
        // best 0.5, partial rate 0.9 after half the budget
        assert!(prune_early(90, 100, 100, 0.5));
        // first candidate: nothing to compare against
        assert!(!prune_early(90, 100, 100, f64::INFINITY));
        // partial rate zero can never prune
        assert!(!prune_early(0, 100, 100, 0.2));
        // no data yet
        assert!(!prune_early(0, 0, 200, 0.2));
    }

    #[test]
    fn prune_preplay_inequality() {
        let manifest = VideoManifest::default_ladder(0); // Q_max 5000
        let m = |mean: f64, sd: f64| BandwidthModel {
            mean_kbps: mean,
            stddev_kbps: sd,
            window: 8,
        };
        assert!(prune_preplay(&m(10_000.0, 500.0), &manifest)); // 8500 > 5000
        assert!(!prune_preplay(&m(6_000.0, 500.0), &manifest)); // 4500 < 5000
        assert!(!prune_preplay(&m(5_000.0, 0.0), &manifest)); // strict
    }
}
