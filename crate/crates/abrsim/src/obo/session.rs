//! The streaming session loop with online tuning.
//!
//! The session plays segments under the current parameters. Once the user's
//! stall count for the day exceeds the trigger threshold, the tuner runs up
//! to `trials` Monte Carlo evaluations against the fitted bandwidth model
//! and applies the argmin parameters to the ABR. The incumbent parameter
//! vector persists across invocations; its objective value does not.

use serde::{Deserialize, Serialize};

use crate::abr::Abr;
use crate::bandwidth::{fit_bandwidth_model, BandwidthTrace};
use crate::error::{Error, Result};
use crate::manifest::VideoManifest;
use crate::mc::{self, McConfig};
use crate::metrics::SessionTrace;
use crate::obo::{optimize, ObjectiveSample, OboConfig, TrialRecord};
use crate::params::{ParamBox, QoeParams};
use crate::player::{self, BMaxRule, PlayerEnv};
use crate::predictor::{ExitPredictor, UserState};
use crate::rng;
use crate::user::{EngagementModel, SegmentContext, SessionStallState};

/// How parameters are chosen when the trigger fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TuningMode {
    /// Parameters never change.
    Off,
    /// Evaluate a fixed candidate list, apply the argmin.
    FixedCandidates { candidates: Vec<QoeParams> },
    /// Surrogate-guided search over the box.
    Bayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub tuning: TuningMode,
    pub obo: OboConfig,
    pub mc: McConfig,
    pub search_box: ParamBox,
    /// Trailing window for fitting the bandwidth model.
    pub bw_fit_window: usize,
    pub max_invocations_per_session: usize,
    pub rtt_s: f64,
    pub b_max_rule: BMaxRule,
    /// Skip tuning when bandwidth is three sigma above the top rung.
    pub preplay_prune_enabled: bool,
}

impl SessionConfig {
    pub fn no_tuning() -> Self {
        SessionConfig {
            tuning: TuningMode::Off,
            obo: OboConfig::default(),
            mc: McConfig::new(8, 12.0, 0),
            search_box: ParamBox::default_hyb(),
            bw_fit_window: 8,
            max_invocations_per_session: 1,
            rtt_s: 0.0,
            b_max_rule: BMaxRule::default(),
            preplay_prune_enabled: true,
        }
    }
}

/// One tuning invocation within a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationRecord {
    /// Segment index at which tuning ran.
    pub at_segment: usize,
    pub chosen: QoeParams,
    pub trials: Vec<TrialRecord>,
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub trace: SessionTrace,
    pub invocations: Vec<InvocationRecord>,
    /// Sessions skipped entirely by the pre-play prune would have tuned.
    pub preplay_pruned: bool,
    pub final_params: QoeParams,
}

/// Play one bounded video session, tuning parameters when triggered.
///
/// `day_offset_s` positions the session on the bandwidth trace so
/// consecutive sessions see fresh conditions. The user's day stall count
/// (carried in `state`) feeds the trigger.
#[allow(clippy::too_many_arguments)]
pub fn run_session(
    user_id: &str,
    manifest: &VideoManifest,
    bw: &BandwidthTrace,
    day_offset_s: f64,
    abr: &mut Abr,
    predictor: &dyn ExitPredictor,
    user: &dyn EngagementModel,
    state: &mut UserState,
    cfg: &SessionConfig,
    session_seed: u64,
) -> Result<SessionResult> {
    if manifest.num_segments == 0 {
        return Err(Error::UnboundedVideo("run_session".into()));
    }
    let segment_len = manifest.segment_length_s;
    let b_max = initial_b_max(cfg, state);
    let mut env = PlayerEnv::new(b_max);
    env.rtt_s = cfg.rtt_s;

    let mut exit_rng = rng::substream(session_seed, &[rng::tags::EXIT]);
    let mut outcomes = Vec::with_capacity(manifest.num_segments as usize);
    let mut exited_at = None;
    let mut exit_cause = crate::metrics::ExitCause::None;
    let mut session_stalls = SessionStallState::default();
    let mut invocations: Vec<InvocationRecord> = Vec::new();
    let mut preplay_pruned = false;

    for k in 0..manifest.num_segments as usize {
        let level = abr.select(manifest, &env)?;
        let c_kbps = bw.throughput_at(day_offset_s + env.clock_s);
        let (next_env, out) = player::step(&env, manifest, level, c_kbps)?;
        abr.observe(out.throughput_kbps);
        let switched = env.last_level.map(|l| l != level).unwrap_or(false);
        state.observe_segment(
            level,
            manifest.level(level)?.bitrate_kbps as f64,
            out.throughput_kbps,
            out.stall_time_s,
            switched,
            segment_len,
        );
        env = next_env;
        outcomes.push(out);
        if out.stall_time_s > 0.0 {
            session_stalls.cumulative_stall_s += out.stall_time_s;
            session_stalls.stall_count += 1;
        }

        let ctx = SegmentContext {
            level,
            switched,
            stall_time_s: out.stall_time_s,
        };
        if let Some(cause) = user.decide_exit(&session_stalls, &ctx, &mut exit_rng) {
            state.observe_exit(cause == crate::metrics::ExitCause::Stall);
            exited_at = Some(k);
            exit_cause = cause;
            break;
        }

        // trigger: a stall just happened and the day's count exceeds eta
        let should_tune = !matches!(cfg.tuning, TuningMode::Off)
            && out.stall_time_s > 0.0
            && state.day_stall_count > cfg.obo.eta
            && invocations.len() < cfg.max_invocations_per_session;
        if should_tune {
            let recent = state.recent_throughputs();
            if recent.len() < 2 {
                continue;
            }
            let model = fit_bandwidth_model(&recent, cfg.bw_fit_window)?;
            if cfg.preplay_prune_enabled && mc::prune_preplay(&model, manifest) {
                preplay_pruned = true;
                continue;
            }
            let invocation_idx = invocations.len() as u64;
            let chosen = match &cfg.tuning {
                TuningMode::Off => unreachable!(),
                TuningMode::FixedCandidates { candidates } => evaluate_fixed(
                    candidates,
                    &model,
                    state,
                    &env,
                    predictor,
                    abr,
                    manifest,
                    cfg,
                    session_seed,
                    invocation_idx,
                )?,
                TuningMode::Bayes => {
                    let abr_template = abr.clone();
                    let state_snapshot = state.clone();
                    let env_snapshot = env;
                    let incumbent = abr.params();
                    let stream_seed =
                        rng::derive_seed(session_seed, &[rng::tags::TRIAL, invocation_idx]);
                    let outcome = optimize(
                        &cfg.search_box,
                        Some(incumbent),
                        &cfg.obo,
                        stream_seed,
                        |trial, candidate, best| {
                            let mc_cfg = McConfig {
                                seed: rng::derive_seed(
                                    session_seed,
                                    &[rng::tags::TRIAL, invocation_idx, trial as u64],
                                ),
                                ..cfg.mc
                            };
                            let est = mc::evaluate_parameters(
                                candidate,
                                &model,
                                &state_snapshot,
                                &env_snapshot,
                                predictor,
                                &abr_template,
                                manifest,
                                &mc_cfg,
                                best,
                            )?;
                            Ok(ObjectiveSample {
                                value: est.exit_rate,
                                pruned: est.pruned,
                            })
                        },
                    )?;
                    invocations.push(InvocationRecord {
                        at_segment: k,
                        chosen: outcome.best,
                        trials: outcome.trials,
                    });
                    abr.update_params(outcome.best)?;
                    continue;
                }
            };
            // fixed-candidate bookkeeping happens in evaluate_fixed, which
            // returns the argmin and leaves a record via this push
            let (params, trials) = chosen;
            invocations.push(InvocationRecord {
                at_segment: k,
                chosen: params,
                trials,
            });
            abr.update_params(params)?;
        }
    }

    let trace = SessionTrace::new(user_id, outcomes, exited_at, exit_cause, segment_len);
    Ok(SessionResult {
        trace,
        invocations,
        preplay_pruned,
        final_params: abr.params(),
    })
}

type FixedChoice = (QoeParams, Vec<TrialRecord>);

#[allow(clippy::too_many_arguments)]
fn evaluate_fixed(
    candidates: &[QoeParams],
    model: &crate::bandwidth::BandwidthModel,
    state: &UserState,
    env: &PlayerEnv,
    predictor: &dyn ExitPredictor,
    abr: &Abr,
    manifest: &VideoManifest,
    cfg: &SessionConfig,
    session_seed: u64,
    invocation_idx: u64,
) -> Result<FixedChoice> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("fixed candidate list".into()));
    }
    let mut best_value = f64::INFINITY;
    let mut best = candidates[0];
    let mut trials = Vec::with_capacity(candidates.len());
    for (trial, candidate) in candidates.iter().enumerate() {
        let mc_cfg = McConfig {
            seed: rng::derive_seed(
                session_seed,
                &[rng::tags::TRIAL, invocation_idx, trial as u64],
            ),
            ..cfg.mc
        };
        let est = mc::evaluate_parameters(
            candidate, model, state, env, predictor, abr, manifest, &mc_cfg, best_value,
        )?;
        let is_best = est.exit_rate < best_value;
        if is_best {
            best_value = est.exit_rate;
            best = *candidate;
        }
        trials.push(TrialRecord {
            params: *candidate,
            exit_rate: est.exit_rate,
            is_best,
            pruned: est.pruned,
        });
    }
    Ok((best, trials))
}

fn initial_b_max(cfg: &SessionConfig, state: &UserState) -> f64 {
    match cfg.b_max_rule {
        BMaxRule::Constant { seconds } => seconds,
        rule @ BMaxRule::AffineInMean { base_s, .. } => {
            let recent = state.recent_throughputs();
            match fit_bandwidth_model(&recent, cfg.bw_fit_window) {
                Ok(model) => rule.b_max(&model),
                Err(_) => base_s,
            }
        }
    }
}
