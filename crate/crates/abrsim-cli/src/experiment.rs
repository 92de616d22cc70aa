//! The experiment runner: every (user, trace, seed) cell simulates a
//! viewing day of consecutive sessions with persistent user state.

use std::path::Path;

use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use abrsim::abr::Abr;
use abrsim::bandwidth::BandwidthTrace;
use abrsim::manifest::VideoManifest;
use abrsim::mc::McConfig;
use abrsim::metrics::{completion_rate, qoe_lin, stall_exit_rate, SessionTrace};
use abrsim::obo::session::{run_session, SessionConfig, TuningMode};
use abrsim::params::QoeParams;
use abrsim::predictor::{ConstantPredictor, ExitPredictor, PredictorArtifact, UserState};
use abrsim::rng;

use crate::config::{CellUser, ExperimentConfig, ModeSpec};

pub const RESULTS_HEADER: [&str; 10] = [
    "mode",
    "abr",
    "user_id",
    "trace_id",
    "seed",
    "completion",
    "qoe_lin",
    "total_stall_s",
    "stall_exit_rate",
    "final_param_json",
];

pub const OBO_TRACE_HEADER: [&str; 6] = [
    "user_id",
    "invocation",
    "trial",
    "param_json",
    "estimated_exit_rate",
    "is_best",
];

/// One row of the results CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub mode: String,
    pub abr: String,
    pub user_id: String,
    pub trace_id: usize,
    pub seed: u64,
    pub completion: f64,
    pub qoe_lin: f64,
    pub total_stall_s: f64,
    pub stall_exit_rate: Option<f64>,
    pub final_param_json: String,
}

/// One row of the tuning trace CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OboTraceRow {
    pub user_id: String,
    pub invocation: u64,
    pub trial: usize,
    pub param_json: String,
    pub estimated_exit_rate: f64,
    pub is_best: bool,
}

/// Per (user, seed) stall bookkeeping feeding the correlation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserDayStats {
    pub user_id: String,
    pub seed: u64,
    pub stall_events: u64,
    /// Stalls followed by an exit at the same or next segment.
    pub fatal_stalls: u64,
    /// Mean stall knob over applied tuning choices (default when none).
    pub mean_selected_knob: f64,
    pub invocations: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub results: Vec<ResultRow>,
    pub obo_rows: Vec<OboTraceRow>,
    pub day_stats: Vec<UserDayStats>,
}

struct CellOutcome {
    row: ResultRow,
    invocation_trials: Vec<(QoeParams, Vec<abrsim::obo::TrialRecord>)>,
    stats: CellStallStats,
}

struct CellStallStats {
    stall_events: u64,
    fatal_stalls: u64,
    selected_knobs: Vec<f64>,
}

/// Run the configured mode over the full (user, trace, seed) lattice.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let manifest = cfg.load_manifest()?;
    let traces = cfg.load_traces()?;
    let users = cfg.load_users(manifest.num_levels());
    let predictor = load_predictor(cfg)?;
    run_mode(cfg, &cfg.mode, &manifest, &traces, &users, predictor.as_ref())
}

pub fn load_predictor(cfg: &ExperimentConfig) -> Result<Box<dyn ExitPredictor>> {
    match &cfg.model_path {
        Some(path) => {
            let artifact =
                PredictorArtifact::load(path).map_err(|e| anyhow!("loading model: {e}"))?;
            Ok(Box::new(artifact.predictor))
        }
        // fixed mode never consults the predictor
        None => Ok(Box::new(ConstantPredictor(0.0))),
    }
}

/// Run one tuning mode against shared inputs (the sweep command reuses
/// loaded inputs across modes).
pub fn run_mode(
    cfg: &ExperimentConfig,
    mode: &ModeSpec,
    manifest: &VideoManifest,
    traces: &[BandwidthTrace],
    users: &[CellUser],
    predictor: &dyn ExitPredictor,
) -> Result<ExperimentOutput> {
    let video_span = manifest
        .duration_s()
        .ok_or_else(|| anyhow!("experiments need a bounded video"))?;

    let cells: Vec<(usize, usize, u64)> = (0..users.len())
        .flat_map(|u| {
            (0..traces.len()).flat_map(move |t| cfg.seeds.iter().map(move |&s| (u, t, s)))
        })
        .collect();

    let outcomes: Vec<Result<CellOutcome>> = cells
        .par_iter()
        .map(|&(u, t, seed)| {
            run_cell(cfg, mode, manifest, &traces[t], &users[u], t, seed, video_span, predictor)
                .with_context(|| {
                    format!(
                        "cell user={} trace={t} seed={seed} mode={}",
                        users[u].id(),
                        mode.label()
                    )
                })
        })
        .collect();

    let mut output = ExperimentOutput::default();
    let mut invocation_counters: std::collections::HashMap<String, u64> =
        std::collections::HashMap::new();
    for outcome in outcomes {
        let cell = outcome?;
        let user_id = cell.row.user_id.clone();
        let seed = cell.row.seed;
        for (_chosen, trials) in &cell.invocation_trials {
            let counter = invocation_counters.entry(user_id.clone()).or_insert(0);
            let invocation = *counter;
            *counter += 1;
            for (trial_idx, trial) in trials.iter().enumerate() {
                output.obo_rows.push(OboTraceRow {
                    user_id: user_id.clone(),
                    invocation,
                    trial: trial_idx,
                    param_json: trial.params.to_json(),
                    estimated_exit_rate: trial.exit_rate,
                    is_best: trial.is_best,
                });
            }
        }
        let knobs = &cell.stats.selected_knobs;
        let mean_knob = if knobs.is_empty() {
            cfg.default_params.stall_knob()
        } else {
            knobs.iter().sum::<f64>() / knobs.len() as f64
        };
        output.day_stats.push(UserDayStats {
            user_id,
            seed,
            stall_events: cell.stats.stall_events,
            fatal_stalls: cell.stats.fatal_stalls,
            mean_selected_knob: mean_knob,
            invocations: cell.invocation_trials.len() as u64,
        });
        output.results.push(cell.row);
    }
    // merge same-user day stats across traces within a seed
    output.day_stats = merge_day_stats(output.day_stats, cfg.default_params.stall_knob());
    Ok(output)
}

fn merge_day_stats(stats: Vec<UserDayStats>, default_knob: f64) -> Vec<UserDayStats> {
    use std::collections::BTreeMap;
    let mut merged: BTreeMap<(String, u64), (u64, u64, Vec<f64>, u64)> = BTreeMap::new();
    for s in stats {
        let e = merged
            .entry((s.user_id, s.seed))
            .or_insert((0, 0, Vec::new(), 0));
        e.0 += s.stall_events;
        e.1 += s.fatal_stalls;
        if s.invocations > 0 {
            e.2.push(s.mean_selected_knob);
        }
        e.3 += s.invocations;
    }
    merged
        .into_iter()
        .map(
            |((user_id, seed), (stall_events, fatal_stalls, knobs, invocations))| UserDayStats {
                user_id,
                seed,
                stall_events,
                fatal_stalls,
                mean_selected_knob: if knobs.is_empty() {
                    default_knob
                } else {
                    knobs.iter().sum::<f64>() / knobs.len() as f64
                },
                invocations,
            },
        )
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    mode: &ModeSpec,
    manifest: &VideoManifest,
    trace: &BandwidthTrace,
    user: &CellUser,
    trace_id: usize,
    seed: u64,
    video_span: f64,
    predictor: &dyn ExitPredictor,
) -> Result<CellOutcome> {
    let (tuning, start_params) = match mode {
        ModeSpec::Fixed { params } => (TuningMode::Off, *params),
        ModeSpec::LingxiFixed { candidates } => (
            TuningMode::FixedCandidates {
                candidates: candidates.clone(),
            },
            cfg.default_params,
        ),
        ModeSpec::LingxiBayes => (TuningMode::Bayes, cfg.default_params),
    };
    let session_cfg = SessionConfig {
        tuning,
        obo: cfg.obo.to_config(),
        mc: McConfig {
            samples: cfg.mc.samples,
            t_sample_s: cfg.mc.t_sample_s,
            seed: 0, // overridden per trial inside the session
            prune_enabled: cfg.mc.prune_enabled,
        },
        search_box: cfg.search_box_or_default(),
        bw_fit_window: cfg.bw_fit_window,
        max_invocations_per_session: cfg.max_invocations_per_session,
        rtt_s: cfg.rtt_s,
        b_max_rule: cfg.b_max_rule,
        preplay_prune_enabled: true,
    };

    let user_index = cell_user_index(user);
    let cell_seed = rng::derive_seed(seed, &[rng::tags::USER, user_index, rng::tags::TRACE, trace_id as u64]);

    let mut abr = Abr::new(cfg.abr_config(), start_params).map_err(|e| anyhow!("{e}"))?;
    let mut state = UserState::new();
    let mut sessions: Vec<SessionTrace> = Vec::with_capacity(cfg.sessions_per_cell);
    let mut invocation_trials = Vec::new();
    let mut selected_knobs = Vec::new();

    for s in 0..cfg.sessions_per_cell {
        let session_seed = rng::derive_seed(cell_seed, &[rng::tags::SESSION, s as u64]);
        let offset = s as f64 * (video_span + 7.0);
        let result = run_session(
            &user.id(),
            manifest,
            trace,
            offset,
            &mut abr,
            predictor,
            user.model(),
            &mut state,
            &session_cfg,
            session_seed,
        )
        .map_err(|e| anyhow!("{e}"))?;
        for inv in &result.invocations {
            selected_knobs.push(inv.chosen.stall_knob());
            invocation_trials.push((inv.chosen, inv.trials.clone()));
        }
        sessions.push(result.trace);
    }

    let completion = completion_rate(&sessions, manifest).map_err(|e| anyhow!("{e}"))?;
    let mu = manifest.max_quality_value();
    let mut qoe_sum = 0.0;
    for t in &sessions {
        qoe_sum += qoe_lin(t, manifest, mu, 1.0).map_err(|e| anyhow!("{e}"))?;
    }
    let total_stall: f64 = sessions.iter().map(|t| t.total_stall_s()).sum();
    let stall_events: u64 = sessions.iter().map(|t| t.stall_count() as u64).sum();
    let fatal = count_fatal_stalls(&sessions);

    let row = ResultRow {
        mode: mode.label().to_string(),
        abr: format!("{:?}", cfg.abr).to_lowercase(),
        user_id: user.id(),
        trace_id,
        seed,
        completion,
        qoe_lin: qoe_sum / sessions.len() as f64,
        total_stall_s: total_stall,
        stall_exit_rate: stall_exit_rate(&sessions),
        final_param_json: abr.params().to_json(),
    };
    Ok(CellOutcome {
        row,
        invocation_trials,
        stats: CellStallStats {
            stall_events,
            fatal_stalls: fatal,
            selected_knobs,
        },
    })
}

fn count_fatal_stalls(sessions: &[SessionTrace]) -> u64 {
    let mut fatal = 0;
    for t in sessions {
        for (i, out) in t.outcomes.iter().enumerate() {
            if out.stall_time_s > 0.0 {
                if let Some(e) = t.exited_at {
                    if e == i || e == i + 1 {
                        fatal += 1;
                    }
                }
            }
        }
    }
    fatal
}

/// Stable numeric index for seed derivation (rule users by grid position,
/// hazard users by their numeric suffix).
fn cell_user_index(user: &CellUser) -> u64 {
    match user {
        CellUser::Rule(u) => {
            (u.stall_time_threshold_s as u64 - 2) * 8 + (u.stall_count_threshold as u64 - 2)
        }
        CellUser::Hazard(u) => u
            .id
            .rsplit('_')
            .next()
            .and_then(|s| s.parse().ok())
            .unwrap_or(0),
    }
}

pub fn write_results_csv(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.mode.clone(),
            r.abr.clone(),
            r.user_id.clone(),
            r.trace_id.to_string(),
            r.seed.to_string(),
            format!("{:.6}", r.completion),
            format!("{:.6}", r.qoe_lin),
            format!("{:.6}", r.total_stall_s),
            r.stall_exit_rate
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default(),
            r.final_param_json.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let get = |i: usize| r.get(i).unwrap_or_default().to_string();
        rows.push(ResultRow {
            mode: get(0),
            abr: get(1),
            user_id: get(2),
            trace_id: get(3).parse()?,
            seed: get(4).parse()?,
            completion: get(5).parse()?,
            qoe_lin: get(6).parse()?,
            total_stall_s: get(7).parse()?,
            stall_exit_rate: {
                let s = get(8);
                if s.is_empty() {
                    None
                } else {
                    Some(s.parse()?)
                }
            },
            final_param_json: get(9),
        });
    }
    Ok(rows)
}

pub fn write_obo_csv(rows: &[OboTraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(OBO_TRACE_HEADER)?;
    for r in rows {
        w.write_record([
            r.user_id.clone(),
            r.invocation.to_string(),
            r.trial.to_string(),
            r.param_json.clone(),
            format!("{:.6}", r.estimated_exit_rate),
            (r.is_best as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_day_stats_csv(rows: &[UserDayStats], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "user_id",
        "seed",
        "stall_events",
        "fatal_stalls",
        "mean_selected_knob",
        "invocations",
    ])?;
    for r in rows {
        w.write_record([
            r.user_id.clone(),
            r.seed.to_string(),
            r.stall_events.to_string(),
            r.fatal_stalls.to_string(),
            format!("{:.6}", r.mean_selected_knob),
            r.invocations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_day_stats_csv(path: impl AsRef<Path>) -> Result<Vec<UserDayStats>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let r = record?;
        let get = |i: usize| r.get(i).unwrap_or_default().to_string();
        rows.push(UserDayStats {
            user_id: get(0),
            seed: get(1).parse()?,
            stall_events: get(2).parse()?,
            fatal_stalls: get(3).parse()?,
            mean_selected_knob: get(4).parse()?,
            invocations: get(5).parse()?,
        });
    }
    Ok(rows)
}
