use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use abrsim::predictor::{
    build_os_tables, evaluate_rows, train, HybridPredictor, PredictorArtifact, TrainConfig,
};
use abrsim::synth::{
    build_training_rows, read_log_csv, scale_from_logs, sessions_from_logs, stall_label_ratio,
    synthesize_logs, write_log_csv, DatasetKind, SynthConfig,
};
use abrsim_cli::config::{ExperimentConfig, ModeSpec};
use abrsim_cli::experiment::{read_day_stats_csv, read_results_csv, run_experiment};
use abrsim_cli::{reports, run_sweep, write_outputs};

#[derive(Parser)]
#[command(name = "abrsim", about = "Trace-driven ABR simulation and tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeFlag {
    Fixed,
    LingxiFixed,
    LingxiBayes,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetFlag {
    StallOnly,
    StallSwitch,
    All,
}

impl From<DatasetFlag> for DatasetKind {
    fn from(f: DatasetFlag) -> Self {
        match f {
            DatasetFlag::StallOnly => DatasetKind::StallOnly,
            DatasetFlag::StallSwitch => DatasetKind::StallAndSwitch,
            DatasetFlag::All => DatasetKind::All,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured mode over the full user x trace x seed lattice.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's tuning mode.
        #[arg(long, value_enum)]
        mode: Option<ModeFlag>,
    },
    /// Generate synthetic playback logs from hazard users.
    SynthLogs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Train the exit predictor from a log CSV and save the model artifact.
    TrainPredictor {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        rows: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "stall-only")]
        dataset: DatasetFlag,
        #[arg(long, default_value_t = true)]
        balanced: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
    },
    /// Evaluate a trained predictor on a log CSV.
    EvalPredictor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        rows: PathBuf,
        #[arg(long, value_enum, default_value = "stall-only")]
        dataset: DatasetFlag,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full comparison: fixed grid vs both tuning modes.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Rebuild reports from a run directory.
    Report {
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            seed,
            out,
            mode,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            if let Some(mode) = mode {
                cfg.mode = resolve_mode(&cfg, mode)?;
                cfg.validate()?;
            }
            let output = run_experiment(&cfg)?;
            write_outputs(&output, &out)?;
            write_auxiliary_reports(&output, &out)?;
            println!(
                "wrote {} result rows to {}",
                output.results.len(),
                out.display()
            );
            Ok(())
        }
        Command::SynthLogs { config, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let manifest = cfg.load_manifest()?;
            let traces = cfg.load_traces()?;
            let users: Vec<_> = cfg
                .load_users(manifest.num_levels())
                .into_iter()
                .filter_map(|u| match u {
                    abrsim_cli::config::CellUser::Hazard(h) => Some(h),
                    abrsim_cli::config::CellUser::Rule(_) => None,
                })
                .collect();
            if users.is_empty() {
                bail!("synth-logs needs a hazard user model");
            }
            let synth_cfg = SynthConfig {
                abr: cfg.abr_config(),
                params: cfg.default_params,
                sessions_per_pair: cfg.synth_sessions_per_pair.unwrap_or(2),
                seed: seed.unwrap_or_else(|| cfg.seeds[0]),
            };
            let logs = synthesize_logs(&users, &traces, &manifest, &synth_cfg)
                .map_err(|e| anyhow!("{e}"))?;
            std::fs::create_dir_all(&out)?;
            write_log_csv(&logs.rows, out.join("rows.csv")).map_err(|e| anyhow!("{e}"))?;
            let ratio = stall_label_ratio(&logs.rows);
            println!(
                "wrote {} rows ({} sessions) to {}; stall-row continue:exit ratio {}",
                logs.rows.len(),
                logs.sessions.len(),
                out.display(),
                ratio.map(|r| format!("{r:.2}:1")).unwrap_or("n/a".into())
            );
            Ok(())
        }
        Command::TrainPredictor {
            config,
            rows,
            out,
            dataset,
            balanced,
            seed,
            epochs,
            lr,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let manifest = cfg.load_manifest()?;
            let log_rows = read_log_csv(&rows).map_err(|e| anyhow!("{e}"))?;
            let scale = scale_from_logs(&log_rows, &manifest);
            let train_rows = build_training_rows(
                &log_rows,
                &scale,
                manifest.segment_length_s,
                dataset.into(),
            );
            let train_cfg = TrainConfig {
                learning_rate: lr,
                epochs,
                seed: seed.unwrap_or(1),
                balanced,
                ..TrainConfig::default()
            };
            let report = train(&train_rows, &train_cfg).map_err(|e| anyhow!("{e}"))?;
            let sessions = sessions_from_logs(&log_rows, manifest.segment_length_s);
            let os = build_os_tables(&sessions, manifest.num_levels()).map_err(|e| anyhow!("{e}"))?;
            let artifact = PredictorArtifact::new(HybridPredictor {
                net: report.net.clone(),
                os,
                scale,
            });
            std::fs::create_dir_all(&out)?;
            artifact
                .save(out.join("model.json"))
                .map_err(|e| anyhow!("{e}"))?;
            std::fs::write(
                out.join("metrics.json"),
                serde_json::to_string_pretty(&report.metrics)?,
            )?;
            println!(
                "trained on {} rows; holdout accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
                train_rows.len(),
                report.metrics.accuracy,
                report.metrics.precision,
                report.metrics.recall,
                report.metrics.f1
            );
            Ok(())
        }
        Command::EvalPredictor {
            model,
            rows,
            dataset,
            out,
        } => {
            let artifact = PredictorArtifact::load(&model).map_err(|e| anyhow!("{e}"))?;
            let log_rows = read_log_csv(&rows).map_err(|e| anyhow!("{e}"))?;
            let train_rows = build_training_rows(
                &log_rows,
                &artifact.predictor.scale,
                1.0,
                dataset.into(),
            );
            let metrics = evaluate_rows(&artifact.predictor.net, train_rows.iter());
            let text = serde_json::to_string_pretty(&metrics)?;
            if let Some(path) = out {
                std::fs::write(&path, &text)?;
            }
            println!("{text}");
            Ok(())
        }
        Command::Sweep { config, seed, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            let output = run_sweep(&cfg)?;
            write_outputs(&output, &out)?;
            write_auxiliary_reports(&output, &out)?;
            println!(
                "sweep wrote {} result rows to {}",
                output.results.len(),
                out.display()
            );
            Ok(())
        }
        Command::Report { out } => {
            let results =
                read_results_csv(out.join("results.csv")).context("reading results.csv")?;
            let summary = reports::summarize(&results);
            std::fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&summary)?,
            )?;
            let day_stats = read_day_stats_csv(out.join("day_stats.csv"))
                .context("reading day_stats.csv")?;
            let output = abrsim_cli::experiment::ExperimentOutput {
                results,
                obo_rows: Vec::new(),
                day_stats,
            };
            write_auxiliary_reports(&output, &out)?;
            println!("reports rebuilt in {}", out.display());
            Ok(())
        }
    }
}

fn resolve_mode(cfg: &ExperimentConfig, flag: ModeFlag) -> Result<ModeSpec> {
    Ok(match flag {
        ModeFlag::Fixed => ModeSpec::Fixed {
            params: match &cfg.mode {
                ModeSpec::Fixed { params } => *params,
                _ => cfg.default_params,
            },
        },
        ModeFlag::LingxiFixed => {
            let candidates = match (&cfg.mode, &cfg.sweep) {
                (ModeSpec::LingxiFixed { candidates }, _) => candidates.clone(),
                (_, Some(sweep)) => sweep.lingxi_fixed_candidates.clone(),
                _ => bail!("lingxi-fixed needs candidates in the config"),
            };
            ModeSpec::LingxiFixed { candidates }
        }
        ModeFlag::LingxiBayes => ModeSpec::LingxiBayes,
    })
}

/// Heatmap (rule-grid runs) and sensitivity correlation (when enough
/// qualifying user-days exist).
fn write_auxiliary_reports(
    output: &abrsim_cli::experiment::ExperimentOutput,
    out: &PathBuf,
) -> Result<()> {
    let has_rule_grid = output.results.iter().any(|r| r.user_id.starts_with("rule_"));
    if has_rule_grid {
        let tuned: Vec<_> = output
            .day_stats
            .iter()
            .filter(|s| s.user_id.starts_with("rule_"))
            .cloned()
            .collect();
        if let Ok(heatmap) = reports::heatmap_report(&tuned) {
            reports::write_heatmap_csv(&heatmap, out.join("heatmap.csv"))?;
            std::fs::write(
                out.join("heatmap_stats.json"),
                serde_json::to_string_pretty(&serde_json::json!({
                    "spearman_rho": heatmap.spearman_rho,
                    "p_value": heatmap.p_value,
                    "n": heatmap.n,
                }))?,
            )?;
        }
    }
    if let Ok(correlation) = reports::correlation_report(&output.day_stats, 10) {
        reports::write_scatter_csv(&correlation.points, out.join("scatter.csv"))?;
        std::fs::write(
            out.join("correlation.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "pooled_r": correlation.pooled_r,
                "per_day": correlation.per_day,
                "min_stall_events": correlation.min_stall_events,
            }))?,
        )?;
    }
    Ok(())
}
