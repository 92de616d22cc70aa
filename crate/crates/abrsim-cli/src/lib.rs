//! Experiment harness around the simulator: configuration, the cell
//! runner, report generation, and user-state persistence.

pub mod config;
pub mod experiment;
pub mod reports;
pub mod state;

use std::path::Path;

use anyhow::{bail, Context, Result};

use config::{ExperimentConfig, ModeSpec};
use experiment::{run_mode, ExperimentOutput};

/// Run the full comparison: every fixed parameter in the sweep grid, the
/// fixed-candidate tuner, and the surrogate-guided tuner, over identical
/// cells.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let Some(sweep) = &cfg.sweep else {
        bail!("config has no sweep section");
    };
    let manifest = cfg.load_manifest()?;
    let traces = cfg.load_traces()?;
    let users = cfg.load_users(manifest.num_levels());
    let predictor = experiment::load_predictor(cfg)?;

    let mut combined = ExperimentOutput::default();
    for params in &sweep.fixed_grid {
        let mode = ModeSpec::Fixed { params: *params };
        let out = run_mode(cfg, &mode, &manifest, &traces, &users, predictor.as_ref())?;
        merge(&mut combined, out);
    }
    let fixed_mode = ModeSpec::LingxiFixed {
        candidates: sweep.lingxi_fixed_candidates.clone(),
    };
    merge(
        &mut combined,
        run_mode(cfg, &fixed_mode, &manifest, &traces, &users, predictor.as_ref())?,
    );
    merge(
        &mut combined,
        run_mode(
            cfg,
            &ModeSpec::LingxiBayes,
            &manifest,
            &traces,
            &users,
            predictor.as_ref(),
        )?,
    );
    Ok(combined)
}

fn merge(into: &mut ExperimentOutput, from: ExperimentOutput) {
    into.results.extend(from.results);
    into.obo_rows.extend(from.obo_rows);
    into.day_stats.extend(from.day_stats);
}

/// Write every artifact of a run into `out_dir`.
pub fn write_outputs(output: &ExperimentOutput, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    experiment::write_results_csv(&output.results, dir.join("results.csv"))?;
    experiment::write_obo_csv(&output.obo_rows, dir.join("obo_trace.csv"))?;
    experiment::write_day_stats_csv(&output.day_stats, dir.join("day_stats.csv"))?;
    let summary = reports::summarize(&output.results);
    std::fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(())
}
