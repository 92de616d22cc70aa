//! Report generation: per-mode summaries, the tolerance heatmap, and the
//! sensitivity correlation.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use abrsim::metrics::pearson;
use abrsim::user::grid;

use crate::experiment::{ResultRow, UserDayStats};

/// Mean and standard error across seeds for one mode (and fixed param).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    /// The fixed parameter vector, when the mode is `fixed`.
    pub param: Option<String>,
    pub mean_completion: f64,
    pub se_completion: f64,
    pub mean_qoe: f64,
    pub se_qoe: f64,
    pub mean_stall_s: f64,
    pub cells: usize,
    pub seeds: usize,
}

/// Group rows by mode (fixed rows also by parameter), average per seed,
/// then report mean and standard error across seeds.
pub fn summarize(rows: &[ResultRow]) -> Vec<ModeSummary> {
    let mut groups: BTreeMap<(String, Option<String>), BTreeMap<u64, Vec<&ResultRow>>> =
        BTreeMap::new();
    for row in rows {
        let param = (row.mode == "fixed").then(|| row.final_param_json.clone());
        groups
            .entry((row.mode.clone(), param))
            .or_default()
            .entry(row.seed)
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((mode, param), by_seed)| {
            let mut comp_means = Vec::new();
            let mut qoe_means = Vec::new();
            let mut stall_means = Vec::new();
            let mut cells = 0;
            for rows in by_seed.values() {
                let n = rows.len() as f64;
                cells += rows.len();
                comp_means.push(rows.iter().map(|r| r.completion).sum::<f64>() / n);
                qoe_means.push(rows.iter().map(|r| r.qoe_lin).sum::<f64>() / n);
                stall_means.push(rows.iter().map(|r| r.total_stall_s).sum::<f64>() / n);
            }
            let (mc, sc) = mean_se(&comp_means);
            let (mq, sq) = mean_se(&qoe_means);
            let (ms, _) = mean_se(&stall_means);
            ModeSummary {
                mode,
                param,
                mean_completion: mc,
                se_completion: sc,
                mean_qoe: mq,
                se_qoe: sq,
                mean_stall_s: ms,
                cells,
                seeds: by_seed.len(),
            }
        })
        .collect()
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The 8x8 grid of mean applied stall knobs per rule user, plus the rank
/// correlation between threshold sum and knob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapReport {
    /// `grid[t-2][c-2]` = mean knob for rule user (t, c).
    pub grid: Vec<Vec<f64>>,
    pub spearman_rho: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Build the heatmap from per-day stats of a rule-grid run.
pub fn heatmap_report(day_stats: &[UserDayStats]) -> Result<HeatmapReport> {
    let mut per_user: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for s in day_stats {
        per_user
            .entry(s.user_id.clone())
            .or_default()
            .push(s.mean_selected_knob);
    }
    let mut grid_vals = vec![vec![0.0; 8]; 8];
    let mut sums = Vec::with_capacity(64);
    let mut knobs = Vec::with_capacity(64);
    for user in grid() {
        let id = user.id();
        let Some(vals) = per_user.get(&id) else {
            bail!("heatmap is missing rule user {id}");
        };
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let t = user.stall_time_threshold_s as usize - 2;
        let c = user.stall_count_threshold as usize - 2;
        grid_vals[t][c] = mean;
        sums.push((user.stall_time_threshold_s + user.stall_count_threshold) as f64);
        knobs.push(mean);
    }
    let (rho, p) = spearman(&sums, &knobs)
        .ok_or_else(|| anyhow::anyhow!("degenerate heatmap: knobs never vary"))?;
    Ok(HeatmapReport {
        grid: grid_vals,
        spearman_rho: rho,
        p_value: p,
        n: sums.len(),
    })
}

/// Spearman rank correlation with average ranks for ties, and a two-sided
/// p-value from the t approximation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let rho = pearson(&ranks(xs), &ranks(ys))?;
    let n = xs.len() as f64;
    if n < 3.0 {
        return None;
    }
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let t = rho * ((n - 2.0) / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, n - 2.0).ok()?;
        2.0 * (1.0 - dist.cdf(t.abs()))
    };
    Some((rho, p))
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg_rank;
        }
        i = j + 1;
    }
    out
}

/// One qualifying (user, day) observation of the sensitivity correlation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub user_id: String,
    pub day: u64,
    pub stall_exit_rate: f64,
    pub mean_selected_knob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// (day, r, qualifying users); days with fewer than 3 points are
    /// reported without a coefficient.
    pub per_day: Vec<(u64, Option<f64>, usize)>,
    pub pooled_r: Option<f64>,
    pub points: Vec<ScatterPoint>,
    pub min_stall_events: u64,
}

/// Pearson correlation between per-user stall-exit rate and the mean
/// applied knob, per day (seed) and pooled. Only users with more than
/// `min_stall_events` stalls that day qualify.
pub fn correlation_report(
    day_stats: &[UserDayStats],
    min_stall_events: u64,
) -> Result<CorrelationReport> {
    let mut points: Vec<ScatterPoint> = day_stats
        .iter()
        .filter(|s| s.stall_events > min_stall_events)
        .map(|s| ScatterPoint {
            user_id: s.user_id.clone(),
            day: s.seed,
            stall_exit_rate: s.fatal_stalls as f64 / s.stall_events as f64,
            mean_selected_knob: s.mean_selected_knob,
        })
        .collect();
    points.sort_by(|a, b| (a.day, &a.user_id).cmp(&(b.day, &b.user_id)));
    if points.len() < 3 {
        bail!(
            "correlation needs at least 3 qualifying user-days, found {}",
            points.len()
        );
    }

    let mut days: Vec<u64> = points.iter().map(|p| p.day).collect();
    days.dedup();
    let per_day = days
        .iter()
        .map(|&d| {
            let xs: Vec<f64> = points
                .iter()
                .filter(|p| p.day == d)
                .map(|p| p.stall_exit_rate)
                .collect();
            let ys: Vec<f64> = points
                .iter()
                .filter(|p| p.day == d)
                .map(|p| p.mean_selected_knob)
                .collect();
            let r = if xs.len() >= 3 { pearson(&xs, &ys) } else { None };
            (d, r, xs.len())
        })
        .collect();

    let xs: Vec<f64> = points.iter().map(|p| p.stall_exit_rate).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_selected_knob).collect();
    Ok(CorrelationReport {
        per_day,
        pooled_r: pearson(&xs, &ys),
        points,
        min_stall_events,
    })
}

pub fn write_heatmap_csv(report: &HeatmapReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["stall_time_threshold".to_string()];
    header.extend((2..=9).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for (t, row) in report.grid.iter().enumerate() {
        let mut record = vec![(t + 2).to_string()];
        record.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scatter_csv(points: &[ScatterPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["user_id", "day", "stall_exit_rate", "mean_selected_knob"])?;
    for p in points {
        w.write_record([
            p.user_id.clone(),
            p.day.to_string(),
            format!("{:.6}", p.stall_exit_rate),
            format!("{:.6}", p.mean_selected_knob),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_detects_monotone_trends() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 5.0).collect();
        let (rho, p) = spearman(&xs, &ys).unwrap();
        assert!((rho + 1.0).abs() < 1e-12);
        assert!(p < 1e-6);
    }

    #[test]
    fn spearman_handles_ties() {
        let xs = [1.0, 1.0, 2.0, 2.0, 3.0, 3.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let (rho, _) = spearman(&xs, &ys).unwrap();
        assert!(rho > 0.7);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn summary_groups_fixed_by_param() {
        let row = |mode: &str, param: &str, seed: u64, completion: f64| ResultRow {
            mode: mode.into(),
            abr: "mpc".into(),
            user_id: "u".into(),
            trace_id: 0,
            seed,
            completion,
            qoe_lin: 1.0,
            total_stall_s: 0.0,
            stall_exit_rate: None,
            final_param_json: param.into(),
        };
        let rows = vec![
            row("fixed", "a", 1, 0.2),
            row("fixed", "a", 2, 0.4),
            row("fixed", "b", 1, 0.6),
            row("fixed", "b", 2, 0.8),
            row("lingxi-bayes", "x", 1, 0.9),
            row("lingxi-bayes", "y", 2, 0.7),
        ];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 3);
        let a = summary
            .iter()
            .find(|s| s.param.as_deref() == Some("a"))
            .unwrap();
        assert!((a.mean_completion - 0.3).abs() < 1e-12);
        let bayes = summary.iter().find(|s| s.mode == "lingxi-bayes").unwrap();
        assert_eq!(bayes.param, None);
        assert!((bayes.mean_completion - 0.8).abs() < 1e-12);
    }

    #[test]
    fn correlation_report_needs_qualifying_users() {
        let stat = |user: &str, seed: u64, stalls: u64, fatal: u64, knob: f64| UserDayStats {
            user_id: user.into(),
            seed,
            stall_events: stalls,
            fatal_stalls: fatal,
            mean_selected_knob: knob,
            invocations: 1,
        };
        // too few qualifying users
        let sparse = vec![stat("a", 1, 5, 1, 0.5)];
        assert!(correlation_report(&sparse, 10).is_err());

        // sensitive users get lower knobs: negative r
        let stats = vec![
            stat("a", 1, 20, 18, 0.2),
            stat("b", 1, 20, 10, 0.5),
            stat("c", 1, 20, 2, 0.8),
            stat("a", 2, 15, 12, 0.25),
            stat("b", 2, 15, 8, 0.55),
            stat("c", 2, 15, 1, 0.85),
        ];
        let report = correlation_report(&stats, 10).unwrap();
        assert!(report.pooled_r.unwrap() < -0.9);
        assert_eq!(report.per_day.len(), 2);
        for (_, r, n) in &report.per_day {
            assert_eq!(*n, 3);
            assert!(r.unwrap() < -0.9);
        }
    }

    #[test]
    fn identical_users_have_no_correlation() {
        let stats: Vec<UserDayStats> = (0..5)
            .map(|i| UserDayStats {
                user_id: format!("u{i}"),
                seed: 1,
                stall_events: 20,
                fatal_stalls: 10,
                mean_selected_knob: 0.5,
                invocations: 1,
            })
            .collect();
        let report = correlation_report(&stats, 10).unwrap();
        // both series are constant: the coefficient is undefined
        assert_eq!(report.pooled_r, None);
    }
}
