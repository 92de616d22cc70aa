//! Bitrate selection algorithms behind one tunable contract.
//!
//! Both algorithms expose their objective knobs through [`QoeParams`] so a
//! tuner can adjust behavior at runtime without touching algorithm internals.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::VideoManifest;
use crate::params::QoeParams;
use crate::player::{self, PlayerEnv};

const MPC_SEQUENCE_CAP: u64 = 1_000_000;
const THROUGHPUT_HISTORY: usize = 16;
const HARMONIC_WINDOW: usize = 5;

/// Throughput+buffer rule: the highest level whose predicted download time
/// stays strictly under `beta * buffer`; the lowest level if none qualifies.
pub fn hyb_select(
    manifest: &VideoManifest,
    c_hat_kbps: f64,
    buffer_s: f64,
    beta: f64,
) -> Result<usize> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParam(format!("beta {beta} outside (0, 1]")));
    }
    if !(c_hat_kbps > 0.0) {
        return Err(Error::InvalidParam("c_hat must be > 0".into()));
    }
    let budget = beta * buffer_s;
    let mut chosen = 0;
    for (i, level) in manifest.levels.iter().enumerate() {
        let predicted = level.segment_size_mbit * 1000.0 / c_hat_kbps;
        if predicted < budget {
            chosen = i;
        }
    }
    Ok(chosen)
}

/// Robust throughput estimate: harmonic mean of the last five samples,
/// discounted by the worst relative prediction error in the window.
pub fn robust_bandwidth(samples: &[f64], errors: &[f64], error_window: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no throughput samples".into()));
    }
    let tail = &samples[samples.len().saturating_sub(HARMONIC_WINDOW)..];
    let harmonic = tail.len() as f64 / tail.iter().map(|c| 1.0 / c).sum::<f64>();
    let err_tail = &errors[errors.len().saturating_sub(error_window)..];
    let max_err = err_tail.iter().fold(0.0f64, |a, &e| a.max(e));
    Ok(harmonic / (1.0 + max_err))
}

/// Exhaustive lookahead: enumerate all level sequences of length `horizon`,
/// simulate each under a constant bandwidth estimate, score with the linear
/// session objective, and return the first level of the best sequence. Ties
/// break toward the lower level index (lexicographically smallest argmax).
pub fn mpc_select(
    manifest: &VideoManifest,
    bw_estimate_kbps: f64,
    env: &PlayerEnv,
    params: &QoeParams,
    horizon: usize,
) -> Result<usize> {
    let (stall_weight, switch_weight) = match *params {
        QoeParams::Mpc {
            stall_weight,
            switch_weight,
        } => (stall_weight, switch_weight),
        QoeParams::Hyb { .. } => {
            return Err(Error::InvalidParam(
                "lookahead selection requires the mpc parameter variant".into(),
            ))
        }
    };
    if horizon == 0 {
        return Err(Error::InvalidParam("horizon must be >= 1".into()));
    }
    let n = manifest.num_levels();
    if (n as u64).checked_pow(horizon as u32).unwrap_or(u64::MAX) > MPC_SEQUENCE_CAP {
        return Err(Error::HorizonExplosion {
            levels: n,
            horizon,
        });
    }

    let mut seq = vec![0usize; horizon];
    let mut best_score = f64::NEG_INFINITY;
    let mut best_first = 0usize;
    loop {
        let score = score_sequence(
            manifest,
            bw_estimate_kbps,
            env,
            &seq,
            stall_weight,
            switch_weight,
        )?;
        if score > best_score {
            best_score = score;
            best_first = seq[0];
        }
        // odometer increment in lexicographic order
        let mut i = horizon;
        loop {
            if i == 0 {
                return Ok(best_first);
            }
            i -= 1;
            seq[i] += 1;
            if seq[i] < n {
                break;
            }
            seq[i] = 0;
        }
    }
}

fn score_sequence(
    manifest: &VideoManifest,
    bw_kbps: f64,
    env: &PlayerEnv,
    seq: &[usize],
    stall_weight: f64,
    switch_weight: f64,
) -> Result<f64> {
    let mut sim = *env;
    let mut score = 0.0;
    let mut prev_quality = match env.last_level {
        Some(l) => Some(manifest.quality(l)?),
        None => None,
    };
    for &level in seq {
        let (next, out) = player::step(&sim, manifest, level, bw_kbps)?;
        let q = manifest.quality(level)?;
        score += q - stall_weight * out.stall_time_s;
        if let Some(pq) = prev_quality {
            score -= switch_weight * (q - pq).abs();
        }
        prev_quality = Some(q);
        sim = next;
    }
    Ok(score)
}

/// Which selection rule a session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbrKind {
    Hyb,
    Mpc,
}

/// Bandwidth estimator feeding the throughput+buffer rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HybEstimator {
    LastSample,
    HarmonicMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbrConfig {
    pub kind: AbrKind,
    /// Lookahead depth for the mpc rule.
    pub horizon: usize,
    pub hyb_estimator: HybEstimator,
    /// Window of past relative errors used by the robust discount.
    pub error_window: usize,
}

impl AbrConfig {
    pub fn mpc(horizon: usize) -> Self {
        AbrConfig {
            kind: AbrKind::Mpc,
            horizon,
            hyb_estimator: HybEstimator::LastSample,
            error_window: 5,
        }
    }

    pub fn hyb() -> Self {
        AbrConfig {
            kind: AbrKind::Hyb,
            horizon: 5,
            hyb_estimator: HybEstimator::LastSample,
            error_window: 5,
        }
    }
}

/// A stateful selector: tracks observed throughput and prediction errors,
/// selects a level for the next segment, and accepts parameter updates from
/// the tuner mid-session.
#[derive(Debug, Clone)]
pub struct Abr {
    cfg: AbrConfig,
    params: QoeParams,
    throughputs: VecDeque<f64>,
    errors: VecDeque<f64>,
    pending_prediction: Option<f64>,
}

impl Abr {
    pub fn new(cfg: AbrConfig, params: QoeParams) -> Result<Self> {
        params.validate()?;
        match (cfg.kind, &params) {
            (AbrKind::Hyb, QoeParams::Hyb { .. }) | (AbrKind::Mpc, QoeParams::Mpc { .. }) => {}
            _ => {
                return Err(Error::InvalidParam(
                    "parameter variant does not match the algorithm".into(),
                ))
            }
        }
        Ok(Abr {
            cfg,
            params,
            throughputs: VecDeque::new(),
            errors: VecDeque::new(),
            pending_prediction: None,
        })
    }

    pub fn kind(&self) -> AbrKind {
        self.cfg.kind
    }

    pub fn params(&self) -> QoeParams {
        self.params
    }

    /// Apply tuned parameters; the algorithm itself never changes.
    pub fn update_params(&mut self, params: QoeParams) -> Result<()> {
        params.validate()?;
        match (self.cfg.kind, &params) {
            (AbrKind::Hyb, QoeParams::Hyb { .. }) | (AbrKind::Mpc, QoeParams::Mpc { .. }) => {
                self.params = params;
                Ok(())
            }
            _ => Err(Error::InvalidParam(
                "parameter variant does not match the algorithm".into(),
            )),
        }
    }

    /// Record the observed throughput of a finished download.
    pub fn observe(&mut self, throughput_kbps: f64) {
        if let Some(pred) = self.pending_prediction.take() {
            let err = (pred - throughput_kbps).abs() / throughput_kbps;
            self.errors.push_back(err);
            while self.errors.len() > self.cfg.error_window {
                self.errors.pop_front();
            }
        }
        self.throughputs.push_back(throughput_kbps);
        while self.throughputs.len() > THROUGHPUT_HISTORY {
            self.throughputs.pop_front();
        }
    }

    /// Seed the throughput history, e.g. when forking a rollout from live
    /// session state.
    pub fn seed_history(&mut self, samples: &[f64]) {
        for &s in samples {
            self.throughputs.push_back(s);
            while self.throughputs.len() > THROUGHPUT_HISTORY {
                self.throughputs.pop_front();
            }
        }
    }

    /// Choose the level for the next segment. Cold start (no observed
    /// throughput) picks the lowest level.
    pub fn select(&mut self, manifest: &VideoManifest, env: &PlayerEnv) -> Result<usize> {
        if self.throughputs.is_empty() {
            return Ok(0);
        }
        let samples: Vec<f64> = self.throughputs.iter().copied().collect();
        match self.cfg.kind {
            AbrKind::Hyb => {
                let beta = match self.params {
                    QoeParams::Hyb { beta } => beta,
                    _ => unreachable!("variant checked at construction"),
                };
                let c_hat = match self.cfg.hyb_estimator {
                    HybEstimator::LastSample => *samples.last().unwrap(),
                    HybEstimator::HarmonicMean => {
                        let tail = &samples[samples.len().saturating_sub(HARMONIC_WINDOW)..];
                        tail.len() as f64 / tail.iter().map(|c| 1.0 / c).sum::<f64>()
                    }
                };
                hyb_select(manifest, c_hat, env.buffer_s, beta)
            }
            AbrKind::Mpc => {
                let errors: Vec<f64> = self.errors.iter().copied().collect();
                let tail = &samples[samples.len().saturating_sub(HARMONIC_WINDOW)..];
                let harmonic = tail.len() as f64 / tail.iter().map(|c| 1.0 / c).sum::<f64>();
                self.pending_prediction = Some(harmonic);
                let estimate = robust_bandwidth(&samples, &errors, self.cfg.error_window)?;
                mpc_select(manifest, estimate, env, &self.params, self.cfg.horizon)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::QualityLevel;

    fn manifest(sizes: &[f64]) -> VideoManifest {
        VideoManifest {
            segment_length_s: 1.0,
            num_segments: 0,
            levels: sizes
                .iter()
                .enumerate()
                .map(|(i, &s)| QualityLevel {
                    bitrate_kbps: (s * 1000.0) as u32,
                    quality_value: (i + 1) as f64,
                    segment_size_mbit: s,
                })
                .collect(),
        }
    }

    #[test]
    fn hyb_picks_highest_strictly_under_budget() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        // download times 0.5, 1, 2s; budget 0.5*4 = 2s; 2s is not < 2s
        let level = hyb_select(&m, 2000.0, 4.0, 0.5).unwrap();
        assert_eq!(level, 1);
    }

    #[test]
    fn hyb_falls_back_to_lowest() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        let level = hyb_select(&m, 2000.0, 0.1, 0.5).unwrap();
        assert_eq!(level, 0);
    }

    #[test]
    fn hyb_unconstrained_picks_highest() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        let level = hyb_select(&m, 2000.0, 1e6, 1.0).unwrap();
        assert_eq!(level, 2);
    }

    #[test]
    fn robust_estimate_matches_hand_arithmetic() {
        assert_eq!(
            robust_bandwidth(&[3000.0, 3000.0, 3000.0], &[], 5).unwrap(),
            3000.0
        );
        let hm = robust_bandwidth(&[2000.0, 4000.0], &[], 5).unwrap();
        assert!((hm - 8000.0 / 3.0).abs() < 1e-9);
        let discounted = robust_bandwidth(&[3000.0], &[0.5], 5).unwrap();
        assert!((discounted - 2000.0).abs() < 1e-9);
        assert!(robust_bandwidth(&[], &[], 5).is_err());
    }

    #[test]
    fn robust_estimate_windows_errors() {
        // old error 0.5 falls outside a window of 1; only 0.1 applies
        let est = robust_bandwidth(&[1000.0], &[0.5, 0.1], 1).unwrap();
        assert!((est - 1000.0 / 1.1).abs() < 1e-9);
    }

    #[test]
    fn mpc_dominant_quality_case() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        let env = PlayerEnv {
            buffer_s: 8.0,
            ..PlayerEnv::new(10.0)
        };
        let p = QoeParams::Mpc {
            stall_weight: 4.0,
            switch_weight: 1.0,
        };
        assert_eq!(mpc_select(&m, 1e9, &env, &p, 1).unwrap(), 2);
    }

    #[test]
    fn mpc_dominant_stall_case() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        let env = PlayerEnv::new(10.0); // empty buffer
        let p = QoeParams::Mpc {
            stall_weight: 20.0,
            switch_weight: 1.0,
        };
        // bandwidth below the lowest bitrate: every level stalls, lowest
        // stalls least
        assert_eq!(mpc_select(&m, 500.0, &env, &p, 1).unwrap(), 0);
    }

    #[test]
    fn mpc_rejects_horizon_explosion() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        let env = PlayerEnv::new(10.0);
        let p = QoeParams::Mpc {
            stall_weight: 4.0,
            switch_weight: 1.0,
        };
        assert!(matches!(
            mpc_select(&m, 1000.0, &env, &p, 20),
            Err(Error::HorizonExplosion { .. })
        ));
    }

    #[test]
    fn abr_cold_start_picks_lowest() {
        let m = manifest(&[1.0, 2.0, 4.0]);
        let mut abr = Abr::new(AbrConfig::hyb(), QoeParams::Hyb { beta: 0.8 }).unwrap();
        let env = PlayerEnv::new(10.0);
        assert_eq!(abr.select(&m, &env).unwrap(), 0);
    }

    #[test]
    fn abr_rejects_mismatched_params() {
        let err = Abr::new(AbrConfig::hyb(), {
            QoeParams::Mpc {
                stall_weight: 4.0,
                switch_weight: 1.0,
            }
        });
        assert!(err.is_err());
        let mut abr = Abr::new(AbrConfig::hyb(), QoeParams::Hyb { beta: 0.5 }).unwrap();
        assert!(abr
            .update_params(QoeParams::Mpc {
                stall_weight: 2.0,
                switch_weight: 0.0
            })
            .is_err());
        assert!(abr.update_params(QoeParams::Hyb { beta: 0.7 }).is_ok());
    }
}
