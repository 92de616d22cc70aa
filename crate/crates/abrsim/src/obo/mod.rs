//! Per-user online Bayesian tuning of the ABR objective.

pub mod acquisition;
pub mod gp;
pub mod session;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{ParamBox, QoeParams};
use crate::rng;

pub use acquisition::{expected_improvement, next_candidate, probability_of_improvement, Acquisition};
pub use gp::{gp_fit, GpConfig, GpSurrogate};
pub use session::{run_session, InvocationRecord, SessionConfig, SessionResult, TuningMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OboConfig {
    /// Max evaluations per invocation.
    pub trials: usize,
    /// Stall-count trigger: tuning fires once the count exceeds this.
    pub eta: u32,
    pub acquisition: Acquisition,
    /// Kernel output variance.
    pub signal_var: f64,
    pub noise_var: f64,
    /// Length scale as a fraction of each box dimension's width.
    pub lengthscale_frac: f64,
}

impl Default for OboConfig {
    fn default() -> Self {
        OboConfig {
            trials: 10,
            eta: 2,
            acquisition: Acquisition::ExpectedImprovement,
            signal_var: 0.02,
            noise_var: 1e-4,
            lengthscale_frac: 0.2,
        }
    }
}

/// One objective evaluation inside an invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub params: QoeParams,
    pub exit_rate: f64,
    pub is_best: bool,
    pub pruned: bool,
}

/// Value returned by objective closures.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveSample {
    pub value: f64,
    pub pruned: bool,
}

#[derive(Debug, Clone)]
pub struct OboOutcome {
    pub best: QoeParams,
    pub best_value: f64,
    pub trials: Vec<TrialRecord>,
}

/// One tuning invocation: propose with the surrogate, evaluate, keep the
/// argmin. The best-so-far starts at infinity, so the first evaluation
/// always becomes the working best; the previous incumbent's value is
/// deliberately not carried over.
///
/// The objective receives `(trial_index, candidate, best_so_far)` and
/// returns the estimated exit rate.
pub fn optimize<F>(
    pbox: &ParamBox,
    incumbent: Option<QoeParams>,
    cfg: &OboConfig,
    stream_seed: u64,
    mut objective: F,
) -> Result<OboOutcome>
where
    F: FnMut(usize, &QoeParams, f64) -> Result<ObjectiveSample>,
{
    let bounds = pbox.bounds();
    let gp_cfg = GpConfig::for_bounds(&bounds, cfg.lengthscale_frac, cfg.signal_var, cfg.noise_var);
    let incumbent_vec = incumbent.map(|p| pbox.vector_of(&p));

    let mut rng = rng::substream(stream_seed, &[rng::tags::CANDIDATE]);
    let mut points: Vec<(Vec<f64>, f64)> = Vec::with_capacity(cfg.trials);
    let mut gp: Option<GpSurrogate> = None;
    let mut best_value = f64::INFINITY;
    let mut best: Option<QoeParams> = None;
    let mut trials = Vec::with_capacity(cfg.trials);

    for trial in 0..cfg.trials {
        let x = next_candidate(
            gp.as_ref(),
            pbox,
            incumbent_vec.as_deref(),
            cfg.acquisition,
            &mut rng,
        );
        let candidate = pbox.params_from(&x);
        let sample = objective(trial, &candidate, best_value)?;

        points.push((x, sample.value));
        gp = Some(gp_fit(&points, &gp_cfg)?);

        let is_best = sample.value < best_value;
        if is_best {
            best_value = sample.value;
            best = Some(candidate);
        }
        trials.push(TrialRecord {
            params: candidate,
            exit_rate: sample.value,
            is_best,
            pruned: sample.pruned,
        });
    }

    let best = best.or(incumbent).unwrap_or_else(|| {
        pbox.params_from(&bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect::<Vec<_>>())
    });
    Ok(OboOutcome {
        best,
        best_value,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_trial_always_becomes_best() {
        let pbox = ParamBox::default_hyb();
        let out = optimize(&pbox, None, &OboConfig::default(), 3, |_, _, best| {
            assert!(best.is_infinite() || best <= 1.0);
            Ok(ObjectiveSample {
                value: 0.9,
                pruned: false,
            })
        })
        .unwrap();
        assert!(out.trials[0].is_best);
        assert_eq!(out.best_value, 0.9);
    }

    #[test]
    fn best_so_far_is_monotone_within_an_invocation() {
        let pbox = ParamBox::default_hyb();
        let mut k = 0;
        let values = [0.5, 0.7, 0.3, 0.9, 0.2, 0.4, 0.25, 0.3, 0.8, 0.21];
        let out = optimize(&pbox, None, &OboConfig::default(), 4, |_, _, _| {
            let v = values[k];
            k += 1;
            Ok(ObjectiveSample {
                value: v,
                pruned: false,
            })
        })
        .unwrap();
        let mut best = f64::INFINITY;
        for t in &out.trials {
            if t.is_best {
                assert!(t.exit_rate < best);
                best = t.exit_rate;
            } else {
                assert!(t.exit_rate >= best);
            }
        }
        assert_eq!(out.best_value, 0.2);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let pbox = ParamBox::default_hyb();
        let cfg = OboConfig {
            trials: 15,
            signal_var: 0.05,
            noise_var: 1e-6,
            ..OboConfig::default()
        };
        let out = optimize(&pbox, None, &cfg, 11, |_, p, _| {
            let QoeParams::Hyb { beta } = *p else { unreachable!() };
            Ok(ObjectiveSample {
                value: (beta - 0.42).powi(2),
                pruned: false,
            })
        })
        .unwrap();
        let QoeParams::Hyb { beta } = out.best else {
            unreachable!()
        };
        assert!((beta - 0.42).abs() < 0.08, "found {beta}");
    }
}
