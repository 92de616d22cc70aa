//! Improvement-based acquisition over the search box.
//!
//! Candidates come from a deterministic low-discrepancy scan of the box
//! plus a sampled neighborhood of the incumbent; the winner maximizes the
//! acquisition, with exact ties broken toward the lower stall-risk point.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::obo::gp::GpSurrogate;
use crate::params::ParamBox;

const HALTON_POINTS: usize = 512;
const NEIGHBOR_POINTS: usize = 32;
const NEIGHBOR_FRAC: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    ExpectedImprovement,
    ProbabilityOfImprovement,
}

/// Expected improvement below `best` for a posterior N(mean, std^2).
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    if std <= 1e-12 {
        return (best - mean).max(0.0);
    }
    let z = (best - mean) / std;
    let normal = Normal::new(0.0, 1.0).unwrap();
    ((best - mean) * normal.cdf(z) + std * normal.pdf(z)).max(0.0)
}

/// Probability the posterior falls below `best`.
pub fn probability_of_improvement(mean: f64, std: f64, best: f64) -> f64 {
    if std <= 1e-12 {
        return if mean < best { 1.0 } else { 0.0 };
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    normal.cdf((best - mean) / std)
}

/// Radical-inverse Halton value for 1-based `index`.
fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Propose the next point to evaluate.
///
/// With no observations the draw is box-uniform (pure exploration). When
/// the acquisition is zero everywhere (degenerate posterior) the incumbent
/// is returned unchanged.
pub fn next_candidate(
    gp: Option<&GpSurrogate>,
    pbox: &ParamBox,
    incumbent: Option<&[f64]>,
    acq: Acquisition,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let bounds = pbox.bounds();
    let dims = bounds.len();
    let uniform = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect()
    };

    let Some(gp) = gp.filter(|g| !g.is_empty()) else {
        return uniform(rng);
    };

    let (_, best_y) = gp.best_observed();

    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(HALTON_POINTS + NEIGHBOR_POINTS + 1);
    const BASES: [usize; 3] = [2, 3, 5];
    for i in 1..=HALTON_POINTS {
        let x: Vec<f64> = (0..dims)
            .map(|d| {
                let (lo, hi) = bounds[d];
                lo + (hi - lo) * halton(i, BASES[d % BASES.len()])
            })
            .collect();
        candidates.push(x);
    }
    if let Some(inc) = incumbent {
        candidates.push(inc.to_vec());
        for _ in 0..NEIGHBOR_POINTS {
            let x: Vec<f64> = (0..dims)
                .map(|d| {
                    let (lo, hi) = bounds[d];
                    let sigma = NEIGHBOR_FRAC * (hi - lo);
                    (inc[d] + sigma * crate::rng::gauss(rng)).clamp(lo, hi)
                })
                .collect();
            candidates.push(x);
        }
    }

    let mut best_x: Option<&Vec<f64>> = None;
    let mut best_a = 0.0;
    for x in &candidates {
        let (mean, var) = gp.posterior(x);
        let std = var.sqrt();
        let a = match acq {
            Acquisition::ExpectedImprovement => expected_improvement(mean, std, best_y),
            Acquisition::ProbabilityOfImprovement => probability_of_improvement(mean, std, best_y),
        };
        let better = match best_x {
            None => a > 0.0,
            Some(bx) => a > best_a || (a == best_a && pbox.more_conservative(x, bx)),
        };
        if better {
            best_a = a;
            best_x = Some(x);
        }
    }
    match best_x {
        Some(x) => x.clone(),
        // acquisition vanished everywhere: stay at the incumbent
        None => incumbent.map(|i| i.to_vec()).unwrap_or_else(|| uniform(rng)),
    }
}
