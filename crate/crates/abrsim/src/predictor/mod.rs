//! Hybrid exit-rate prediction: a trained network handles stall segments,
//! population statistics handle quality and smoothness.

pub mod features;
pub mod net;
pub mod os_tables;
pub mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::user::SegmentContext;

pub use features::{build_features, FeatureMatrix, FeatureScale, StallEvent, UserState};
pub use net::{gradient_check, ExitNet};
pub use os_tables::{build_os_tables, OsTables, SwitchPattern};
pub use train::{evaluate_rows, train, EvalMetrics, TrainConfig, TrainReport, TrainRow};

/// Segment-level exit probability from the user's current history.
pub trait ExitPredictor: Send + Sync {
    fn predict(&self, state: &UserState) -> f64;
}

/// Fixed-probability stub for tests and estimator analysis.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl ExitPredictor for ConstantPredictor {
    fn predict(&self, _state: &UserState) -> f64 {
        self.0.clamp(0.0, 1.0)
    }
}

/// The deployed predictor: network output plus table contribution on stall
/// segments, table contribution alone otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridPredictor {
    pub net: ExitNet,
    pub os: OsTables,
    pub scale: FeatureScale,
}

impl HybridPredictor {
    fn pattern_of(ctx: &SegmentContext, state: &UserState) -> SwitchPattern {
        if !ctx.switched {
            return SwitchPattern::None;
        }
        match state.prev_level() {
            Some(p) if ctx.level > p => SwitchPattern::Up,
            Some(p) if ctx.level < p => SwitchPattern::Down,
            _ => SwitchPattern::None,
        }
    }
}

impl ExitPredictor for HybridPredictor {
    fn predict(&self, state: &UserState) -> f64 {
        let Some(ctx) = state.last_segment().copied() else {
            // nothing watched yet: population non-stall rate
            return self.os.global_non_stall;
        };
        let os = self
            .os
            .contribution(ctx.level, Self::pattern_of(&ctx, state));
        if ctx.stall_time_s > 0.0 {
            let features = build_features(state, &self.scale);
            let nn = self.net.exit_probability(&features);
            (nn + os).clamp(0.0, 1.0)
        } else {
            os
        }
    }
}

const ARTIFACT_VERSION: u32 = 1;

/// Shape metadata stored with the weights so readers can sanity-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactShape {
    pub conv_layers: usize,
    pub channels: usize,
    pub kernel: usize,
    pub input: (usize, usize),
}

/// Versioned JSON artifact bundling the network, tables, and scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorArtifact {
    pub version: u32,
    pub shape: ArtifactShape,
    pub predictor: HybridPredictor,
}

impl PredictorArtifact {
    pub fn new(predictor: HybridPredictor) -> Self {
        PredictorArtifact {
            version: ARTIFACT_VERSION,
            shape: ArtifactShape {
                conv_layers: net::CONV_LAYERS,
                channels: net::CHANNELS,
                kernel: net::KERNEL,
                input: (features::FEATURE_CHANNELS, features::FEATURE_LEN),
            },
            predictor,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).expect("artifact serializes");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        // peek at the version before strict decoding
        let probe: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("model json: {e}")))?;
        let version = probe
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Corrupt("model json missing version".into()))?
            as u32;
        if version != ARTIFACT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: ARTIFACT_VERSION,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("model json: {e}")))
    }
}
