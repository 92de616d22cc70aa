//! Trace-driven adaptive-bitrate playback simulation with per-user
//! engagement tuning.
//!
//! The crate models a streaming client end to end: manifests and bandwidth
//! traces feed a deterministic buffer simulator; pluggable selection rules
//! (a throughput+buffer rule and an exhaustive lookahead) choose levels
//! under tunable objective weights; synthetic users decide when to leave; a
//! hybrid predictor estimates per-segment exit probability; Monte Carlo
//! rollouts score candidate objective parameters; and a Gaussian-process
//! optimizer adjusts those parameters per user, online, triggered by stall
//! events.
//!
//! The `book/` directory of the repository walks through each layer with
//! runnable snippets; those snippets compile and run as doc-tests of this
//! crate (see [`guide`]).

pub mod abr;
pub mod bandwidth;
pub mod error;
pub mod manifest;
pub mod mc;
pub mod metrics;
pub mod obo;
pub mod params;
pub mod player;
pub mod predictor;
pub mod rng;
pub mod synth;
pub mod user;

mod guide;

pub use abr::{hyb_select, mpc_select, robust_bandwidth, Abr, AbrConfig, AbrKind};
pub use bandwidth::{fit_bandwidth_model, BandwidthModel, BandwidthTrace};
pub use error::{Error, Result};
pub use manifest::{load_manifest, QualityLevel, VideoManifest};
pub use mc::{evaluate_parameters, prune_early, prune_preplay, McConfig, McEstimate};
pub use metrics::{completion_rate, qoe_lin, stall_exit_rate, ExitCause, SessionTrace};
pub use obo::{run_session, OboConfig, SessionConfig, SessionResult, TuningMode};
pub use params::{ParamBox, QoeParams};
pub use player::{step, BMaxRule, PlayerEnv, SegmentOutcome};
pub use predictor::{
    build_features, build_os_tables, gradient_check, train, ExitNet, ExitPredictor, FeatureMatrix,
    FeatureScale, HybridPredictor, OsTables, PredictorArtifact, TrainConfig, UserState,
};
pub use synth::{synthesize_logs, DatasetKind, LogRow, SynthConfig};
pub use user::{
    grid, hazard_exit_prob, rule_exit, EngagementModel, HazardUser, RuleUser, SegmentContext,
    StallResponse,
};
