//! Experiment configuration: one JSON file describes the manifest, trace
//! corpus, user population, algorithm, tuning mode, and budgets.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use abrsim::abr::{AbrConfig, AbrKind, HybEstimator};
use abrsim::bandwidth::{default_corpus, BandwidthTrace};
use abrsim::manifest::{load_manifest, VideoManifest};
use abrsim::obo::{Acquisition, OboConfig};
use abrsim::params::{ParamBox, QoeParams};
use abrsim::player::BMaxRule;
use abrsim::user::{default_hazard_population, grid, HazardUser, RuleUser};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ManifestSpec {
    /// The shipped four-tier ladder.
    Default { num_segments: u32 },
    Path { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TraceSpec {
    Synthetic {
        count: usize,
        duration_s: f64,
        seed: u64,
    },
    /// Directory of `timestamp_s,throughput_kbps` CSV files.
    CsvDir { dir: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserSpec {
    /// The 64 deterministic threshold rules.
    RuleGrid,
    Hazard { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModeSpec {
    Fixed { params: QoeParams },
    LingxiFixed { candidates: Vec<QoeParams> },
    LingxiBayes,
}

impl ModeSpec {
    pub fn label(&self) -> &'static str {
        match self {
            ModeSpec::Fixed { .. } => "fixed",
            ModeSpec::LingxiFixed { .. } => "lingxi-fixed",
            ModeSpec::LingxiBayes => "lingxi-bayes",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McSpec {
    pub samples: usize,
    pub t_sample_s: f64,
    pub prune_enabled: bool,
}

impl Default for McSpec {
    fn default() -> Self {
        McSpec {
            samples: 6,
            t_sample_s: 12.0,
            prune_enabled: true,
        }
    }
}

fn default_sessions() -> usize {
    3
}
fn default_bw_window() -> usize {
    8
}
fn default_max_invocations() -> usize {
    1
}
fn default_horizon() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub manifest: ManifestSpec,
    pub traces: TraceSpec,
    pub user_model: UserSpec,
    pub abr: AbrKind,
    #[serde(default = "default_horizon")]
    pub abr_horizon: usize,
    pub mode: ModeSpec,
    pub default_params: QoeParams,
    /// Trained predictor artifact; required for the tuning modes.
    #[serde(default)]
    pub model_path: Option<PathBuf>,
    #[serde(default = "default_sessions")]
    pub sessions_per_cell: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub obo: OboSpec,
    #[serde(default)]
    pub search_box: Option<ParamBox>,
    #[serde(default = "default_bw_window")]
    pub bw_fit_window: usize,
    #[serde(default = "default_max_invocations")]
    pub max_invocations_per_session: usize,
    #[serde(default)]
    pub rtt_s: f64,
    #[serde(default)]
    pub b_max_rule: BMaxRule,
    /// Fixed-parameter grid and candidate list used by the `sweep` command.
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    /// Log-synthesis settings used by the `synth-logs` command.
    #[serde(default)]
    pub synth_sessions_per_pair: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OboSpec {
    pub trials: usize,
    pub eta: u32,
    pub acquisition: Acquisition,
    pub signal_var: f64,
    pub noise_var: f64,
    pub lengthscale_frac: f64,
}

impl Default for OboSpec {
    fn default() -> Self {
        let d = OboConfig::default();
        OboSpec {
            trials: d.trials,
            eta: d.eta,
            acquisition: d.acquisition,
            signal_var: d.signal_var,
            noise_var: d.noise_var,
            lengthscale_frac: d.lengthscale_frac,
        }
    }
}

impl OboSpec {
    pub fn to_config(&self) -> OboConfig {
        OboConfig {
            trials: self.trials,
            eta: self.eta,
            acquisition: self.acquisition,
            signal_var: self.signal_var,
            noise_var: self.noise_var,
            lengthscale_frac: self.lengthscale_frac,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSpec {
    pub fixed_grid: Vec<QoeParams>,
    pub lingxi_fixed_candidates: Vec<QoeParams>,
}

/// One simulated user, either flavor.
#[derive(Debug, Clone)]
pub enum CellUser {
    Rule(RuleUser),
    Hazard(HazardUser),
}

impl CellUser {
    pub fn id(&self) -> String {
        match self {
            CellUser::Rule(u) => u.id(),
            CellUser::Hazard(u) => u.id.clone(),
        }
    }

    pub fn model(&self) -> &dyn abrsim::user::EngagementModel {
        match self {
            CellUser::Rule(u) => u,
            CellUser::Hazard(u) => u,
        }
    }

    pub fn as_rule(&self) -> Option<&RuleUser> {
        match self {
            CellUser::Rule(u) => Some(u),
            CellUser::Hazard(_) => None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing config json")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("config needs at least one seed");
        }
        if self.sessions_per_cell == 0 {
            bail!("sessions_per_cell must be >= 1");
        }
        self.default_params
            .validate()
            .map_err(|e| anyhow::anyhow!("default_params: {e}"))?;
        match (&self.abr, &self.default_params) {
            (AbrKind::Mpc, QoeParams::Mpc { .. }) | (AbrKind::Hyb, QoeParams::Hyb { .. }) => {}
            _ => bail!("default_params variant must match the abr kind"),
        }
        if let ManifestSpec::Path { path } = &self.manifest {
            if !path.exists() {
                bail!("manifest file {} does not exist", path.display());
            }
        }
        if let TraceSpec::CsvDir { dir } = &self.traces {
            if !dir.is_dir() {
                bail!("trace dir {} does not exist", dir.display());
            }
        }
        if let Some(model) = &self.model_path {
            if !model.exists() {
                bail!("model file {} does not exist", model.display());
            }
        }
        if !matches!(self.mode, ModeSpec::Fixed { .. }) && self.model_path.is_none() {
            bail!("mode {} requires model_path", self.mode.label());
        }
        Ok(())
    }

    pub fn load_manifest(&self) -> Result<VideoManifest> {
        match &self.manifest {
            ManifestSpec::Default { num_segments } => {
                Ok(VideoManifest::default_ladder(*num_segments))
            }
            ManifestSpec::Path { path } => {
                load_manifest(path).map_err(|e| anyhow::anyhow!("{e}"))
            }
        }
    }

    pub fn load_traces(&self) -> Result<Vec<BandwidthTrace>> {
        match &self.traces {
            TraceSpec::Synthetic {
                count,
                duration_s,
                seed,
            } => Ok(default_corpus(*seed, *count, *duration_s)),
            TraceSpec::CsvDir { dir } => {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().map(|x| x == "csv").unwrap_or(false))
                    .collect();
                paths.sort();
                if paths.is_empty() {
                    bail!("no csv traces in {}", dir.display());
                }
                paths
                    .iter()
                    .map(|p| {
                        BandwidthTrace::load_csv(p)
                            .map_err(|e| anyhow::anyhow!("trace {}: {e}", p.display()))
                    })
                    .collect()
            }
        }
    }

    pub fn load_users(&self, num_levels: usize) -> Vec<CellUser> {
        match &self.user_model {
            UserSpec::RuleGrid => grid().into_iter().map(CellUser::Rule).collect(),
            UserSpec::Hazard { count, seed } => default_hazard_population(*count, num_levels, *seed)
                .into_iter()
                .map(CellUser::Hazard)
                .collect(),
        }
    }

    pub fn abr_config(&self) -> AbrConfig {
        AbrConfig {
            kind: self.abr,
            horizon: self.abr_horizon,
            hyb_estimator: HybEstimator::LastSample,
            error_window: 5,
        }
    }

    pub fn search_box_or_default(&self) -> ParamBox {
        self.search_box.clone().unwrap_or(match self.abr {
            AbrKind::Mpc => ParamBox::default_mpc(),
            AbrKind::Hyb => ParamBox::default_hyb(),
        })
    }
}
