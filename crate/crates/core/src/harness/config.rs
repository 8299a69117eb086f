//! Experiment configuration, loaded from TOML.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{AgentKind, CpoConfig, PpoConfig, WcsacConfig};
use crate::env::{ConditionMode, EpisodeConfig, TraceSource, TrafficSource};
use crate::error::{Error, Result};
use crate::network_model::{default_synthetic_model, QoSModel};
use crate::traffic::{read_series, scale_series, synthetic_diurnal_series, PredictorConfig, TraceOptions, SUPPORT_MAX, SUPPORT_MIN};

/// Seed of the bundled diurnal series (the contents of `data/diurnal_trace.csv`).
pub const BUNDLED_TRACE_SEED: u64 = 2024;

/// A replayed CSV trace and how it is shaped into per-TTI traffic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSpec {
    /// `timestamp,value` CSV; the bundled synthetic series when absent.
    pub path: Option<PathBuf>,
    pub scale_low: f64,
    pub scale_high: f64,
    pub noise_sigma: f64,
    pub offset: f64,
    pub ttis_per_sample: usize,
}

impl Default for TraceSpec {
    fn default() -> Self {
        TraceSpec {
            path: None,
            scale_low: 1.0,
            scale_high: 3.0,
            noise_sigma: 0.75,
            offset: 0.0,
            ttis_per_sample: 60,
        }
    }
}

impl TraceSpec {
    pub fn with_offset(&self, offset: f64) -> Self {
        TraceSpec {
            offset,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TrafficSpec {
    /// Domain-randomised traffic.
    Randomized {
        #[serde(default = "default_true")]
        per_dti: bool,
    },
    Trace(TraceSpec),
    /// The same traffic level in every TTI.
    Constant { level: f64 },
}

fn default_true() -> bool {
    true
}

impl Default for TrafficSpec {
    fn default() -> Self {
        TrafficSpec::Trace(TraceSpec::default())
    }
}

impl TrafficSpec {
    pub fn randomized() -> Self {
        TrafficSpec::Randomized { per_dti: true }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            TrafficSpec::Randomized { .. } => "randomized".into(),
            TrafficSpec::Trace(t) if t.offset == 0.0 => "trace".into(),
            TrafficSpec::Trace(t) => format!("trace{:+}", t.offset),
            TrafficSpec::Constant { level } => format!("constant{level}"),
        }
    }

    pub fn build(&self, episode: &EpisodeConfig) -> Result<TrafficSource> {
        match self {
            TrafficSpec::Randomized { per_dti } => Ok(TrafficSource::Randomized { per_dti: *per_dti }),
            TrafficSpec::Trace(t) => {
                let raw = match &t.path {
                    Some(p) => read_series(p)?,
                    None => synthetic_diurnal_series(BUNDLED_TRACE_SEED)
                        .into_iter()
                        .map(|(_, v)| v)
                        .collect(),
                };
                let opts = TraceOptions {
                    scale_to: (t.scale_low, t.scale_high),
                    noise_sigma: t.noise_sigma,
                    offset: t.offset,
                    ttis_per_sample: t.ttis_per_sample,
                    dti_ttis: episode.ttis_per_dti,
                    bounds: (SUPPORT_MIN, SUPPORT_MAX),
                };
                Ok(TrafficSource::Trace(TraceSource {
                    base: scale_series(&raw, &opts)?,
                    noise_sigma: t.noise_sigma,
                    bounds: opts.bounds,
                }))
            }
            TrafficSpec::Constant { level } => {
                if !(*level >= 0.0) {
                    return Err(Error::Config(format!("constant traffic level {level} is negative")));
                }
                Ok(TrafficSource::Fixed(vec![*level; episode.dti_count * episode.ttis_per_dti]))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub risk_level: f64,
    /// Multiplies every learning rate of the loaded agent.
    pub lr_scale: f64,
    pub epochs: usize,
    pub condition: ConditionMode,
    /// Traffic to fine-tune on; the experiment's traffic when absent.
    pub traffic: Option<TrafficSpec>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            risk_level: 0.99,
            lr_scale: 0.1,
            epochs: 500,
            condition: ConditionMode::Deterministic(1.0),
            traffic: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub d_values: Vec<f64>,
    pub noise_sigmas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            d_values: (0..=12).map(|i| -3.0 + 0.5 * f64::from(i)).collect(),
            noise_sigmas: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub agent: AgentKind,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// QoS model CSV; the calibrated synthetic model when absent.
    pub model: Option<PathBuf>,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    /// Deterministic episodes per epoch used to pick the best checkpoint.
    pub validation_episodes: usize,
    pub eval_episodes: usize,
    pub episode: EpisodeConfig,
    pub traffic: TrafficSpec,
    pub predictor: PredictorConfig,
    pub wcsac: WcsacConfig,
    pub cpo: CpoConfig,
    pub ppo: PpoConfig,
    pub finetune: FinetuneConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            agent: AgentKind::Wcsac,
            seed: 0,
            out_dir: PathBuf::from("runs"),
            model: None,
            epochs: 100,
            episodes_per_epoch: 10,
            validation_episodes: 30,
            eval_episodes: 100,
            episode: EpisodeConfig::default(),
            traffic: TrafficSpec::randomized(),
            predictor: PredictorConfig::default(),
            wcsac: WcsacConfig::default(),
            cpo: CpoConfig::default(),
            ppo: PpoConfig::default(),
            finetune: FinetuneConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.predictor.validate()?;
        self.wcsac.validate()?;
        if self.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be at least 1".into()));
        }
        if self.episodes_per_epoch == 0 {
            return Err(Error::Config("episodes_per_epoch must be at least 1".into()));
        }
        if self.cpo.max_kl <= 0.0 || self.cpo.shaping_coef < 0.0 {
            return Err(Error::Config("cpo needs max_kl > 0 and shaping_coef >= 0".into()));
        }
        if self.ppo.reward_weight < 0.0 || self.ppo.cost_weight < 0.0 {
            return Err(Error::Config("ppo weights must be non-negative".into()));
        }
        Ok(())
    }

    /// The QoS model named by the config.
    pub fn load_model(&self) -> Result<Arc<QoSModel>> {
        match &self.model {
            Some(p) => Ok(Arc::new(QoSModel::load(p)?)),
            None => Ok(Arc::new(default_synthetic_model())),
        }
    }

    /// Hex SHA-256 prefix of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(&serde_json::to_value(self).expect("config serialises"))
    }
}

pub fn hash_json(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
