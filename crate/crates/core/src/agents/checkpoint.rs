//! Serialisable snapshots of any agent, loadable for evaluation, sweeps and
//! fine-tuning.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cpo::CpoAgent;
use super::policy::std_normal;
use super::ppo::PpoAgent;
use super::pred_alloc::PredAllocPolicy;
use super::wcsac::WcsacParams;
use crate::error::{Error, Result};
use crate::traffic::TrafficDistribution;

pub const CHECKPOINT_FORMAT: &str = "slicescale-checkpoint/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Wcsac,
    Cpo,
    WcCpo,
    Ppo,
    PredAlloc,
}

impl AgentKind {
    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Wcsac => "wcsac",
            AgentKind::Cpo => "cpo",
            AgentKind::WcCpo => "wc-cpo",
            AgentKind::Ppo => "ppo",
            AgentKind::PredAlloc => "pred-alloc",
        }
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wcsac" => Ok(AgentKind::Wcsac),
            "cpo" | "avg-cpo" => Ok(AgentKind::Cpo),
            "wc-cpo" => Ok(AgentKind::WcCpo),
            "ppo" | "avg-ppo" => Ok(AgentKind::Ppo),
            "pred-alloc" => Ok(AgentKind::PredAlloc),
            other => Err(Error::Config(format!("unknown agent kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentParams {
    Wcsac(WcsacParams),
    Cpo(CpoAgent),
    Ppo(PpoAgent),
    PredAlloc(PredAllocPolicy),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format: String,
    pub kind: AgentKind,
    pub params: AgentParams,
    /// Snapshot of the experiment configuration that produced this.
    pub config: serde_json::Value,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl PolicyCheckpoint {
    pub fn new(kind: AgentKind, params: AgentParams, config: serde_json::Value, epoch: usize, rng: ChaCha8Rng) -> Self {
        PolicyCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            kind,
            params,
            config,
            epoch,
            rng,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: PolicyCheckpoint =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format '{}', expected '{CHECKPOINT_FORMAT}'",
                ck.format
            )));
        }
        let consistent = matches!(
            (ck.kind, &ck.params),
            (AgentKind::Wcsac, AgentParams::Wcsac(_))
                | (AgentKind::Cpo | AgentKind::WcCpo, AgentParams::Cpo(_))
                | (AgentKind::Ppo, AgentParams::Ppo(_))
                | (AgentKind::PredAlloc, AgentParams::PredAlloc(_))
        );
        if !consistent {
            return Err(Error::Checkpoint(format!("agent kind {} does not match its parameters", ck.kind)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Load and require a specific agent kind.
    pub fn load_kind(path: impl AsRef<Path>, kinds: &[AgentKind]) -> Result<Self> {
        let ck = Self::load(path)?;
        if !kinds.contains(&ck.kind) {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} agent, expected one of {:?}",
                ck.kind,
                kinds.iter().map(|k| k.name()).collect::<Vec<_>>()
            )));
        }
        Ok(ck)
    }

    /// Raw action in [-1, 1] for the observation features. Deterministic
    /// mode returns the squashed mean; otherwise one policy sample from `rng`.
    pub fn act<R: Rng + ?Sized>(&self, features: &[f64], deterministic: bool, rng: &mut R) -> f64 {
        let a = match &self.params {
            AgentParams::Wcsac(p) => {
                let noise = (!deterministic).then(|| std_normal(rng));
                p.action(features, noise)
            }
            AgentParams::Cpo(agent) => gaussian_act(&agent.policy, features, deterministic, rng),
            AgentParams::Ppo(agent) => gaussian_act(&agent.policy, features, deterministic, rng),
            AgentParams::PredAlloc(p) => {
                let cdf = &features[..features.len() - 1];
                let dist = TrafficDistribution::from_cdf(cdf).unwrap_or_else(|_| TrafficDistribution::uniform());
                p.raw_action(p.decide(&dist))
            }
        };
        if a.is_finite() {
            a.clamp(-1.0, 1.0)
        } else {
            -1.0
        }
    }
}

fn gaussian_act<R: Rng + ?Sized>(
    policy: &super::policy::GaussianPolicy,
    features: &[f64],
    deterministic: bool,
    rng: &mut R,
) -> f64 {
    if deterministic {
        policy.mode(features)
    } else {
        policy.sample(features, rng).0.tanh()
    }
}
