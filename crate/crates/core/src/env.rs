//! The slice-scaling CMDP: one step per decision interval (DTI), QoS
//! evaluated per TTI through the network model.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network_model::QoSModel;
use crate::traffic::{
    add_truncated_noise, predict_cdf, randomize_dti_distribution, sample_dti_traffic,
    PredictorConfig, TrafficDistribution, SUPPORT,
};

/// Observation width: traffic CDF over the support plus the running degradation.
pub const OBS_DIM: usize = SUPPORT.len() + 1;

const TIE_TOLERANCE: f64 = 1e-9;

/// How per-TTI QoS is produced from the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "d", rename_all = "lowercase")]
pub enum ConditionMode {
    /// Draw from the model's Gaussian.
    Stochastic,
    /// `mu + d * sigma`; smaller `d` is worse.
    Deterministic(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub dti_count: usize,
    pub ttis_per_dti: usize,
    pub q_thresh: f64,
    pub beta_thresh: f64,
    /// Resource normalisation (single resource).
    pub eta: f64,
    pub capacity: f64,
    pub action_grid: Vec<f64>,
    pub condition: ConditionMode,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            dti_count: 10,
            ttis_per_dti: 60,
            q_thresh: 2.0,
            beta_thresh: 0.10,
            eta: 1.0,
            capacity: 1.0,
            action_grid: crate::network_model::default_bandwidth_axis(),
            condition: ConditionMode::Stochastic,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dti_count == 0 || self.ttis_per_dti == 0 {
            return Err(Error::Config("dti_count and ttis_per_dti must be >= 1".into()));
        }
        if !(self.beta_thresh > 0.0 && self.beta_thresh < 1.0) {
            return Err(Error::Config(format!("beta_thresh {} not in (0,1)", self.beta_thresh)));
        }
        if !(self.eta > 0.0) {
            return Err(Error::Config("eta must be positive".into()));
        }
        if self.action_grid.is_empty()
            || self.action_grid.windows(2).any(|w| w[1] <= w[0])
            || self.action_grid.iter().any(|r| !(*r > 0.0 && *r <= self.capacity))
        {
            return Err(Error::Config(
                "action grid must be strictly increasing within (0, capacity]".into(),
            ));
        }
        Ok(())
    }

    pub fn min_fraction(&self) -> f64 {
        self.action_grid[0]
    }

    pub fn max_fraction(&self) -> f64 {
        *self.action_grid.last().expect("validated non-empty grid")
    }

    pub fn reward_for(&self, bandwidth: f64) -> f64 {
        1.0 - self.eta * bandwidth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Predicted CDF of the next DTI's traffic over the support.
    pub traffic_cdf: Vec<f64>,
    /// Degradation accumulated so far.
    pub beta_so_far: f64,
}

impl Observation {
    pub fn features(&self) -> [f64; OBS_DIM] {
        let mut f = [0.0; OBS_DIM];
        f[..SUPPORT.len()].copy_from_slice(&self.traffic_cdf);
        f[SUPPORT.len()] = self.beta_so_far;
        f
    }

    pub fn predicted_distribution(&self) -> Result<TrafficDistribution> {
        TrafficDistribution::from_cdf(&self.traffic_cdf)
    }
}

/// Running sums behind the degradation ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLedger {
    pub degraded_traffic: f64,
    pub total_traffic: f64,
    pub episode_total_traffic: f64,
}

/// Traffic-weighted fraction of elapsed traffic that was degraded (0 when no
/// traffic has elapsed).
pub fn compute_beta(ledger: &EpisodeLedger) -> f64 {
    if ledger.total_traffic > 0.0 {
        ledger.degraded_traffic / ledger.total_traffic
    } else {
        0.0
    }
}

/// Traffic carried by degraded TTIs.
pub fn degraded_traffic(traffic: &[f64], degraded: &[bool]) -> f64 {
    traffic
        .iter()
        .zip(degraded)
        .filter(|(_, d)| **d)
        .map(|(x, _)| *x)
        .sum()
}

/// Denominator substitute for streaming use, where the episode's total
/// traffic is not known in advance. Not used by the simulator.
pub fn streaming_total_estimate(cfg: &EpisodeConfig, mean_predicted_traffic: f64) -> f64 {
    (cfg.dti_count * cfg.ttis_per_dti) as f64 * mean_predicted_traffic
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Policy output in [-1, 1].
    Raw(f64),
    /// Bandwidth fraction, snapped to the grid.
    Fraction(f64),
}

fn snap_to_grid(value: f64, grid: &[f64]) -> f64 {
    let mut best = grid[0];
    let mut best_dist = (value - best).abs();
    for &g in &grid[1..] {
        let d = (value - g).abs();
        // Ties go to the larger allocation.
        if d < best_dist - TIE_TOLERANCE || (d - best_dist).abs() <= TIE_TOLERANCE {
            best = g;
            best_dist = d;
        }
    }
    best
}

/// Map an action onto the allowed bandwidth grid.
pub fn quantize_action(action: Action, grid: &[f64]) -> f64 {
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let target = match action {
        Action::Raw(raw) => {
            let raw = if raw.is_nan() { -1.0 } else { raw.clamp(-1.0, 1.0) };
            lo + (raw + 1.0) * 0.5 * (hi - lo)
        }
        Action::Fraction(f) => f.clamp(lo, hi),
    };
    snap_to_grid(target, grid)
}

/// Where an episode's traffic comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrafficSource {
    /// Domain randomisation: per-DTI traffic drawn i.i.d. from randomised
    /// distributions. With `per_dti == false` one distribution is shared by
    /// the whole episode.
    Randomized { per_dti: bool },
    /// A DTI-aligned window of a replayed trace with fresh per-TTI noise.
    Trace(TraceSource),
    /// Exactly these per-TTI values (first `dti_count * ttis_per_dti` used).
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSource {
    /// Scaled and offset per-TTI traffic without noise.
    pub base: Vec<f64>,
    pub noise_sigma: f64,
    pub bounds: (f64, f64),
}

impl TrafficSource {
    /// Materialise one episode of per-TTI traffic.
    pub fn episode_traffic<R: Rng + ?Sized>(&self, cfg: &EpisodeConfig, rng: &mut R) -> Result<Vec<f64>> {
        let n = cfg.ttis_per_dti;
        let len = cfg.dti_count * n;
        match self {
            TrafficSource::Randomized { per_dti } => {
                let mut out = Vec::with_capacity(len);
                let shared = randomize_dti_distribution(rng);
                for _ in 0..cfg.dti_count {
                    let dist = if *per_dti {
                        randomize_dti_distribution(rng)
                    } else {
                        shared.clone()
                    };
                    out.extend(sample_dti_traffic(&dist, n, rng));
                }
                Ok(out)
            }
            TrafficSource::Trace(src) => {
                let windows = src.base.len() / n;
                if windows < cfg.dti_count {
                    return Err(Error::Config(format!(
                        "trace has {} DTIs, episode needs {}",
                        windows, cfg.dti_count
                    )));
                }
                let start = rng.random_range(0..=windows - cfg.dti_count) * n;
                Ok(add_truncated_noise(
                    &src.base[start..start + len],
                    src.noise_sigma,
                    src.bounds,
                    rng,
                ))
            }
            TrafficSource::Fixed(values) => {
                if values.len() < len {
                    return Err(Error::Config(format!(
                        "fixed traffic has {} TTIs, episode needs {len}",
                        values.len()
                    )));
                }
                Ok(values[..len].to_vec())
            }
        }
    }
}

/// Per-TTI diagnostics of one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub dti: usize,
    pub bandwidth: f64,
    pub traffic: Vec<f64>,
    /// `None` for zero-traffic TTIs, where no QoS is evaluated.
    pub qos: Vec<Option<f64>>,
    pub degraded: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub reward: f64,
    pub cost: f64,
    pub next_observation: Observation,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub dti: usize,
    pub bandwidth: f64,
    pub reward: f64,
    pub cost: f64,
    pub beta: f64,
    pub qos: Vec<Option<f64>>,
}

impl StepRecord {
    pub fn from_outcome(o: &StepOutcome) -> Self {
        StepRecord {
            dti: o.info.dti,
            bandwidth: o.info.bandwidth,
            reward: o.reward,
            cost: o.cost,
            beta: o.next_observation.beta_so_far,
            qos: o.info.qos.clone(),
        }
    }
}

/// Append step records as JSON lines.
pub fn write_episode_log<W: Write>(records: &[StepRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<episode log>", e))?;
    }
    Ok(())
}

/// A single-slice environment instance.
#[derive(Debug, Clone)]
pub struct SliceEnv {
    model: Arc<QoSModel>,
    config: EpisodeConfig,
    source: TrafficSource,
    predictor: PredictorConfig,
    traffic: Vec<f64>,
    ledger: EpisodeLedger,
    dti: usize,
    observation: Option<Observation>,
    qos_rng: ChaCha8Rng,
    predictor_rng: ChaCha8Rng,
}

impl SliceEnv {
    pub fn new(
        model: Arc<QoSModel>,
        config: EpisodeConfig,
        source: TrafficSource,
        predictor: PredictorConfig,
    ) -> Result<Self> {
        config.validate()?;
        predictor.validate()?;
        Ok(SliceEnv {
            model,
            config,
            source,
            predictor,
            traffic: Vec::new(),
            ledger: EpisodeLedger::default(),
            dti: 0,
            observation: None,
            qos_rng: ChaCha8Rng::seed_from_u64(0),
            predictor_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn model(&self) -> &QoSModel {
        &self.model
    }

    pub fn ledger(&self) -> &EpisodeLedger {
        &self.ledger
    }

    /// The current episode's per-TTI traffic.
    pub fn episode_traffic(&self) -> &[f64] {
        &self.traffic
    }

    pub fn is_done(&self) -> bool {
        self.observation.is_some() && self.dti >= self.config.dti_count
    }

    pub fn set_condition(&mut self, condition: ConditionMode) {
        self.config.condition = condition;
    }

    pub fn set_predictor(&mut self, predictor: PredictorConfig) {
        self.predictor = predictor;
    }

    fn predict_next(&mut self) -> Result<TrafficDistribution> {
        let n = self.config.ttis_per_dti;
        let slice = &self.traffic[self.dti * n..(self.dti + 1) * n];
        predict_cdf(slice, &self.predictor, &mut self.predictor_rng)
    }

    /// Start a new episode. Traffic is drawn from `rng` first; QoS sampling
    /// and prediction noise then run on their own streams seeded from `rng`.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Observation> {
        self.traffic = self.source.episode_traffic(&self.config, rng)?;
        self.qos_rng = ChaCha8Rng::seed_from_u64(rng.random());
        self.predictor_rng = ChaCha8Rng::seed_from_u64(rng.random());
        self.ledger = EpisodeLedger {
            episode_total_traffic: self.traffic.iter().sum(),
            ..EpisodeLedger::default()
        };
        self.dti = 0;
        let dist = self.predict_next()?;
        let obs = Observation {
            traffic_cdf: dist.cdf,
            beta_so_far: 0.0,
        };
        self.observation = Some(obs.clone());
        Ok(obs)
    }

    /// Apply a scaling decision for the current DTI.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let current = self
            .observation
            .clone()
            .ok_or_else(|| Error::Lifecycle("step called before reset".into()))?;
        if self.dti >= self.config.dti_count {
            return Err(Error::Lifecycle("step called after episode end".into()));
        }
        let bandwidth = quantize_action(action, &self.config.action_grid);
        assert!(bandwidth <= self.config.capacity, "allocation exceeds capacity");

        let n = self.config.ttis_per_dti;
        let start = self.dti * n;
        let mut qos = Vec::with_capacity(n);
        let mut degraded = Vec::with_capacity(n);
        let mut degraded_traffic = 0.0;
        let mut dti_traffic = 0.0;
        for k in start..start + n {
            let x = self.traffic[k];
            if x <= 0.0 {
                qos.push(None);
                degraded.push(false);
                continue;
            }
            let q = match self.config.condition {
                ConditionMode::Stochastic => self.model.sample_qos(x, bandwidth, &mut self.qos_rng),
                ConditionMode::Deterministic(d) => self.model.deterministic_qos(x, bandwidth, d),
            };
            let bad = q <= self.config.q_thresh;
            if bad {
                degraded_traffic += x;
            }
            dti_traffic += x;
            qos.push(Some(q));
            degraded.push(bad);
        }
        self.ledger.degraded_traffic += degraded_traffic;
        self.ledger.total_traffic += dti_traffic;
        let cost = if self.ledger.episode_total_traffic > 0.0 {
            degraded_traffic / self.ledger.episode_total_traffic
        } else {
            0.0
        };
        let reward = self.config.reward_for(bandwidth);

        let info = StepInfo {
            dti: self.dti,
            bandwidth,
            traffic: self.traffic[start..start + n].to_vec(),
            qos,
            degraded,
        };
        self.dti += 1;
        let done = self.dti >= self.config.dti_count;
        let traffic_cdf = if done {
            current.traffic_cdf
        } else {
            self.predict_next()?.cdf
        };
        let next_observation = Observation {
            traffic_cdf,
            beta_so_far: compute_beta(&self.ledger),
        };
        self.observation = Some(next_observation.clone());
        Ok(StepOutcome {
            reward,
            cost,
            next_observation,
            done,
            info,
        })
    }
}
