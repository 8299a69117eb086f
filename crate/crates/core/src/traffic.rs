//! Traffic traces, per-DTI traffic distributions and prediction oracles.

use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Traffic levels (users/sec) over which distributions are expressed.
pub const SUPPORT: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];
pub const SUPPORT_MIN: f64 = 1.0;
pub const SUPPORT_MAX: f64 = 5.0;

const PMF_TOLERANCE: f64 = 1e-9;

/// Per-TTI traffic in users/sec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficTrace {
    pub values: Vec<f64>,
    pub tti_seconds: f64,
    pub dti_ttis: usize,
}

impl TrafficTrace {
    pub fn new(values: Vec<f64>, dti_ttis: usize) -> Result<Self> {
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Input("trace values must be finite and non-negative".into()));
        }
        if dti_ttis == 0 {
            return Err(Error::Input("dti_ttis must be at least 1".into()));
        }
        Ok(TrafficTrace {
            values,
            tti_seconds: 1.0,
            dti_ttis,
        })
    }

    /// Number of whole DTIs contained in the trace.
    pub fn dti_count(&self) -> usize {
        self.values.len() / self.dti_ttis
    }

    pub fn peak(&self) -> f64 {
        peak_of_values(&self.values)
    }
}

/// How a CSV series is turned into per-TTI traffic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Min-max scaling target.
    pub scale_to: (f64, f64),
    /// Std of per-TTI additive noise, truncated to `bounds`.
    pub noise_sigma: f64,
    /// Added after scaling.
    pub offset: f64,
    /// Each CSV row is held constant for this many TTIs.
    pub ttis_per_sample: usize,
    pub dti_ttis: usize,
    pub bounds: (f64, f64),
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            scale_to: (1.0, 3.0),
            noise_sigma: 0.75,
            offset: 0.0,
            ttis_per_sample: 1,
            dti_ttis: 60,
            bounds: (SUPPORT_MIN, SUPPORT_MAX),
        }
    }
}

/// Read a `timestamp,value` CSV; rows are kept in file order.
pub fn read_series(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let value = record
            .get(1)
            .ok_or_else(|| "missing value column".to_string())
            .and_then(|s| s.trim().parse::<f64>().map_err(|e| format!("value: {e}")))
            .map_err(|reason| Error::Parse {
                path: path.to_path_buf(),
                line,
                reason,
            })?;
        if !value.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("non-finite value {value}"),
            });
        }
        out.push(value);
    }
    Ok(out)
}

pub fn write_series(series: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Input(format!("writing {}: {e}", path.display()));
    w.write_record(["timestamp", "value"]).map_err(csv_err)?;
    for (t, v) in series {
        w.write_record([t.to_string(), v.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Min-max scale, offset and expand a raw series to per-TTI base traffic
/// (no noise).
pub fn scale_series(raw: &[f64], opts: &TraceOptions) -> Result<Vec<f64>> {
    let (low, high) = opts.scale_to;
    if !(high > low) {
        return Err(Error::Scaling(format!("scale range ({low}, {high}) is empty")));
    }
    if raw.is_empty() {
        return Err(Error::Scaling("series is empty".into()));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::Scaling(format!("series is constant ({min})")));
    }
    if opts.ttis_per_sample == 0 {
        return Err(Error::Input("ttis_per_sample must be at least 1".into()));
    }
    let scaled = raw.iter().map(|v| {
        // Endpoints map exactly onto the target range.
        let s = if *v == min {
            low
        } else if *v == max {
            high
        } else {
            low + (v - min) / (max - min) * (high - low)
        };
        s + opts.offset
    });
    Ok(scaled
        .flat_map(|v| std::iter::repeat_n(v, opts.ttis_per_sample))
        .collect())
}

/// `base + n`, `n ~ N(0, sigma^2)` truncated so the result stays in `bounds`.
///
/// A base outside `bounds` is clamped first when noise is active.
pub fn truncated_noise_sample<R: Rng + ?Sized>(
    base: f64,
    sigma: f64,
    bounds: (f64, f64),
    rng: &mut R,
) -> f64 {
    if sigma <= 0.0 {
        return base;
    }
    let base = base.clamp(bounds.0, bounds.1);
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = base + sigma * z;
        if v >= bounds.0 && v <= bounds.1 {
            return v;
        }
    }
}

pub fn add_truncated_noise<R: Rng + ?Sized>(
    base: &[f64],
    sigma: f64,
    bounds: (f64, f64),
    rng: &mut R,
) -> Vec<f64> {
    base.iter()
        .map(|&b| truncated_noise_sample(b, sigma, bounds, rng))
        .collect()
}

/// Load a CSV series, scale it and add truncated per-TTI noise.
pub fn load_trace<R: Rng + ?Sized>(
    path: impl AsRef<Path>,
    opts: &TraceOptions,
    rng: &mut R,
) -> Result<TrafficTrace> {
    let raw = read_series(path)?;
    trace_from_series(&raw, opts, rng)
}

pub fn trace_from_series<R: Rng + ?Sized>(
    raw: &[f64],
    opts: &TraceOptions,
    rng: &mut R,
) -> Result<TrafficTrace> {
    let base = scale_series(raw, opts)?;
    let values = add_truncated_noise(&base, opts.noise_sigma, opts.bounds, rng);
    TrafficTrace::new(values, opts.dti_ttis)
}

/// A day of per-minute diurnal traffic: a night trough, a late-morning peak
/// and a larger evening peak, plus mild measurement jitter.
pub fn synthetic_diurnal_series(seed: u64) -> Vec<(f64, f64)> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, 0.03).expect("valid normal");
    (0..1440)
        .map(|minute| {
            let h = f64::from(minute) / 60.0;
            let bump = |center: f64, width: f64| (-0.5 * ((h - center) / width).powi(2)).exp();
            let v = 0.15 + 0.55 * bump(11.5, 2.5) + 0.8 * bump(20.0, 2.0) + 0.1 * (h / 24.0);
            (f64::from(minute) * 60.0, (v + jitter.sample(&mut rng)).max(0.0))
        })
        .collect()
}

/// A discrete traffic distribution over [`SUPPORT`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficDistribution {
    pub support: Vec<f64>,
    pub pmf: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl TrafficDistribution {
    /// Normalise non-negative weights into a distribution over [`SUPPORT`].
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.len() != SUPPORT.len() {
            return Err(Error::Input(format!(
                "expected {} weights, got {}",
                SUPPORT.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Input("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Input("weights sum to zero".into()));
        }
        let pmf: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Absorb rounding so the last entry is exactly one.
        *cdf.last_mut().expect("non-empty") = 1.0;
        for c in cdf.iter_mut() {
            *c = c.min(1.0);
        }
        Ok(TrafficDistribution {
            support: SUPPORT.to_vec(),
            pmf,
            cdf,
        })
    }

    pub fn uniform() -> Self {
        Self::from_weights(&[1.0; 5]).expect("uniform weights are valid")
    }

    pub fn point_mass(level: f64) -> Self {
        let mut w = [0.0; 5];
        w[support_index(level)] = 1.0;
        Self::from_weights(&w).expect("point mass is valid")
    }

    /// Empirical distribution of continuous values rounded to the nearest level.
    pub fn empirical(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("empirical distribution of no values".into()));
        }
        let mut counts = [0.0; 5];
        for &v in values {
            counts[support_index(v)] += 1.0;
        }
        Self::from_weights(&counts)
    }

    /// Recover a distribution from a CDF vector (e.g. an observation).
    pub fn from_cdf(cdf: &[f64]) -> Result<Self> {
        let mut prev = 0.0;
        let weights: Vec<f64> = cdf
            .iter()
            .map(|&c| {
                let p = (c - prev).max(0.0);
                prev = c;
                p
            })
            .collect();
        Self::from_weights(&weights)
    }

    pub fn check(&self) -> Result<()> {
        let total: f64 = self.pmf.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE || self.pmf.iter().any(|p| *p < 0.0) {
            return Err(Error::Input(format!("pmf does not sum to one ({total})")));
        }
        if self.cdf.windows(2).any(|w| w[1] < w[0])
            || (self.cdf.last().copied().unwrap_or(0.0) - 1.0).abs() > PMF_TOLERANCE
        {
            return Err(Error::Input("cdf is not a valid CDF".into()));
        }
        Ok(())
    }

    /// Largest support level carrying positive probability.
    pub fn peak(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.pmf)
            .rev()
            .find(|(_, p)| **p > 1e-12)
            .map_or(self.support[0], |(s, _)| *s)
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.pmf).map(|(s, p)| s * p).sum()
    }
}

/// Index of the nearest support level (clamped; halves round up).
pub fn support_index(value: f64) -> usize {
    let level = (value.clamp(SUPPORT_MIN, SUPPORT_MAX) + 0.5).floor();
    (level as usize).clamp(1, SUPPORT.len()) - 1
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Discretised truncated Gaussian over [`SUPPORT`]: level `k` receives the
/// mass of `[k - 0.5, k + 0.5]`.
pub fn discretized_gaussian(center: f64, spread: f64) -> TrafficDistribution {
    let weights: Vec<f64> = SUPPORT
        .iter()
        .map(|&k| {
            std_normal_cdf((k + 0.5 - center) / spread) - std_normal_cdf((k - 0.5 - center) / spread)
        })
        .collect();
    TrafficDistribution::from_weights(&weights).unwrap_or_else(|_| {
        // Far-out centre with vanishing spread: all mass underflowed.
        TrafficDistribution::point_mass(center)
    })
}

/// Ranges of the domain-randomised traffic family.
pub const DR_CENTER_RANGE: (f64, f64) = (1.0, 5.0);
pub const DR_SPREAD_RANGE: (f64, f64) = (0.25, 1.5);

/// Draw one member of the domain-randomisation family.
pub fn randomize_dti_distribution<R: Rng + ?Sized>(rng: &mut R) -> TrafficDistribution {
    let center = rng.random_range(DR_CENTER_RANGE.0..DR_CENTER_RANGE.1);
    let spread = rng.random_range(DR_SPREAD_RANGE.0..DR_SPREAD_RANGE.1);
    discretized_gaussian(center, spread)
}

/// `n` i.i.d. draws from `dist`.
pub fn sample_dti_traffic<R: Rng + ?Sized>(
    dist: &TrafficDistribution,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let k = dist.cdf.iter().position(|c| u < *c).unwrap_or(dist.cdf.len() - 1);
            dist.support[k]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorMode {
    Perfect,
    Noisy,
    Random,
}

impl std::str::FromStr for PredictorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(PredictorMode::Perfect),
            "noisy" => Ok(PredictorMode::Noisy),
            "random" => Ok(PredictorMode::Random),
            other => Err(Error::Config(format!("unknown predictor mode `{other}`"))),
        }
    }
}

/// External traffic-prediction oracle feeding the agent's observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub mode: PredictorMode,
    pub noise_sigma: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            mode: PredictorMode::Perfect,
            noise_sigma: 0.0,
        }
    }
}

impl PredictorConfig {
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn noisy(noise_sigma: f64) -> Self {
        PredictorConfig {
            mode: PredictorMode::Noisy,
            noise_sigma,
        }
    }

    pub fn random() -> Self {
        PredictorConfig {
            mode: PredictorMode::Random,
            noise_sigma: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "predictor noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Predicted distribution of the next DTI's traffic.
///
/// Noisy mode perturbs each pmf bin with Gaussian noise truncated to
/// `[-2 sigma, 2 sigma]`, clips at zero and renormalises.
pub fn predict_cdf<R: Rng + ?Sized>(
    actual_next_dti: &[f64],
    config: &PredictorConfig,
    rng: &mut R,
) -> Result<TrafficDistribution> {
    if actual_next_dti.is_empty() {
        return Err(Error::Input("cannot predict an empty DTI".into()));
    }
    match config.mode {
        PredictorMode::Perfect => TrafficDistribution::empirical(actual_next_dti),
        PredictorMode::Random => Ok(TrafficDistribution::uniform()),
        PredictorMode::Noisy => {
            let perfect = TrafficDistribution::empirical(actual_next_dti)?;
            let sigma = config.noise_sigma;
            if sigma <= 0.0 {
                return Ok(perfect);
            }
            let weights: Vec<f64> = perfect
                .pmf
                .iter()
                .map(|p| {
                    let n = truncated_noise_sample(0.0, sigma, (-2.0 * sigma, 2.0 * sigma), rng);
                    (p + n).max(0.0)
                })
                .collect();
            if weights.iter().sum::<f64>() > 0.0 {
                TrafficDistribution::from_weights(&weights)
            } else {
                Ok(TrafficDistribution::uniform())
            }
        }
    }
}

pub fn peak_of_values(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
