//! Regression-based network model.
//!
//! A [`QoSModel`] is a grid of Gaussian QoS parameters indexed by
//! (traffic, bandwidth fraction). Between nodes it interpolates bilinearly and
//! outside the grid it clamps to the nearest axis bound.
//!
//! Network conditions are summarised by a scalar `d`. Under a deterministic
//! condition the QoS is `mu + d * sigma`, so QoS is non-decreasing in `d` and
//! `d = -3` is the worst case while `d = +3` is the best case.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when matching sample coordinates to grid nodes.
const NODE_TOLERANCE: f64 = 1e-9;

/// Traffic at which the synthetic ground truth is calibrated (users/sec).
pub const ANCHOR_TRAFFIC: f64 = 5.0;
/// Bandwidth fraction at which the synthetic ground truth is calibrated.
pub const ANCHOR_BANDWIDTH: f64 = 0.8;
/// Worst-case condition used for provisioning and calibration.
pub const WORST_CASE_CONDITION: f64 = -2.0;
/// QoS (Fps) that the calibrated model yields at the anchor.
pub const ANCHOR_QOS: f64 = 2.0;

/// One measured QoS value at a (traffic, bandwidth) operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoSSample {
    pub traffic: f64,
    pub bandwidth: f64,
    pub qos: f64,
}

/// Gaussian QoS parameters aggregated at one grid node.
///
/// `count` is the number of samples the node was fitted from; analytic
/// models built straight from a ground-truth function carry `count == 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoSGridCell {
    pub traffic: f64,
    pub bandwidth: f64,
    pub mu: f64,
    pub sigma: f64,
    pub count: usize,
}

/// Grid of QoS distributions over (traffic, bandwidth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoSModel {
    traffic_axis: Vec<f64>,
    bandwidth_axis: Vec<f64>,
    /// Row-major: `cells[i * bandwidth_axis.len() + j]`.
    cells: Vec<QoSGridCell>,
}

/// Traffic grid {1, ..., 5} users/sec.
pub fn default_traffic_axis() -> Vec<f64> {
    (1..=5).map(f64::from).collect()
}

/// Bandwidth grid {0.1, ..., 0.8}.
pub fn default_bandwidth_axis() -> Vec<f64> {
    (1..=8).map(|k| f64::from(k) / 10.0).collect()
}

fn check_axis(name: &str, axis: &[f64]) -> Result<()> {
    if axis.is_empty() {
        return Err(Error::Input(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{name} axis has non-finite values")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input(format!("{name} axis is not strictly increasing")));
    }
    Ok(())
}

fn node_index(axis: &[f64], value: f64) -> Option<usize> {
    axis.iter().position(|a| (a - value).abs() <= NODE_TOLERANCE)
}

/// Locate `value` on `axis`: returns the lower node index and the weight of
/// the upper node. Values outside the axis are clamped.
fn locate(axis: &[f64], value: f64) -> (usize, f64) {
    let n = axis.len();
    if n == 1 || value <= axis[0] || value.is_nan() {
        return (0, 0.0);
    }
    if value >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    // First index with axis[idx] > value; value lies in [axis[idx-1], axis[idx]).
    let idx = axis.partition_point(|a| *a <= value);
    let lo = idx - 1;
    let w = (value - axis[lo]) / (axis[lo + 1] - axis[lo]);
    (lo, w)
}

impl QoSModel {
    pub fn new(
        traffic_axis: Vec<f64>,
        bandwidth_axis: Vec<f64>,
        cells: Vec<QoSGridCell>,
    ) -> Result<Self> {
        check_axis("traffic", &traffic_axis)?;
        check_axis("bandwidth", &bandwidth_axis)?;
        let nb = bandwidth_axis.len();
        if cells.len() != traffic_axis.len() * nb {
            return Err(Error::Input(format!(
                "expected {} cells, got {}",
                traffic_axis.len() * nb,
                cells.len()
            )));
        }
        for (k, c) in cells.iter().enumerate() {
            let (i, j) = (k / nb, k % nb);
            if (c.traffic - traffic_axis[i]).abs() > NODE_TOLERANCE
                || (c.bandwidth - bandwidth_axis[j]).abs() > NODE_TOLERANCE
            {
                return Err(Error::Input(format!(
                    "cell {k} at ({}, {}) does not match grid node ({}, {})",
                    c.traffic, c.bandwidth, traffic_axis[i], bandwidth_axis[j]
                )));
            }
            if !(c.sigma >= 0.0) || !c.mu.is_finite() || !c.sigma.is_finite() {
                return Err(Error::Input(format!(
                    "cell at ({}, {}) has invalid parameters mu={} sigma={}",
                    c.traffic, c.bandwidth, c.mu, c.sigma
                )));
            }
        }
        Ok(QoSModel {
            traffic_axis,
            bandwidth_axis,
            cells,
        })
    }

    pub fn traffic_axis(&self) -> &[f64] {
        &self.traffic_axis
    }

    pub fn bandwidth_axis(&self) -> &[f64] {
        &self.bandwidth_axis
    }

    pub fn cells(&self) -> &[QoSGridCell] {
        &self.cells
    }

    pub fn cell(&self, i: usize, j: usize) -> &QoSGridCell {
        &self.cells[i * self.bandwidth_axis.len() + j]
    }

    /// Interpolated `(mu, sigma)` at an arbitrary operating point.
    pub fn predict(&self, traffic: f64, bandwidth: f64) -> (f64, f64) {
        let (i, wt) = locate(&self.traffic_axis, traffic);
        let (j, wb) = locate(&self.bandwidth_axis, bandwidth);
        let ni = if self.traffic_axis.len() > 1 { i + 1 } else { i };
        let nj = if self.bandwidth_axis.len() > 1 { j + 1 } else { j };
        let c00 = self.cell(i, j);
        let c01 = self.cell(i, nj);
        let c10 = self.cell(ni, j);
        let c11 = self.cell(ni, nj);
        let lerp = |a: f64, b: f64, w: f64| a * (1.0 - w) + b * w;
        let mu = lerp(lerp(c00.mu, c01.mu, wb), lerp(c10.mu, c11.mu, wb), wt);
        let sigma = lerp(
            lerp(c00.sigma, c01.sigma, wb),
            lerp(c10.sigma, c11.sigma, wb),
            wt,
        );
        (mu, sigma)
    }

    /// One stochastic QoS draw, censored below at zero.
    ///
    /// Always consumes exactly one standard-normal draw from `rng`.
    pub fn sample_qos<R: Rng + ?Sized>(&self, traffic: f64, bandwidth: f64, rng: &mut R) -> f64 {
        let (mu, sigma) = self.predict(traffic, bandwidth);
        let z: f64 = rng.sample(StandardNormal);
        if sigma == 0.0 {
            return mu.max(0.0);
        }
        (mu + sigma * z).max(0.0)
    }

    /// QoS under a deterministic network condition `d` (smaller is worse).
    pub fn deterministic_qos(&self, traffic: f64, bandwidth: f64, d: f64) -> f64 {
        let (mu, sigma) = self.predict(traffic, bandwidth);
        (mu + d * sigma).max(0.0)
    }

    /// Fit per-node sample mean and unbiased standard deviation.
    pub fn fit_from_samples(
        samples: &[QoSSample],
        traffic_axis: &[f64],
        bandwidth_axis: &[f64],
    ) -> Result<Self> {
        check_axis("traffic", traffic_axis)?;
        check_axis("bandwidth", bandwidth_axis)?;
        let nb = bandwidth_axis.len();
        let mut groups: Vec<Vec<f64>> = vec![Vec::new(); traffic_axis.len() * nb];
        for s in samples {
            let i = node_index(traffic_axis, s.traffic);
            let j = node_index(bandwidth_axis, s.bandwidth);
            match (i, j) {
                (Some(i), Some(j)) => groups[i * nb + j].push(s.qos),
                _ => {
                    return Err(Error::Input(format!(
                        "sample at (traffic={}, bandwidth={}) is not on a grid node",
                        s.traffic, s.bandwidth
                    )))
                }
            }
        }
        let mut cells = Vec::with_capacity(groups.len());
        for (k, values) in groups.iter().enumerate() {
            let (traffic, bandwidth) = (traffic_axis[k / nb], bandwidth_axis[k % nb]);
            if values.len() < 2 {
                return Err(Error::Fit {
                    traffic,
                    bandwidth,
                    reason: format!("needs at least 2 samples, found {}", values.len()),
                });
            }
            let n = values.len() as f64;
            let mu = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|q| (q - mu).powi(2)).sum::<f64>() / (n - 1.0);
            cells.push(QoSGridCell {
                traffic,
                bandwidth,
                mu,
                sigma: var.sqrt(),
                count: values.len(),
            });
        }
        QoSModel::new(traffic_axis.to_vec(), bandwidth_axis.to_vec(), cells)
    }

    /// Write the model as CSV `traffic,bandwidth,mu,sigma,count`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let csv_err = |e: csv::Error| Error::Input(format!("writing {}: {e}", path.display()));
        w.write_record(["traffic", "bandwidth", "mu", "sigma", "count"])
            .map_err(csv_err)?;
        for c in &self.cells {
            w.write_record([
                c.traffic.to_string(),
                c.bandwidth.to_string(),
                c.mu.to_string(),
                c.sigma.to_string(),
                c.count.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a model written by [`QoSModel::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason,
        };
        let headers = reader
            .headers()
            .map_err(|e| parse_err(1, e.to_string()))?
            .clone();
        let expected = ["traffic", "bandwidth", "mu", "sigma", "count"];
        if headers.iter().map(str::trim).ne(expected.iter().copied()) {
            return Err(parse_err(
                1,
                format!("expected header `{}`", expected.join(",")),
            ));
        }
        let mut rows: BTreeMap<(u64, u64), (usize, QoSGridCell)> = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            if record.len() != 5 {
                return Err(parse_err(line, format!("expected 5 fields, found {}", record.len())));
            }
            let num = |k: usize| -> Result<f64> {
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(line, format!("field `{}`: {e}", expected[k])))
            };
            let count = record[4]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(line, format!("field `count`: {e}")))?;
            let cell = QoSGridCell {
                traffic: num(0)?,
                bandwidth: num(1)?,
                mu: num(2)?,
                sigma: num(3)?,
                count,
            };
            if !(cell.sigma >= 0.0) {
                return Err(parse_err(line, format!("negative sigma {}", cell.sigma)));
            }
            let key = (cell.traffic.to_bits(), cell.bandwidth.to_bits());
            if rows.insert(key, (line, cell)).is_some() {
                return Err(parse_err(
                    line,
                    format!("duplicate grid node ({}, {})", cell.traffic, cell.bandwidth),
                ));
            }
        }
        if rows.is_empty() {
            return Err(Error::EmptyModel(path.to_path_buf()));
        }
        let mut traffic_axis: Vec<f64> = rows.values().map(|(_, c)| c.traffic).collect();
        let mut bandwidth_axis: Vec<f64> = rows.values().map(|(_, c)| c.bandwidth).collect();
        for axis in [&mut traffic_axis, &mut bandwidth_axis] {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        let mut cells = Vec::with_capacity(traffic_axis.len() * bandwidth_axis.len());
        for &t in &traffic_axis {
            for &b in &bandwidth_axis {
                match rows.get(&(t.to_bits(), b.to_bits())) {
                    Some((_, c)) => cells.push(*c),
                    None => {
                        return Err(parse_err(
                            0,
                            format!("missing grid node (traffic={t}, bandwidth={b})"),
                        ))
                    }
                }
            }
        }
        QoSModel::new(traffic_axis, bandwidth_axis, cells)
    }
}

/// Write raw samples as CSV `traffic,bandwidth,qos`.
pub fn save_samples(samples: &[QoSSample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: csv::Error| Error::Input(format!("writing {}: {e}", path.display()));
    w.write_record(["traffic", "bandwidth", "qos"]).map_err(csv_err)?;
    for s in samples {
        w.write_record([s.traffic.to_string(), s.bandwidth.to_string(), s.qos.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<QoSSample>> {
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
        let field = |k: usize| -> Result<f64> {
            record
                .get(k)
                .ok_or_else(|| "missing field".to_string())
                .and_then(|s| s.trim().parse::<f64>().map_err(|e| e.to_string()))
                .map_err(|reason| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    reason,
                })
        };
        let s = QoSSample {
            traffic: field(0)?,
            bandwidth: field(1)?,
            qos: field(2)?,
        };
        if s.traffic < 0.0 || !(0.0..=1.0).contains(&s.bandwidth) || s.qos < 0.0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("sample out of range: {s:?}"),
            });
        }
        out.push(s);
    }
    Ok(out)
}

/// Parameters of the saturating ground-truth QoS surface that stands in for
/// testbed measurements:
/// `mu*(x, r) = f_max * (1 - exp(-lambda * r / x))`, `sigma* = rho * mu* + sigma0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruthConfig {
    pub f_max: f64,
    pub lambda: f64,
    pub rho: f64,
    pub sigma0: f64,
}

impl Default for SyntheticTruthConfig {
    fn default() -> Self {
        SyntheticTruthConfig::calibrated(20.0, 0.15, 0.05)
            .expect("default synthetic parameters are calibratable")
    }
}

impl SyntheticTruthConfig {
    /// Solve `lambda` so that `mu* - 2 sigma* = 2.0` at traffic 5, bandwidth 0.8.
    pub fn calibrated(f_max: f64, rho: f64, sigma0: f64) -> Result<Self> {
        if !(f_max > 0.0) || !(0.0..1.0).contains(&rho) || !(sigma0 >= 0.0) {
            return Err(Error::Config(format!(
                "invalid synthetic parameters f_max={f_max} rho={rho} sigma0={sigma0}"
            )));
        }
        let m = -WORST_CASE_CONDITION;
        if rho * m >= 1.0 {
            return Err(Error::Config(format!(
                "rho={rho} leaves no mean headroom at condition {WORST_CASE_CONDITION}"
            )));
        }
        // mu - m (rho mu + sigma0) = q  =>  mu = (q + m sigma0) / (1 - m rho)
        let mu_target = (ANCHOR_QOS + m * sigma0) / (1.0 - m * rho);
        if mu_target >= f_max {
            return Err(Error::Config(format!(
                "f_max={f_max} cannot reach the anchor mean {mu_target}"
            )));
        }
        let lambda = -(ANCHOR_TRAFFIC / ANCHOR_BANDWIDTH) * (1.0 - mu_target / f_max).ln();
        Ok(SyntheticTruthConfig {
            f_max,
            lambda,
            rho,
            sigma0,
        })
    }

    pub fn mean(&self, traffic: f64, bandwidth: f64) -> f64 {
        if traffic <= 0.0 {
            return self.f_max;
        }
        self.f_max * (1.0 - (-self.lambda * bandwidth / traffic).exp())
    }

    pub fn std(&self, traffic: f64, bandwidth: f64) -> f64 {
        self.rho * self.mean(traffic, bandwidth) + self.sigma0
    }

    /// Anchor residual `mu* - 2 sigma* - 2.0` at (5, 0.8).
    pub fn anchor_residual(&self) -> f64 {
        let mu = self.mean(ANCHOR_TRAFFIC, ANCHOR_BANDWIDTH);
        let sigma = self.std(ANCHOR_TRAFFIC, ANCHOR_BANDWIDTH);
        mu + WORST_CASE_CONDITION * sigma - ANCHOR_QOS
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f_max > 0.0)
            || !(self.lambda > 0.0)
            || !(0.0..1.0).contains(&self.rho)
            || !(self.sigma0 >= 0.0)
        {
            return Err(Error::Config(format!("invalid synthetic config {self:?}")));
        }
        let r = self.anchor_residual();
        if r.abs() > 1e-6 {
            return Err(Error::Config(format!(
                "synthetic config is not calibrated (anchor residual {r:e})"
            )));
        }
        Ok(())
    }

    /// Grid model holding the exact ground-truth parameters (`count == 0`).
    pub fn exact_model(&self, traffic_axis: &[f64], bandwidth_axis: &[f64]) -> Result<QoSModel> {
        self.validate()?;
        let mut cells = Vec::with_capacity(traffic_axis.len() * bandwidth_axis.len());
        for &traffic in traffic_axis {
            for &bandwidth in bandwidth_axis {
                cells.push(QoSGridCell {
                    traffic,
                    bandwidth,
                    mu: self.mean(traffic, bandwidth),
                    sigma: self.std(traffic, bandwidth),
                    count: 0,
                });
            }
        }
        QoSModel::new(traffic_axis.to_vec(), bandwidth_axis.to_vec(), cells)
    }

    /// Noisy measurements emulating a grid search over the operating points.
    pub fn generate_grid<R: Rng + ?Sized>(
        &self,
        traffic_axis: &[f64],
        bandwidth_axis: &[f64],
        samples_per_cell: usize,
        rng: &mut R,
    ) -> Result<Vec<QoSSample>> {
        self.validate()?;
        let mut out = Vec::with_capacity(traffic_axis.len() * bandwidth_axis.len() * samples_per_cell);
        for &traffic in traffic_axis {
            for &bandwidth in bandwidth_axis {
                let mu = self.mean(traffic, bandwidth);
                let sigma = self.std(traffic, bandwidth);
                for _ in 0..samples_per_cell {
                    let z: f64 = rng.sample(StandardNormal);
                    out.push(QoSSample {
                        traffic,
                        bandwidth,
                        qos: (mu + sigma * z).max(0.0),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// The calibrated synthetic model on the default grid.
pub fn default_synthetic_model() -> QoSModel {
    SyntheticTruthConfig::default()
        .exact_model(&default_traffic_axis(), &default_bandwidth_axis())
        .expect("default synthetic model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node_samples(traffic: f64, bandwidth: f64, qos: &[f64]) -> Vec<QoSSample> {
        qos.iter()
            .map(|&qos| QoSSample {
                traffic,
                bandwidth,
                qos,
            })
            .collect()
    }

    #[test]
    fn fit_zero_variance_and_two_point_nodes() {
        let mut samples = node_samples(1.0, 0.1, &[3.0, 3.0, 3.0]);
        samples.extend(node_samples(1.0, 0.4, &[1.0, 1.0]));
        samples.extend(node_samples(2.0, 0.1, &[1.0, 1.0]));
        samples.extend(node_samples(2.0, 0.4, &[4.0, 6.0]));
        let m = QoSModel::fit_from_samples(&samples, &[1.0, 2.0], &[0.1, 0.4]).unwrap();
        let c = m.cell(0, 0);
        assert_eq!((c.mu, c.sigma, c.count), (3.0, 0.0, 3));
        let c = m.cell(1, 1);
        assert_eq!(c.mu, 5.0);
        assert!((c.sigma - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fit_full_default_grid_has_forty_cells() {
        let truth = SyntheticTruthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples = truth
            .generate_grid(&default_traffic_axis(), &default_bandwidth_axis(), 4, &mut rng)
            .unwrap();
        let m = QoSModel::fit_from_samples(&samples, &default_traffic_axis(), &default_bandwidth_axis())
            .unwrap();
        assert_eq!(m.cells().len(), 5 * 8);
        assert_eq!(m.traffic_axis().len(), 5);
        assert_eq!(m.bandwidth_axis().len(), 8);
    }

    #[test]
    fn fit_rejects_sparse_node_and_off_grid_sample() {
        let samples = node_samples(1.0, 0.1, &[3.0]);
        match QoSModel::fit_from_samples(&samples, &[1.0], &[0.1]) {
            Err(Error::Fit { traffic, bandwidth, .. }) => assert_eq!((traffic, bandwidth), (1.0, 0.1)),
            other => panic!("unexpected {other:?}"),
        }
        let samples = node_samples(1.5, 0.1, &[3.0, 3.0]);
        assert!(matches!(
            QoSModel::fit_from_samples(&samples, &[1.0], &[0.1]),
            Err(Error::Input(_))
        ));
    }

    fn two_by_two() -> QoSModel {
        let cell = |traffic, bandwidth, mu| QoSGridCell {
            traffic,
            bandwidth,
            mu,
            sigma: 0.5,
            count: 2,
        };
        QoSModel::new(
            vec![1.0, 2.0],
            vec![0.1, 0.2],
            vec![
                cell(1.0, 0.1, 2.0),
                cell(1.0, 0.2, 6.0),
                cell(2.0, 0.1, 4.0),
                cell(2.0, 0.2, 8.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn predict_midpoint_and_clamp() {
        let m = two_by_two();
        assert_eq!(m.predict(1.5, 0.1).0, 3.0);
        assert_eq!(m.predict(2.0, 0.2), (8.0, 0.5));
        assert_eq!(m.predict(6.0, 0.1), m.predict(2.0, 0.1));
        assert_eq!(m.predict(-1.0, 0.9), m.predict(1.0, 0.2));
    }

    #[test]
    fn deterministic_condition_convention() {
        let cell = QoSGridCell {
            traffic: 1.0,
            bandwidth: 0.5,
            mu: 3.0,
            sigma: 0.5,
            count: 2,
        };
        let m = QoSModel::new(vec![1.0], vec![0.5], vec![cell]).unwrap();
        assert_eq!(m.deterministic_qos(1.0, 0.5, 0.0), 3.0);
        // worse condition (smaller d) gives lower QoS
        assert_eq!(m.deterministic_qos(1.0, 0.5, -2.0), 2.0);
        assert_eq!(m.deterministic_qos(1.0, 0.5, 2.0), 4.0);
        assert_eq!(m.deterministic_qos(1.0, 0.5, -10.0), 0.0);
    }

    #[test]
    fn sampling_degenerate_and_truncated() {
        let cell = |mu, sigma| QoSGridCell {
            traffic: 1.0,
            bandwidth: 0.5,
            mu,
            sigma,
            count: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = QoSModel::new(vec![1.0], vec![0.5], vec![cell(1.25, 0.0)]).unwrap();
        assert_eq!(m.sample_qos(1.0, 0.5, &mut rng), 1.25);
        let m = QoSModel::new(vec![1.0], vec![0.5], vec![cell(0.1, 1.0)]).unwrap();
        assert!((0..10_000).all(|_| m.sample_qos(1.0, 0.5, &mut rng) >= 0.0));
    }

    #[test]
    fn sampling_mean_monte_carlo() {
        let m = default_synthetic_model();
        let (mu, sigma) = m.predict(3.0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| m.sample_qos(3.0, 0.5, &mut rng)).sum::<f64>() / n as f64;
        assert!((mean - mu).abs() < 3.0 * sigma / (n as f64).sqrt(), "{mean} vs {mu}");
    }

    /// Independent bisection route to the calibration constant.
    fn bisect_lambda(f_max: f64, rho: f64, sigma0: f64) -> f64 {
        let g = |lambda: f64| {
            let mu = f_max * (1.0 - (-lambda * 0.8 / 5.0).exp());
            mu - 2.0 * (rho * mu + sigma0) - 2.0
        };
        let (mut lo, mut hi) = (1e-9, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn calibration_matches_bisection_oracle() {
        let cfg = SyntheticTruthConfig::default();
        let lambda = bisect_lambda(20.0, 0.15, 0.05);
        assert!((cfg.lambda - lambda).abs() < 1e-9, "{} vs {lambda}", cfg.lambda);
        assert!(cfg.anchor_residual().abs() < 1e-9);
        let m = default_synthetic_model();
        let q = m.deterministic_qos(ANCHOR_TRAFFIC, ANCHOR_BANDWIDTH, WORST_CASE_CONDITION);
        assert!((q - 2.0).abs() < 1e-6);
    }

    #[test]
    fn truth_shape() {
        let cfg = SyntheticTruthConfig::default();
        for x in default_traffic_axis() {
            assert_eq!(cfg.mean(x, 0.0), 0.0);
        }
        for x in default_traffic_axis() {
            for w in default_bandwidth_axis().windows(2) {
                assert!(cfg.mean(x, w[1]) > cfg.mean(x, w[0]));
            }
        }
        for r in default_bandwidth_axis() {
            for w in default_traffic_axis().windows(2) {
                assert!(cfg.mean(w[1], r) < cfg.mean(w[0], r));
            }
        }
    }

    #[test]
    fn uncalibrated_config_is_rejected() {
        let mut cfg = SyntheticTruthConfig::default();
        cfg.lambda *= 1.1;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            cfg.generate_grid(&[1.0], &[0.1], 2, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn generation_is_deterministic_and_zero_noise_fit_recovers_truth() {
        let cfg = SyntheticTruthConfig::default();
        let (ta, ba) = (default_traffic_axis(), default_bandwidth_axis());
        let a = cfg.generate_grid(&ta, &ba, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = cfg.generate_grid(&ta, &ba, 3, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);

        let noiseless = SyntheticTruthConfig::calibrated(20.0, 0.0, 0.0).unwrap();
        let samples = noiseless
            .generate_grid(&ta, &ba, 3, &mut ChaCha8Rng::seed_from_u64(6))
            .unwrap();
        let m = QoSModel::fit_from_samples(&samples, &ta, &ba).unwrap();
        for c in m.cells() {
            assert!((c.mu - noiseless.mean(c.traffic, c.bandwidth)).abs() < 1e-9);
        }
    }

    #[test]
    fn save_load_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.csv");
        let m = default_synthetic_model();
        m.save(&path).unwrap();
        assert_eq!(QoSModel::load(&path).unwrap(), m);

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(3);
        std::fs::write(&path, lines.join("\n")).unwrap();
        match QoSModel::load(&path) {
            Err(Error::Parse { reason, .. }) => assert!(reason.contains("missing grid node"), "{reason}"),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&path, "traffic,bandwidth,mu,sigma,count\n").unwrap();
        assert!(matches!(QoSModel::load(&path), Err(Error::EmptyModel(_))));

        std::fs::write(&path, "traffic,bandwidth,mu,sigma,count\n1,0.1,x,0.1,3\n").unwrap();
        match QoSModel::load(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest::proptest! {
        #[test]
        fn interpolated_qos_is_monotone(x in 0.5f64..6.0, r in 0.1f64..0.75, dx in 0.0f64..1.0, dr in 0.0f64..0.05, d in -3.0f64..3.0) {
            let m = default_synthetic_model();
            let q = m.deterministic_qos(x, r, d);
            proptest::prop_assert!(m.deterministic_qos(x, r + dr, d) >= q - 1e-12);
            proptest::prop_assert!(m.deterministic_qos(x + dx, r, d) <= q + 1e-12);
            proptest::prop_assert!(m.deterministic_qos(x, r, d + 0.5) >= q);
        }
    }
}
