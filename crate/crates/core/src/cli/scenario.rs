//! Irradiance-driven replay of a sequence of per-minute distributed solves.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::central::evaluate_solution;
use crate::dualnet::{hot_start, run_distributed_from, Channel, DualError, RunConfig, RunStatus};
use crate::netmodel::NetworkTree;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("irradiance line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("irradiance scale {value} at minute {minute} is outside [0, 1]")]
    Scale { minute: u32, value: f64 },
    #[error("horizon [{0}, {1}] is not covered by the series")]
    Horizon(u32, u32),
    #[error("nominal network must pin every non-feeder bus: bus {0} has p_min != p_max")]
    NotNominal(usize),
    #[error("io error: {0}")]
    Io(String),
    #[error(transparent)]
    Dual(#[from] DualError),
}

/// Per-minute irradiance scale in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Irradiance {
    pub samples: Vec<(u32, f64)>,
}

impl Irradiance {
    /// Two columns `minute,scale`; an optional header and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut samples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split([',', '\t', ' ']).filter(|c| !c.is_empty());
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(ScenarioError::Parse { line: idx + 1, msg: "expected two columns".into() });
            };
            let minute = match a.parse::<u32>() {
                Ok(m) => m,
                Err(_) if samples.is_empty() && b.parse::<f64>().is_err() => continue,
                Err(e) => return Err(ScenarioError::Parse { line: idx + 1, msg: e.to_string() }),
            };
            let value: f64 = b.parse().map_err(|e: std::num::ParseFloatError| ScenarioError::Parse { line: idx + 1, msg: e.to_string() })?;
            if !(0.0..=1.0).contains(&value) {
                return Err(ScenarioError::Scale { minute, value });
            }
            if samples.last().is_some_and(|&(m, _)| m >= minute) {
                return Err(ScenarioError::Parse { line: idx + 1, msg: "minutes must increase".into() });
            }
            samples.push((minute, value));
        }
        Ok(Self { samples })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("minute,scale\n");
        for (m, v) in &self.samples {
            s.push_str(&format!("{m},{v:.6}\n"));
        }
        s
    }

    pub fn constant(start: u32, minutes: u32, value: f64) -> Self {
        Self { samples: (start..start + minutes).map(|m| (m, value)).collect() }
    }

    /// Smooth daylight bell with abrupt cloud dips, clamped to `[0, 1]`.
    pub fn synthetic(start: u32, minutes: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cloud = 0.0f64;
        let samples = (0..minutes)
            .map(|k| {
                let phase = (k as f64 + 0.5) / minutes as f64;
                let base = 0.3 + 0.65 * (std::f64::consts::PI * phase).sin();
                if rng.random_bool(0.08) {
                    cloud = rng.random_range(0.2..0.7);
                }
                cloud *= 0.8;
                let jitter = rng.random_range(-0.03..0.03);
                (start + k, (base - cloud + jitter).clamp(0.0, 1.0))
            })
            .collect();
        Self { samples }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    /// Nominal network: every non-feeder bus has `p_min = p_max = P_hat` and `q_min = q_max = Q_hat`.
    pub network: NetworkTree,
    pub irradiance: Irradiance,
    pub pv_fraction: f64,
    pub reactive_flex: f64,
    pub horizon: Option<(u32, u32)>,
}

impl Scenario {
    pub fn new(network: NetworkTree, irradiance: Irradiance) -> Self {
        Self { network, irradiance, pv_fraction: 0.2, reactive_flex: 1.2, horizon: None }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for b in self.network.buses().iter().skip(1) {
            if b.p_min != b.p_max || b.q_min != b.q_max {
                return Err(ScenarioError::NotNominal(b.id));
            }
        }
        if let Some((s, e)) = self.horizon {
            let first = self.irradiance.samples.first().map(|x| x.0);
            let last = self.irradiance.samples.last().map(|x| x.0);
            if s > e || first.is_none_or(|f| f > s) || last.is_none_or(|l| l < e) {
                return Err(ScenarioError::Horizon(s, e));
            }
        }
        Ok(())
    }

    /// Bounds for one minute at irradiance scale `s`.
    pub fn network_at(&self, s: f64) -> NetworkTree {
        let mut net = self.network.clone();
        for i in 1..net.n() {
            let b = net.bus_mut(i);
            let p_hat = b.p_min;
            let q_hat = b.q_min;
            b.p_min = p_hat;
            b.p_max = p_hat + s * self.pv_fraction * p_hat.abs();
            (b.q_min, b.q_max) = if q_hat >= 0.0 { (0.0, self.reactive_flex * q_hat) } else { (-self.reactive_flex * q_hat.abs(), 0.0) };
        }
        net
    }

    fn minutes(&self) -> impl Iterator<Item = &(u32, f64)> {
        let h = self.horizon;
        self.irradiance.samples.iter().filter(move |(m, _)| h.is_none_or(|(s, e)| (s..=e).contains(m)))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MinuteSummary {
    pub minute: u32,
    pub scale: f64,
    pub status: RunStatus,
    pub converged: bool,
    pub hot_started: bool,
    pub iterations: usize,
    pub objective: f64,
    /// Loss of the recovered voltages.
    pub total_loss: Option<f64>,
    pub max_violation: Option<f64>,
}

/// Minutes run in order. Each hot-starts from the previous minute's multipliers;
/// after an infeasible or failed minute the next one starts from zero.
pub fn run_scenario(sc: &Scenario, cfg: &RunConfig, channel: &mut dyn Channel) -> Result<Vec<MinuteSummary>, ScenarioError> {
    sc.validate()?;
    let mut out = Vec::new();
    let mut prev = None;
    for &(minute, scale) in sc.minutes() {
        let net = sc.network_at(scale);
        let init = match (&prev, cfg.hot_start) {
            (Some(r), true) => Some(hot_start(r, &net)?),
            _ => None,
        };
        let hot_started = init.is_some();
        let r = run_distributed_from(&net, cfg, channel, init)?;
        let eval = r.voltages.as_ref().map(|v| evaluate_solution(&net, v));
        out.push(MinuteSummary {
            minute,
            scale,
            status: r.status,
            converged: r.converged,
            hot_started,
            iterations: r.iterations,
            objective: r.objective,
            total_loss: eval.as_ref().map(|e| e.total_loss),
            max_violation: eval.as_ref().map(|e| e.violations.iter().map(|v| v.magnitude).fold(0.0, f64::max)),
        });
        prev = (!matches!(r.status, RunStatus::Infeasible { .. } | RunStatus::NumericalFailure { .. })).then_some(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_with_header_and_comments() {
        let s = Irradiance::parse("minute,scale\n# clear sky\n377,0.5\n378 0.75\n").unwrap();
        assert_eq!(s.samples, vec![(377, 0.5), (378, 0.75)]);
        assert!(matches!(Irradiance::parse("1,1.5\n"), Err(ScenarioError::Scale { minute: 1, .. })));
        assert!(Irradiance::parse("2,0.1\n1,0.2\n").is_err());
        assert!(Irradiance::parse("1,0.1,3\n").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = Irradiance::synthetic(377, 30, 5);
        assert_eq!(s.samples.len(), 30);
        assert!(s.samples.iter().all(|&(_, v)| (0.0..=1.0).contains(&v)));
        let back = Irradiance::parse(&s.to_csv()).unwrap();
        for (a, b) in s.samples.iter().zip(&back.samples) {
            assert_eq!(a.0, b.0);
            assert!((a.1 - b.1).abs() < 1e-6);
        }
        assert_eq!(Irradiance::synthetic(377, 30, 5), s);
    }
}
