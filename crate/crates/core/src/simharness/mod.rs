//! Simulated neighbor-to-neighbor communication with independent message loss,
//! the packet-loss experiment, and synthetic feeder generation.

mod synth;

pub use synth::{random_feeder, FeederSpec};

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dualnet::{run_distributed, BoundaryMessage, Channel, DualError, RunConfig, RunStatus};
use crate::netmodel::NetworkTree;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeliveryRecord {
    pub round: usize,
    pub line: usize,
    pub from: usize,
    pub delivered: bool,
}

/// Drops each message independently with probability `p`.
#[derive(Debug, Clone)]
pub struct LossyChannel {
    p: f64,
    seed: u64,
    rng: ChaCha8Rng,
    log: Option<Vec<DeliveryRecord>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("loss probability must lie in [0, 1), got {0}")]
pub struct LossProbabilityError(pub f64);

impl LossyChannel {
    pub fn new(p: f64, seed: u64) -> Result<Self, LossProbabilityError> {
        if !(0.0..1.0).contains(&p) {
            return Err(LossProbabilityError(p));
        }
        Ok(Self { p, seed, rng: ChaCha8Rng::seed_from_u64(seed), log: None })
    }

    pub fn with_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn log(&self) -> Option<&[DeliveryRecord]> {
        self.log.as_deref()
    }

    /// One Bernoulli(1 - p) trial. A draw is consumed even when `p == 0`.
    pub fn deliver(&mut self) -> bool {
        let u: f64 = self.rng.random();
        u >= self.p
    }
}

impl Channel for LossyChannel {
    fn transmit(&mut self, msg: BoundaryMessage) -> Option<BoundaryMessage> {
        let ok = self.deliver();
        if let Some(log) = &mut self.log {
            log.push(DeliveryRecord { round: msg.round, line: msg.line, from: msg.from, delivered: ok });
        }
        ok.then_some(msg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRun {
    pub p: f64,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    pub final_objective: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossSummary {
    pub p: f64,
    pub runs: usize,
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub convergence_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossExperiment {
    pub runs: Vec<LossRun>,
    pub summary: Vec<LossSummary>,
}

impl LossExperiment {
    /// Delimited table with columns `p,seed,iterations,converged,final_objective`.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "p,seed,iterations,converged,final_objective")?;
        for r in &self.runs {
            writeln!(out, "{},{},{},{},{:.12e}", r.p, r.seed, r.iterations, r.converged, r.final_objective)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Probability(#[from] LossProbabilityError),
    #[error(transparent)]
    Dual(#[from] DualError),
    #[error("run p={p} seed={seed} failed: {status}")]
    Run { p: f64, seed: u64, status: String },
}

/// Runs the distributed solver for every `(p, seed)` pair, in parallel over seeds.
pub fn run_loss_experiment(net: &NetworkTree, cfg: &RunConfig, p_values: &[f64], seeds: &[u64]) -> Result<LossExperiment, ExperimentError> {
    use rayon::prelude::*;
    for &p in p_values {
        LossyChannel::new(p, 0)?;
    }
    let mut inner = *cfg;
    inner.parallel = false;
    let jobs: Vec<(f64, u64)> = p_values.iter().flat_map(|&p| seeds.iter().map(move |&s| (p, s))).collect();
    let runs: Vec<Result<LossRun, ExperimentError>> = jobs
        .par_iter()
        .map(|&(p, seed)| {
            let mut ch = LossyChannel::new(p, seed)?;
            let r = run_distributed(net, &inner, &mut ch)?;
            if let RunStatus::Infeasible { .. } | RunStatus::NumericalFailure { .. } = r.status {
                return Err(ExperimentError::Run { p, seed, status: format!("{:?}", r.status) });
            }
            Ok(LossRun { p, seed, iterations: r.iterations, converged: r.converged, final_objective: r.objective })
        })
        .collect();
    let runs: Vec<LossRun> = runs.into_iter().collect::<Result<_, _>>()?;

    let summary = p_values
        .iter()
        .map(|&p| {
            let its: Vec<f64> = runs.iter().filter(|r| r.p == p).map(|r| r.iterations as f64).collect();
            let k = its.len() as f64;
            let mean = its.iter().sum::<f64>() / k;
            let var = its.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
            let conv = runs.iter().filter(|r| r.p == p && r.converged).count() as f64 / k;
            LossSummary { p, runs: its.len(), mean_iterations: mean, std_iterations: var.sqrt(), convergence_rate: conv }
        })
        .collect();
    Ok(LossExperiment { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_loss_always_delivers() {
        let mut ch = LossyChannel::new(0.0, 3).unwrap();
        assert!((0..10_000).all(|_| ch.deliver()));
    }

    #[test]
    fn near_total_loss_matches_binomial() {
        let eps = 0.02;
        let mut ch = LossyChannel::new(1.0 - eps, 11).unwrap();
        let n = 10_000.0;
        let got = (0..10_000).filter(|_| ch.deliver()).count() as f64;
        let sigma = (n * eps * (1.0 - eps)).sqrt();
        assert!((got - n * eps).abs() <= 3.0 * sigma, "{got}");
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = LossyChannel::new(0.3, 7).unwrap();
        let mut b = LossyChannel::new(0.3, 7).unwrap();
        let sa: Vec<bool> = (0..500).map(|_| a.deliver()).collect();
        let sb: Vec<bool> = (0..500).map(|_| b.deliver()).collect();
        assert_eq!(sa, sb);
    }

    #[test]
    fn rejects_certain_loss() {
        assert!(LossyChannel::new(1.0, 0).is_err());
        assert!(LossyChannel::new(-0.1, 0).is_err());
    }

    #[test]
    fn payload_passes_through_unchanged() {
        let mut ch = LossyChannel::new(0.5, 1).unwrap().with_log();
        let msg = BoundaryMessage { round: 0, line: 0, from: 0, to: 1, value: num_complex::Complex64::new(0.1 + 1e-17, -0.3) };
        for _ in 0..50 {
            if let Some(m) = ch.transmit(msg) {
                assert_eq!(m.value.re.to_bits(), msg.value.re.to_bits());
                assert_eq!(m.value.im.to_bits(), msg.value.im.to_bits());
            }
        }
        assert_eq!(ch.log().unwrap().len(), 50);
    }
}
