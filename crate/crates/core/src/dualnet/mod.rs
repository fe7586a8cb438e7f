//! Distributed solution of the relaxation by dual decomposition over bus neighborhoods.
//!
//! Bus `i` owns a local matrix `W^(i)` over its closed neighborhood. The copies of
//! each line entry held by the two endpoints are coupled through a complex
//! multiplier, updated by gradient ascent once both endpoints have exchanged
//! their boundary values. Rounds are synchronous: local solves, message
//! exchange, multiplier updates, then optional leaf fixing.

mod leaf;
mod subproblem;

pub use leaf::{detect_global_infeasibility, leaf_fixing_step, window_converged, InfeasibilityVerdict};
pub use subproblem::{
    apply_direction_enhancement, augmented_objective, build_subproblem, check_direction_premise, entry_selectors, EnhancementError,
    Side, Subproblem,
};

use std::collections::VecDeque;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::central::evaluate_solution;
use crate::netmodel::{admittance_matrix, injection_operators, line_flow_operator, line_loss_operator, NetworkTree};
use crate::sdpcore::{solve_sdp, HermitianMatrix, SdpStatus, SdpTolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    /// `alpha0 / (t + 1)^decay`.
    Diminishing,
    Constant,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RunConfig {
    pub delta: f64,
    pub max_iters: usize,
    pub alpha0: f64,
    pub decay: f64,
    pub schedule: StepSchedule,
    /// Scales each line's step by `|y|`.
    pub admittance_scaled: bool,
    pub gamma: f64,
    pub window: usize,
    pub enhance_direction: bool,
    pub leaf_fix: bool,
    pub hot_start: bool,
    /// Step-size multiplier applied on a hot start.
    pub hot_alpha_scale: f64,
    /// Schedule index a hot start resumes from.
    pub hot_t0: usize,
    /// Rounds examined by the stalled-mismatch test.
    pub infeasibility_window: usize,
    pub alpha_floor: f64,
    pub parallel: bool,
    #[serde(skip)]
    pub sdp: SdpTolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            delta: 1e-4,
            max_iters: 300,
            alpha0: 0.5,
            decay: 0.3,
            schedule: StepSchedule::Diminishing,
            admittance_scaled: true,
            gamma: 1e-4,
            window: 10,
            enhance_direction: false,
            leaf_fix: false,
            hot_start: false,
            hot_alpha_scale: 0.5,
            hot_t0: 0,
            infeasibility_window: 50,
            alpha_floor: 1e-6,
            parallel: true,
            sdp: SdpTolerances::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("max_iters must be at least 1")]
    NoIterations,
    #[error("decay must lie in (0, 1], got {0}")]
    Decay(f64),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("delta", self.delta), ("gamma", self.gamma), ("alpha0", self.alpha0)] {
            if !(v > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.max_iters == 0 {
            return Err(ConfigError::NoIterations);
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ConfigError::Decay(self.decay));
        }
        Ok(())
    }
}

pub fn step_size(t: usize, cfg: &RunConfig) -> f64 {
    match cfg.schedule {
        StepSchedule::Diminishing => cfg.alpha0 / ((t + 1) as f64).powf(cfg.decay),
        StepSchedule::Constant => cfg.alpha0,
    }
}

/// One complex multiplier per line, oriented parent to child; `lambda_ki = conj(lambda_ik)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub lambda: Vec<Complex64>,
    /// Round of the last update per line.
    pub last_update: Vec<Option<usize>>,
    /// Parent of every bus, identifying the topology the multipliers belong to.
    pub topology: Vec<Option<usize>>,
}

impl MultiplierState {
    pub fn zeros(net: &NetworkTree) -> Self {
        let m = net.lines().len();
        Self {
            lambda: vec![Complex64::new(0.0, 0.0); m],
            last_update: vec![None; m],
            topology: (0..net.n()).map(|i| net.parent(i)).collect(),
        }
    }

    /// `lambda_ik` for either orientation of the line between `i` and `k`.
    pub fn get(&self, net: &NetworkTree, i: usize, k: usize) -> Option<Complex64> {
        let l = net.line_between(i, k)?;
        let lam = self.lambda[l];
        Some(if i < k { lam } else { lam.conj() })
    }
}

/// `lambda + alpha (W^(i)_ik - W^(k)_ik)`.
pub fn update_multiplier(lambda: Complex64, w_i_ik: Complex64, w_k_ik: Complex64, alpha: f64) -> Complex64 {
    lambda + (w_i_ik - w_k_ik) * alpha
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentStatus {
    Active,
    Fixed,
    Infeasible,
}

/// A line as seen from one of its endpoints, in the agent's local coordinates.
#[derive(Debug, Clone)]
pub struct IncidentLine {
    pub line: usize,
    pub neighbor: usize,
    pub side: Side,
    pub p_pos: usize,
    pub c_pos: usize,
    pub p_flow_max: f64,
    pub loss_max: f64,
    pub flow_pc: HermitianMatrix,
    pub flow_cp: HermitianMatrix,
    pub loss: HermitianMatrix,
}

#[derive(Debug, Clone, Copy)]
pub struct FixedEdge {
    pub line: usize,
    /// Frozen `W_pc`.
    pub value: Complex64,
}

#[derive(Debug, Clone)]
pub struct BusAgent {
    pub bus: usize,
    /// Closed neighborhood in ascending bus order.
    pub clique: Vec<usize>,
    pub self_pos: usize,
    pub a_local: HermitianMatrix,
    pub b_local: HermitianMatrix,
    pub v_ref_sq: Vec<f64>,
    pub p_bounds: (f64, f64),
    pub q_bounds: (f64, f64),
    pub incident: Vec<IncidentLine>,
    pub enhance_direction: bool,
    pub w: Option<HermitianMatrix>,
    /// Optimum of the last local solve.
    pub local_value: f64,
    pub p_history: VecDeque<f64>,
    pub q_history: VecDeque<f64>,
    pub fixed_edges: Vec<FixedEdge>,
    pub status: AgentStatus,
}

impl BusAgent {
    pub fn new(net: &NetworkTree, bus: usize) -> Self {
        let mut clique = net.neighbors(bus);
        clique.push(bus);
        clique.sort_unstable();
        let pos = |g: usize| clique.iter().position(|&x| x == g).expect("clique member");
        let y = admittance_matrix(net);
        let (a, b) = injection_operators(&y, bus);
        let incident = net
            .neighbors(bus)
            .into_iter()
            .map(|k| {
                let line = net.line_between(bus, k).expect("neighbor line");
                let l = &net.lines()[line];
                IncidentLine {
                    line,
                    neighbor: k,
                    side: if l.from == bus { Side::Parent } else { Side::Child },
                    p_pos: pos(l.from),
                    c_pos: pos(l.to),
                    p_flow_max: l.p_flow_max,
                    loss_max: l.loss_max,
                    flow_pc: line_flow_operator(net, l.from, l.to).expect("line").submatrix(&clique),
                    flow_cp: line_flow_operator(net, l.to, l.from).expect("line").submatrix(&clique),
                    loss: line_loss_operator(net, l.from, l.to).expect("line").submatrix(&clique),
                }
            })
            .collect();
        let b_ref = net.bus(bus);
        Self {
            bus,
            self_pos: pos(bus),
            a_local: a.submatrix(&clique),
            b_local: b.submatrix(&clique),
            v_ref_sq: clique.iter().map(|&k| net.bus(k).v_ref.powi(2)).collect(),
            p_bounds: (b_ref.p_min, b_ref.p_max),
            q_bounds: (b_ref.q_min, b_ref.q_max),
            clique,
            incident,
            enhance_direction: false,
            w: None,
            local_value: f64::NAN,
            p_history: VecDeque::new(),
            q_history: VecDeque::new(),
            fixed_edges: Vec::new(),
            status: AgentStatus::Active,
        }
    }

    /// This agent's copy of `W_pc` for an incident line.
    pub fn boundary(&self, line: usize) -> Option<Complex64> {
        let inc = self.incident.iter().find(|x| x.line == line)?;
        Some(self.w.as_ref()?.get(inc.p_pos, inc.c_pos))
    }

    pub fn injection(&self) -> Option<(f64, f64)> {
        let w = self.w.as_ref()?;
        Some((self.a_local.trace_product(w), self.b_local.trace_product(w)))
    }

    pub fn local_objective(&self) -> f64 {
        self.w.as_ref().map_or(f64::NAN, |w| self.a_local.trace_product(w))
    }

    fn record_history(&mut self, window: usize) {
        if let Some((p, q)) = self.injection() {
            self.p_history.push_back(p);
            self.q_history.push_back(q);
            while self.p_history.len() > window + 1 {
                self.p_history.pop_front();
                self.q_history.pop_front();
            }
        }
    }
}

/// Boundary value `W^(from)_pc` sent across a line at the end of a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMessage {
    pub round: usize,
    pub line: usize,
    pub from: usize,
    pub to: usize,
    pub value: Complex64,
}

/// Neighbor-to-neighbor transport. Returns the payload when delivered.
pub trait Channel {
    fn transmit(&mut self, msg: BoundaryMessage) -> Option<BoundaryMessage>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectChannel;

impl Channel for PerfectChannel {
    fn transmit(&mut self, msg: BoundaryMessage) -> Option<BoundaryMessage> {
        Some(msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    /// A local subproblem has no feasible point; carries the one-based bus id.
    Infeasible { bus: usize },
    NumericalFailure { bus: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Sum of the subproblem optima.
    pub objective: f64,
    /// `sum_i Tr(A^(i) W^(i))`.
    pub primal_objective: f64,
    pub max_mismatch: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub status: RunStatus,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of the subproblem optima at the last round; a lower bound on the relaxed optimum.
    pub objective: f64,
    /// `sum_i Tr(A^(i) W^(i))` at the last round.
    pub primal_objective: f64,
    pub trace: Vec<TraceRow>,
    /// Final mismatch per line.
    pub mismatch: Vec<f64>,
    pub voltages: Option<Vec<Complex64>>,
    /// Total loss evaluated at the recovered voltages.
    pub recovered_loss: Option<f64>,
    /// `(P_i, Q_i)` per bus from its own local solution.
    pub injections: Vec<Option<(f64, f64)>>,
    pub multipliers: MultiplierState,
    /// Round at which a stalled mismatch was first flagged, and the line.
    pub infeasibility_suspected: Option<InfeasibilityVerdict>,
    /// One-based ids of buses frozen by leaf fixing, in fixing order.
    pub fixed_buses: Vec<usize>,
    /// Messages sent and delivered.
    pub messages: (u64, u64),
}

impl SolveReport {
    /// Rounds until the objective first comes within `rel` of `reference`.
    pub fn rounds_to_gap(&self, reference: f64, rel: f64) -> Option<usize> {
        self.trace
            .iter()
            .find(|r| (reference - r.objective).abs() <= rel * reference.abs())
            .map(|r| r.iteration + 1)
    }

    /// Trace as comma-separated text with a header row.
    pub fn write_trace(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "iteration,objective,primal_objective,max_mismatch,alpha")?;
        for r in &self.trace {
            writeln!(out, "{},{:.12e},{:.12e},{:.6e},{:.6e}", r.iteration, r.objective, r.primal_objective, r.max_mismatch, r.alpha)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DualError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Enhancement(#[from] EnhancementError),
    #[error("hot start topology does not match the network")]
    TopologyMismatch,
}

/// Multipliers to resume from after `previous`; the topology must match.
pub fn hot_start(previous: &SolveReport, net: &NetworkTree) -> Result<MultiplierState, DualError> {
    let m = &previous.multipliers;
    if m.topology.len() != net.n() || m.topology.iter().enumerate().any(|(i, p)| *p != net.parent(i)) {
        return Err(DualError::TopologyMismatch);
    }
    Ok(m.clone())
}

pub fn build_agents(net: &NetworkTree, cfg: &RunConfig) -> Vec<BusAgent> {
    (0..net.n())
        .map(|i| {
            let mut a = BusAgent::new(net, i);
            a.enhance_direction = cfg.enhance_direction;
            a
        })
        .collect()
}

pub fn run_distributed(net: &NetworkTree, cfg: &RunConfig, channel: &mut dyn Channel) -> Result<SolveReport, DualError> {
    run_distributed_from(net, cfg, channel, None)
}

/// As [`run_distributed`], optionally resuming from hot-start multipliers.
pub fn run_distributed_from(
    net: &NetworkTree,
    cfg: &RunConfig,
    channel: &mut dyn Channel,
    initial: Option<MultiplierState>,
) -> Result<SolveReport, DualError> {
    cfg.validate()?;
    if cfg.enhance_direction {
        check_direction_premise(net)?;
    }
    let mut schedule = *cfg;
    let t0 = match &initial {
        Some(_) => {
            schedule.alpha0 *= cfg.hot_alpha_scale;
            cfg.hot_t0
        }
        None => 0,
    };
    let mut mult = match initial {
        Some(m) => {
            if m.topology.len() != net.n() || m.topology.iter().enumerate().any(|(i, p)| *p != net.parent(i)) {
                return Err(DualError::TopologyMismatch);
            }
            m
        }
        None => MultiplierState::zeros(net),
    };

    let lines = net.lines();
    let m = lines.len();
    let mut agents = build_agents(net, cfg);
    // Last value received by the parent (from the child) and by the child (from the parent).
    let mut at_parent: Vec<Option<Complex64>> = vec![None; m];
    let mut at_child: Vec<Option<Complex64>> = vec![None; m];
    let mut mismatch_history: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut status = RunStatus::MaxIterations;
    let mut suspected = None;
    let mut fixed_buses = Vec::new();
    let mut mismatch = vec![f64::INFINITY; m];
    let mut sent = 0u64;
    let mut delivered = 0u64;
    let mut rounds = 0;
    // Updates applied per line; a lost exchange does not advance that line's schedule.
    let mut updates = vec![0usize; m];

    for t in 0..cfg.max_iters {
        rounds = t + 1;
        let alpha = step_size(t0 + t, &schedule);
        let solve = |a: &BusAgent| {
            if a.status != AgentStatus::Active {
                return None;
            }
            let sub = build_subproblem(a, &mult);
            let r = solve_sdp(&sub.problem, &cfg.sdp).expect("subproblem is well formed");
            Some(r)
        };
        let results: Vec<_> = if cfg.parallel { agents.par_iter().map(solve).collect() } else { agents.iter().map(solve).collect() };
        for (a, r) in agents.iter_mut().zip(results) {
            let Some(sol) = r else { continue };
            match sol.status {
                SdpStatus::Optimal => {
                    a.w = sol.w;
                    a.local_value = sol.objective;
                }
                SdpStatus::Infeasible => {
                    a.status = AgentStatus::Infeasible;
                    if !matches!(status, RunStatus::Infeasible { .. }) {
                        status = RunStatus::Infeasible { bus: a.bus + 1 };
                    }
                }
                SdpStatus::NumericalFailure => {
                    if status == RunStatus::MaxIterations {
                        status = RunStatus::NumericalFailure { bus: a.bus + 1 };
                    }
                }
            }
        }
        if status != RunStatus::MaxIterations {
            break;
        }
        for a in &mut agents {
            if a.status == AgentStatus::Active {
                a.record_history(cfg.window);
            }
        }

        let primal_objective: f64 = agents.iter().map(|a| a.local_objective()).sum();
        let objective: f64 = agents.iter().map(|a| a.local_value).sum();

        // Exchange boundary values in fixed line order.
        let mut both = vec![false; m];
        for (l, line) in lines.iter().enumerate() {
            let wp = agents[line.from].boundary(l).expect("parent solved");
            let wc = agents[line.to].boundary(l).expect("child solved");
            if agents[line.to].status == AgentStatus::Fixed {
                at_parent[l] = Some(wc);
                at_child[l] = Some(wp);
                mismatch[l] = (wp - wc).norm();
                continue;
            }
            sent += 2;
            let down = channel.transmit(BoundaryMessage { round: t, line: l, from: line.from, to: line.to, value: wp });
            let up = channel.transmit(BoundaryMessage { round: t, line: l, from: line.to, to: line.from, value: wc });
            if let Some(msg) = down {
                at_child[l] = Some(msg.value);
                delivered += 1;
            }
            if let Some(msg) = up {
                at_parent[l] = Some(msg.value);
                delivered += 1;
            }
            both[l] = down.is_some() && up.is_some();
            let view_p = at_parent[l].map_or(f64::INFINITY, |v| (wp - v).norm());
            let view_c = at_child[l].map_or(f64::INFINITY, |v| (wc - v).norm());
            mismatch[l] = view_p.max(view_c);
        }
        let max_mismatch = mismatch.iter().copied().fold(0.0, f64::max);
        trace.push(TraceRow { iteration: t, objective, primal_objective, max_mismatch, alpha });
        mismatch_history.push(mismatch.clone());
        alphas.push(alpha);

        if mismatch.iter().all(|&x| x <= cfg.delta) {
            status = RunStatus::Converged;
            break;
        }

        for (l, line) in lines.iter().enumerate() {
            if both[l] {
                let wp = agents[line.from].boundary(l).expect("parent solved");
                let wc = agents[line.to].boundary(l).expect("child solved");
                let scale = if cfg.admittance_scaled { line.admittance().norm() } else { 1.0 };
                mult.lambda[l] = update_multiplier(mult.lambda[l], wp, wc, step_size(t0 + updates[l], &schedule) * scale);
                updates[l] += 1;
                mult.last_update[l] = Some(t);
            }
        }

        if cfg.leaf_fix {
            for bus in leaf_fixing_step(net, &mut agents, cfg) {
                fixed_buses.push(bus + 1);
            }
        }
        if suspected.is_none() {
            let v = detect_global_infeasibility(&mismatch_history, &alphas, cfg);
            if v.suspected {
                suspected = Some(v);
            }
        }
    }

    let injections: Vec<Option<(f64, f64)>> = agents.iter().map(|a| a.injection()).collect();
    let all_solved = agents.iter().all(|a| a.w.is_some());
    let voltages = all_solved.then(|| stitch_voltages(net, &agents));
    let recovered_loss = voltages.as_ref().map(|v| evaluate_solution(net, v).total_loss);
    let last = trace.last();
    Ok(SolveReport {
        converged: status == RunStatus::Converged,
        status,
        iterations: rounds,
        objective: last.map_or(f64::NAN, |r| r.objective),
        primal_objective: last.map_or(f64::NAN, |r| r.primal_objective),
        trace,
        mismatch,
        voltages,
        recovered_loss,
        injections,
        multipliers: mult,
        infeasibility_suspected: suspected,
        fixed_buses,
        messages: (sent, delivered),
    })
}

/// Voltages of the rank-one completion of the averaged line entries.
///
/// Each child's phase is its parent's minus the angle of `W_pc`; magnitudes are the references.
pub fn stitch_voltages(net: &NetworkTree, agents: &[BusAgent]) -> Vec<Complex64> {
    let mut phase = vec![0.0; net.n()];
    for (l, line) in net.lines().iter().enumerate() {
        let wp = agents[line.from].boundary(l).unwrap_or_default();
        let wc = agents[line.to].boundary(l).unwrap_or_default();
        let w = (wp + wc) * 0.5;
        phase[line.to] = phase[line.from] - w.arg();
    }
    net.buses().iter().zip(phase).map(|(b, t)| Complex64::from_polar(b.v_ref, t)).collect()
}

#[cfg(test)]
mod tests;
