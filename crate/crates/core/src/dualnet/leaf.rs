use std::collections::VecDeque;

use serde::Serialize;

use super::{AgentStatus, BusAgent, FixedEdge, RunConfig};
use crate::netmodel::NetworkTree;

/// Cumulative relative change over the last `window` steps is below `gamma`.
///
/// Needs `window + 1` samples; the relative change at step `t` is
/// `|x[t] - x[t-1]| / max(|x[t]|, 1e-12)`.
pub fn window_converged(history: &VecDeque<f64>, window: usize, gamma: f64) -> bool {
    if history.len() < window + 1 {
        return false;
    }
    let start = history.len() - window - 1;
    let total: f64 = (start + 1..history.len())
        .map(|t| (history[t] - history[t - 1]).abs() / history[t].abs().max(1e-12))
        .sum();
    total < gamma
}

/// Freezes leaves of the reduced network whose injections have settled.
///
/// A bus qualifies when every child is already fixed. Its boundary entry is
/// handed to the parent as two equalities and it stops solving. The parent's
/// window restarts since its feasible set just changed. Returns the newly fixed buses.
pub fn leaf_fixing_step(net: &NetworkTree, agents: &mut [BusAgent], cfg: &RunConfig) -> Vec<usize> {
    let mut fixed = Vec::new();
    for bus in (1..net.n()).rev() {
        let a = &agents[bus];
        if a.status != AgentStatus::Active {
            continue;
        }
        if net.children(bus).iter().any(|&c| agents[c].status != AgentStatus::Fixed || fixed.contains(&c)) {
            continue;
        }
        if !(window_converged(&a.p_history, cfg.window, cfg.gamma) && window_converged(&a.q_history, cfg.window, cfg.gamma)) {
            continue;
        }
        let line = net.parent_line(bus).expect("non-root bus");
        let Some(value) = a.boundary(line) else { continue };
        agents[bus].status = AgentStatus::Fixed;
        let parent = net.parent(bus).expect("non-root bus");
        let p = &mut agents[parent];
        p.fixed_edges.push(FixedEdge { line, value });
        p.p_history.clear();
        p.q_history.clear();
        fixed.push(bus);
    }
    fixed
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfeasibilityVerdict {
    pub suspected: bool,
    pub round: Option<usize>,
    pub line: Option<usize>,
}

/// Flags a line whose mismatch stays above `delta` and has not shrunk by a
/// factor 0.99 across the last `infeasibility_window` rounds, while the step
/// size is still above `alpha_floor`. Advisory only.
pub fn detect_global_infeasibility(mismatch: &[Vec<f64>], alphas: &[f64], cfg: &RunConfig) -> InfeasibilityVerdict {
    let k = cfg.infeasibility_window.max(2);
    let none = InfeasibilityVerdict { suspected: false, round: None, line: None };
    if mismatch.len() < k {
        return none;
    }
    let t = mismatch.len() - 1;
    if alphas.get(t).is_some_and(|&a| a < cfg.alpha_floor) {
        return none;
    }
    let first = &mismatch[t + 1 - k];
    let last = &mismatch[t];
    match (0..last.len()).find(|&l| last[l] > cfg.delta && first[l].is_finite() && last[l] > 0.99 * first[l]) {
        Some(l) => InfeasibilityVerdict { suspected: true, round: Some(t), line: Some(l) },
        None => none,
    }
}
