use num_complex::Complex64;

use super::{BusAgent, MultiplierState};
use crate::netmodel::NetworkTree;
use crate::sdpcore::{HermitianMatrix, SdpProblem};

/// Which end of a line a subproblem sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Parent,
    Child,
}

/// Local SDP of one bus.
#[derive(Debug, Clone)]
pub struct Subproblem {
    pub problem: SdpProblem,
    /// `(line, interval index)`; `None` when the line has no flow row.
    pub flow_rows: Vec<(usize, Option<usize>)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnhancementError {
    #[error("direction enhancement needs net consumers: bus {bus} has p_max = {p_max} > 0")]
    NotConsumer { bus: usize, p_max: f64 },
    #[error("line {0} has no flow row in this subproblem")]
    NoFlowRow(usize),
}

/// Every non-feeder bus must be a net active-power consumer.
pub fn check_direction_premise(net: &NetworkTree) -> Result<(), EnhancementError> {
    match net.buses().iter().skip(1).find(|b| b.p_max > 0.0) {
        Some(b) => Err(EnhancementError::NotConsumer { bus: b.id, p_max: b.p_max }),
        None => Ok(()),
    }
}

/// `Tr(C W) = Re W[a, b]` and `Tr(D W) = Im W[a, b]` in local coordinates.
pub fn entry_selectors(dim: usize, a: usize, b: usize) -> (HermitianMatrix, HermitianMatrix) {
    let mut c = HermitianMatrix::zeros(dim);
    c.set(a, b, Complex64::new(0.5, 0.0));
    let mut d = HermitianMatrix::zeros(dim);
    d.set(a, b, Complex64::new(0.0, 0.5));
    (c, d)
}

/// Objective `A^(i)` plus the dualized consistency terms.
///
/// For each line `(p, c)` the term `2 Re(conj(lambda) W_pc)` enters the parent's
/// objective and its negative the child's, so that the mismatch
/// `W^(p)_pc - W^(c)_pc` is the ascent direction of the dual function.
pub fn augmented_objective(agent: &BusAgent, multipliers: &MultiplierState) -> HermitianMatrix {
    let mut m = agent.a_local.clone();
    for inc in &agent.incident {
        let sign = match inc.side {
            Side::Parent => 1.0,
            Side::Child => -1.0,
        };
        m.add_at(inc.p_pos, inc.c_pos, multipliers.lambda[inc.line] * sign);
    }
    m
}

pub fn build_subproblem(agent: &BusAgent, multipliers: &MultiplierState) -> Subproblem {
    let mut problem = SdpProblem::new(augmented_objective(agent, multipliers));
    for (pos, &v2) in agent.v_ref_sq.iter().enumerate() {
        problem.fix_diagonal(pos, v2);
    }
    problem.interval(agent.a_local.clone(), agent.p_bounds.0, agent.p_bounds.1);
    problem.interval(agent.b_local.clone(), agent.q_bounds.0, agent.q_bounds.1);
    let mut flow_rows = Vec::new();
    for inc in &agent.incident {
        let row = inc.p_flow_max.is_finite().then(|| {
            problem.interval(inc.flow_pc.clone(), -inc.p_flow_max, inc.p_flow_max);
            problem.intervals.len() - 1
        });
        flow_rows.push((inc.line, row));
        if inc.loss_max.is_finite() {
            problem.interval(inc.loss.clone(), f64::NEG_INFINITY, inc.loss_max);
        }
    }
    for fix in &agent.fixed_edges {
        let inc = agent.incident.iter().find(|x| x.line == fix.line).expect("fixed edge is incident");
        let (c, d) = entry_selectors(agent.clique.len(), inc.p_pos, inc.c_pos);
        problem.equality(c, fix.value.re);
        problem.equality(d, fix.value.im);
    }
    let mut sub = Subproblem { problem, flow_rows };
    if agent.enhance_direction {
        for inc in &agent.incident {
            apply_direction_enhancement(&mut sub, agent, inc.line).expect("incident line");
        }
    }
    sub
}

/// Parent side: `0 <= P_pc <= P_max`. Child side: `-P_max <= P_cp <= 0`.
///
/// Lines without a finite flow limit gain the one-sided row.
pub fn apply_direction_enhancement(sub: &mut Subproblem, agent: &BusAgent, line: usize) -> Result<(), EnhancementError> {
    let inc = agent.incident.iter().find(|x| x.line == line).ok_or(EnhancementError::NoFlowRow(line))?;
    let pos = sub.flow_rows.iter().position(|&(l, _)| l == line).ok_or(EnhancementError::NoFlowRow(line))?;
    let (matrix, lo, hi) = match inc.side {
        Side::Parent => (inc.flow_pc.clone(), 0.0, inc.p_flow_max),
        Side::Child => (inc.flow_cp.clone(), -inc.p_flow_max, 0.0),
    };
    match sub.flow_rows[pos].1 {
        Some(row) => {
            let r = &mut sub.problem.intervals[row];
            r.matrix = matrix;
            r.lo = lo;
            r.hi = hi;
        }
        None => {
            sub.problem.interval(matrix, lo, hi);
            sub.flow_rows[pos].1 = Some(sub.problem.intervals.len() - 1);
        }
    }
    Ok(())
}
