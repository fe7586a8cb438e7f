//! Closed-form line-flow geometry at unit voltage magnitudes.
//!
//! For a line with conductance `g`, susceptance `b` and angle difference
//! `theta = theta_i - theta_k` the active flows trace an ellipse centred at
//! `(g, g)` and the reactive flows an ellipse centred at `(b, b)`; the two are
//! related by the linear map of [`ellipse_map`]. Angle bounds derived from the
//! flow and loss limits feed the exactness conditions checked by
//! [`check_theorem_conditions`].

mod oracle;

pub use oracle::{brute_force_oracle, OracleError, OracleResult, OracleSettings};

use serde::Serialize;

use crate::netmodel::NetworkTree;

/// Offset below `atan(b/g)` used to cap the angle of a line without finite limits.
pub const UNCONSTRAINED_CAP_EPS: f64 = 1e-9;

/// Bisection tolerance in radians.
const BISECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFlows {
    pub p_ik: f64,
    pub p_ki: f64,
    pub q_ik: f64,
    pub q_ki: f64,
}

impl LineFlows {
    pub fn loss(&self) -> f64 {
        self.p_ik + self.p_ki
    }
}

pub fn line_flow(g: f64, b: f64, theta: f64) -> LineFlows {
    let (s, c) = theta.sin_cos();
    let one_minus = 1.0 - c;
    LineFlows {
        p_ik: g * one_minus + b * s,
        p_ki: g * one_minus - b * s,
        q_ik: b * one_minus - g * s,
        q_ki: b * one_minus + g * s,
    }
}

/// `H` mapping active flow pairs `(P_ik, P_ki)` onto reactive pairs `(Q_ik, Q_ki)`.
pub fn ellipse_map(g: f64, b: f64) -> [[f64; 2]; 2] {
    let k = 1.0 / (2.0 * b * g);
    let d = b * b - g * g;
    let s = b * b + g * g;
    [[k * d, k * s], [k * s, k * d]]
}

pub fn apply_map(h: &[[f64; 2]; 2], p: (f64, f64)) -> (f64, f64) {
    (h[0][0] * p.0 + h[0][1] * p.1, h[1][0] * p.0 + h[1][1] * p.1)
}

/// Residual of the implicit equation of the active-flow ellipse; zero on the curve.
///
/// In the rotated frame `u = (x + y)/2 - g`, `w = (x - y)/2` the curve reads
/// `(u/g)^2 + (w/b)^2 = 1`.
pub fn active_ellipse_residual(g: f64, b: f64, p: (f64, f64)) -> f64 {
    let u = 0.5 * (p.0 + p.1) - g;
    let w = 0.5 * (p.0 - p.1);
    (u / g).powi(2) + (w / b).powi(2) - 1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleBounds {
    pub theta_p: f64,
    pub theta_l: f64,
    pub theta_bar: f64,
    pub theta_tilde: f64,
}

impl AngleBounds {
    /// `theta_bar`, or the cap just below `atan(b/g)` when it is infinite.
    pub fn effective_bar(&self, g: f64, b: f64) -> f64 {
        if self.theta_bar.is_finite() {
            self.theta_bar
        } else {
            (b / g).atan() - UNCONSTRAINED_CAP_EPS
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("conductance must be positive, got {0}")]
    Conductance(f64),
    #[error("susceptance must be positive, got {0}")]
    Susceptance(f64),
}

/// Angle limits implied by a flow limit and a loss limit.
pub fn angle_bounds(g: f64, b: f64, p_flow_max: f64, loss_max: f64) -> Result<AngleBounds, GeometryError> {
    if !(g > 0.0) {
        return Err(GeometryError::Conductance(g));
    }
    if !(b > 0.0) {
        return Err(GeometryError::Susceptance(b));
    }
    let ratio = loss_max / (2.0 * g);
    let theta_l = if ratio <= 2.0 { (1.0 - ratio.max(0.0)).acos() } else { f64::INFINITY };

    // P_ik(theta) increases on [0, pi - atan(b/g)], from 0 to g + sqrt(g^2 + b^2).
    let top = std::f64::consts::PI - (b / g).atan();
    let flow = |t: f64| g * (1.0 - t.cos()) + b * t.sin();
    let theta_p = if p_flow_max <= 0.0 {
        0.0
    } else if p_flow_max > flow(top) {
        f64::INFINITY
    } else {
        let (mut lo, mut hi) = (0.0, top);
        while hi - lo > BISECTION_TOL {
            let mid = 0.5 * (lo + hi);
            if flow(mid) < p_flow_max {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let theta_bar = theta_p.min(theta_l);
    Ok(AngleBounds {
        theta_p,
        theta_l,
        theta_bar,
        theta_tilde: (g / b).atan().min(theta_bar),
    })
}

pub fn line_angle_bounds(net: &NetworkTree) -> Vec<AngleBounds> {
    net.lines()
        .iter()
        .map(|l| angle_bounds(l.g, l.b, l.p_flow_max, l.loss_max).expect("validated line admittance"))
        .collect()
}

/// `sum_{k in set} b_ik - g_ik sin(theta~_ik) - b_ik cos(theta~_ik)` over the given lines.
fn beta_over(net: &NetworkTree, line_ids: impl Iterator<Item = usize>, bounds: &[AngleBounds]) -> f64 {
    line_ids
        .map(|l| {
            let line = &net.lines()[l];
            let t = bounds[l].theta_tilde;
            line.b - line.g * t.sin() - line.b * t.cos()
        })
        .sum()
}

/// Reactive lower envelope `beta_i`, summed over the children of bus `i`.
pub fn beta(net: &NetworkTree, i: usize, bounds: &[AngleBounds]) -> f64 {
    let ids: Vec<usize> = net.children(i).iter().map(|&c| net.parent_line(c).expect("child has a parent line")).collect();
    beta_over(net, ids.into_iter(), bounds)
}

/// Same sum taken over every neighbor of `i` (parent line included).
pub fn beta_all_neighbors(net: &NetworkTree, i: usize, bounds: &[AngleBounds]) -> f64 {
    let ids: Vec<usize> = net.neighbors(i).iter().map(|&k| net.line_between(i, k).expect("neighbor line")).collect();
    beta_over(net, ids.into_iter(), bounds)
}

#[derive(Debug, Clone, Serialize)]
pub struct LineCheck {
    pub from: usize,
    pub to: usize,
    pub bounds: AngleBounds,
    /// `theta_bar` after capping lines without finite limits.
    pub theta_bar_effective: f64,
    pub angle_limit: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BusCheck {
    pub bus: usize,
    pub q_min: f64,
    pub beta: f64,
    pub beta_all_neighbors: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub lines: Vec<LineCheck>,
    pub buses: Vec<BusCheck>,
    pub pass: bool,
}

pub fn check_theorem_conditions(net: &NetworkTree) -> ConditionReport {
    let bounds = line_angle_bounds(net);
    let lines: Vec<LineCheck> = net
        .lines()
        .iter()
        .zip(bounds.iter())
        .map(|(l, ab)| {
            let limit = (l.b / l.g).atan();
            let eff = ab.effective_bar(l.g, l.b);
            LineCheck {
                from: l.from + 1,
                to: l.to + 1,
                bounds: *ab,
                theta_bar_effective: eff,
                angle_limit: limit,
                pass: eff < limit,
            }
        })
        .collect();
    let buses: Vec<BusCheck> = (1..net.n())
        .map(|i| {
            let beta_i = beta(net, i, &bounds);
            let q_min = net.bus(i).q_min;
            BusCheck {
                bus: i + 1,
                q_min,
                beta: beta_i,
                beta_all_neighbors: beta_all_neighbors(net, i, &bounds),
                pass: q_min < beta_i,
            }
        })
        .collect();
    let pass = lines.iter().all(|l| l.pass) && buses.iter().all(|b| b.pass);
    ConditionReport { lines, buses, pass }
}
