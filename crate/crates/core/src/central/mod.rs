//! Centralized convex relaxation of the loss-minimizing voltage regulation problem.

use num_complex::Complex64;
use serde::Serialize;

use crate::flowgeom::check_theorem_conditions;
use crate::netmodel::{admittance_matrix, injection_operators, line_flow_operator, line_loss_operator, NetworkTree};
use crate::sdpcore::{rank_and_factor, solve_sdp, HermitianMatrix, NotPsd, ProblemError, SdpProblem, SdpStatus, SdpTolerances};

pub const DEFAULT_RANK_TOL: f64 = 1e-5;

/// Bound violations below this are reported as satisfied.
pub const VIOLATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct CentralSettings {
    pub sdp: SdpTolerances,
    pub rank_tol: f64,
}

impl Default for CentralSettings {
    fn default() -> Self {
        Self { sdp: SdpTolerances::default(), rank_tol: DEFAULT_RANK_TOL }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    Optimal {
        voltages: Vec<[f64; 2]>,
        total_loss: f64,
        /// `(P_i, Q_i)` per bus.
        injections: Vec<[f64; 2]>,
        relaxed_objective: f64,
    },
    /// The relaxation is not exact; under the exactness conditions the original problem is infeasible.
    RelaxationRankHigh { rank: usize, relaxed_objective: f64, eigenvalues: Vec<f64> },
    Infeasible { min_violation: Option<f64> },
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Optimal { .. } => "optimal",
            Classification::RelaxationRankHigh { .. } => "relaxation_rank_high",
            Classification::Infeasible { .. } => "infeasible",
        }
    }

    pub fn relaxed_objective(&self) -> Option<f64> {
        match self {
            Classification::Optimal { relaxed_objective, .. } | Classification::RelaxationRankHigh { relaxed_objective, .. } => {
                Some(*relaxed_objective)
            }
            Classification::Infeasible { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CentralReport {
    pub classification: Classification,
    /// False when the exactness conditions fail; the classification then carries no guarantee.
    pub conditions_pass: bool,
    pub sdp_iterations: usize,
    #[serde(skip)]
    pub w: Option<HermitianMatrix>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum CentralError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("interior-point solver failed after {iterations} iterations")]
    NumericalFailure { iterations: usize },
    #[error(transparent)]
    NotPsd(#[from] NotPsd),
    #[error("cannot recover voltages from a rank {0} matrix")]
    RankHigh(usize),
}

/// Relaxation with objective `sum_i A_i`, pinned diagonal, injection intervals, line loss and flow limits.
///
/// Rows are emitted in a fixed order: `P_i` and `Q_i` per bus, then loss and flow per line.
pub fn assemble_relaxation(net: &NetworkTree) -> SdpProblem {
    let n = net.n();
    let y = admittance_matrix(net);
    let ops: Vec<(HermitianMatrix, HermitianMatrix)> = (0..n).map(|i| injection_operators(&y, i)).collect();
    let objective = ops.iter().fold(HermitianMatrix::zeros(n), |acc, (a, _)| acc.add(a));
    let mut p = SdpProblem::new(objective);
    for (i, bus) in net.buses().iter().enumerate() {
        p.fix_diagonal(i, bus.v_ref * bus.v_ref);
    }
    for ((a, b), bus) in ops.into_iter().zip(net.buses()) {
        p.interval(a, bus.p_min, bus.p_max);
        p.interval(b, bus.q_min, bus.q_max);
    }
    for line in net.lines() {
        let g = line_loss_operator(net, line.from, line.to).expect("tree line");
        p.interval(g, f64::NEG_INFINITY, line.loss_max);
        let a = line_flow_operator(net, line.from, line.to).expect("tree line");
        p.interval(a, -line.p_flow_max, line.p_flow_max);
    }
    p
}

/// `sqrt(lambda_1) u` with the phase of the feeder voltage set to zero.
pub fn recover_voltages(w: &HermitianMatrix, rank_tol: f64) -> Result<Vec<Complex64>, CentralError> {
    let f = rank_and_factor(w, rank_tol)?;
    if f.rank > 1 {
        return Err(CentralError::RankHigh(f.rank));
    }
    if w.dim() == 0 {
        return Ok(vec![]);
    }
    let scale = f.eigenvalues[0].max(0.0).sqrt();
    let mut v: Vec<Complex64> = f.leading.iter().map(|z| z * scale).collect();
    let v1 = v[0];
    if v1.norm() > 0.0 {
        let rot = v1.conj() / v1.norm();
        for z in &mut v {
            *z *= rot;
        }
    }
    Ok(v)
}

pub fn solve_and_classify(net: &NetworkTree, settings: &CentralSettings) -> Result<CentralReport, CentralError> {
    let conditions_pass = check_theorem_conditions(net).pass;
    let problem = assemble_relaxation(net);
    let sol = solve_sdp(&problem, &settings.sdp)?;
    let classification = match sol.status {
        SdpStatus::Infeasible => Classification::Infeasible { min_violation: sol.min_violation },
        SdpStatus::NumericalFailure => return Err(CentralError::NumericalFailure { iterations: sol.iterations }),
        SdpStatus::Optimal => {
            let w = sol.w.as_ref().expect("optimal solution carries W");
            let f = rank_and_factor(w, settings.rank_tol)?;
            if f.rank > 1 {
                Classification::RelaxationRankHigh { rank: f.rank, relaxed_objective: sol.objective, eigenvalues: f.eigenvalues }
            } else {
                let v = recover_voltages(w, settings.rank_tol)?;
                let eval = evaluate_solution(net, &v);
                Classification::Optimal {
                    voltages: v.iter().map(|z| [z.re, z.im]).collect(),
                    total_loss: eval.total_loss,
                    injections: eval.buses.iter().map(|b| [b.p, b.q]).collect(),
                    relaxed_objective: sol.objective,
                }
            }
        }
    };
    Ok(CentralReport { classification, conditions_pass, sdp_iterations: sol.iterations, w: sol.w })
}

#[derive(Debug, Clone, Serialize)]
pub struct BusEvaluation {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub v_mag: f64,
    pub v_angle: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LineEvaluation {
    pub from: usize,
    pub to: usize,
    pub p_ik: f64,
    pub p_ki: f64,
    pub q_ik: f64,
    pub q_ki: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    /// `p_min`, `p_max`, `q_min`, `q_max`, `v_ref`, `flow` or `loss`.
    pub kind: &'static str,
    /// One-based bus id, or `(from, to)` for lines.
    pub element: Vec<usize>,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub buses: Vec<BusEvaluation>,
    pub lines: Vec<LineEvaluation>,
    pub total_loss: f64,
    pub violations: Vec<Violation>,
}

/// Physical quantities and bound violations at voltage vector `v`.
pub fn evaluate_solution(net: &NetworkTree, v: &[Complex64]) -> Evaluation {
    let y = admittance_matrix(net);
    let n = net.n();
    let mut violations = Vec::new();
    let mut flag = |kind: &'static str, element: Vec<usize>, magnitude: f64| {
        if magnitude > VIOLATION_TOL {
            violations.push(Violation { kind, element, magnitude });
        }
    };

    let buses: Vec<BusEvaluation> = (0..n)
        .map(|i| {
            let current: Complex64 = (0..n).map(|k| y[(i, k)] * v[k]).sum();
            let s = v[i] * current.conj();
            let bus = net.bus(i);
            flag("p_min", vec![i + 1], bus.p_min - s.re);
            flag("p_max", vec![i + 1], s.re - bus.p_max);
            flag("q_min", vec![i + 1], bus.q_min - s.im);
            flag("q_max", vec![i + 1], s.im - bus.q_max);
            flag("v_ref", vec![i + 1], (v[i].norm() - bus.v_ref).abs());
            BusEvaluation { bus: i + 1, p: s.re, q: s.im, v_mag: v[i].norm(), v_angle: v[i].arg() }
        })
        .collect();

    let lines: Vec<LineEvaluation> = net
        .lines()
        .iter()
        .map(|line| {
            let yc = line.admittance().conj();
            let flow = |a: usize, b: usize| yc * (v[a].norm_sqr() - v[a] * v[b].conj());
            let s_ik = flow(line.from, line.to);
            let s_ki = flow(line.to, line.from);
            let loss = s_ik.re + s_ki.re;
            let ids = vec![line.from + 1, line.to + 1];
            flag("flow", ids.clone(), s_ik.re.abs() - line.p_flow_max);
            flag("loss", ids, loss - line.loss_max);
            LineEvaluation { from: line.from + 1, to: line.to + 1, p_ik: s_ik.re, p_ki: s_ki.re, q_ik: s_ik.im, q_ki: s_ki.im, loss }
        })
        .collect();

    let total_loss = lines.iter().map(|l| l.loss).sum();
    Evaluation { buses, lines, total_loss, violations }
}

/// Unit-magnitude voltages from per-line angle differences `theta_parent - theta_child`.
pub fn voltages_from_angles(net: &NetworkTree, angles: &[f64]) -> Vec<Complex64> {
    let mut phase = vec![0.0; net.n()];
    for (l, line) in net.lines().iter().enumerate() {
        phase[line.to] = phase[line.from] - angles[l];
    }
    net.buses().iter().zip(phase).map(|(b, t)| Complex64::from_polar(b.v_ref, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgeom::{brute_force_oracle, OracleSettings};
    use crate::netmodel::load_network;

    fn two_bus(p1: (f64, f64), p2: (f64, f64), q: f64) -> NetworkTree {
        load_network(&format!(
            r#"{{"version":1,"buses":[
                {{"id":1,"p_min":{},"p_max":{},"q_min":{},"q_max":10}},
                {{"id":2,"p_min":{},"p_max":{},"q_min":{},"q_max":10}}],
              "lines":[{{"from":1,"to":2,"g":1,"b":2,"p_flow_max":5}}]}}"#,
            p1.0, p1.1, -q, p2.0, p2.1, -q
        ))
        .unwrap()
    }

    #[test]
    fn constraint_census() {
        let net = two_bus((-10.0, 10.0), (-1.0, -0.5), 10.0);
        let p = assemble_relaxation(&net);
        assert_eq!(p.equalities.len(), 2);
        assert_eq!(p.intervals.len(), 6);
        let ones = [Complex64::new(1.0, 0.0); 2];
        assert!(p.objective.quadratic_form(&ones).abs() < 1e-14);
    }

    #[test]
    fn consumer_case_is_exact() {
        let net = two_bus((-10.0, 10.0), (-1.0, -0.5), 10.0);
        let r = solve_and_classify(&net, &CentralSettings::default()).unwrap();
        let Classification::Optimal { total_loss, voltages, .. } = &r.classification else {
            panic!("{:?}", r.classification)
        };
        let oracle = brute_force_oracle(&net, &OracleSettings::default()).unwrap();
        assert!((total_loss - oracle.best_loss).abs() < 1e-3);
        assert!((total_loss - 0.0734).abs() < 1e-3);
        assert!(voltages[0][1].abs() < 1e-12);
        for v in voltages {
            assert!((v[0].hypot(v[1]) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn positive_lower_bounds_give_rank_two() {
        let net = two_bus((0.05, 10.0), (0.05, 10.0), 10.0);
        let r = solve_and_classify(&net, &CentralSettings::default()).unwrap();
        assert!(matches!(r.classification, Classification::RelaxationRankHigh { rank: 2, .. }), "{:?}", r.classification);
        assert!(!brute_force_oracle(&net, &OracleSettings::default()).unwrap().feasible);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // The flow into bus 2 can never reach 20 with p_flow_max = 5.
        let net = two_bus((-10.0, 10.0), (20.0, 30.0), 10.0);
        let r = solve_and_classify(&net, &CentralSettings::default()).unwrap();
        assert_eq!(r.classification.label(), "infeasible");
    }

    #[test]
    fn single_bus_recovers_unit_voltage() {
        let net = load_network(r#"{"version":1,"buses":[{"id":1,"p_min":-1,"p_max":1,"q_min":-1,"q_max":1}],"lines":[]}"#).unwrap();
        let r = solve_and_classify(&net, &CentralSettings::default()).unwrap();
        let Classification::Optimal { voltages, .. } = r.classification else { panic!() };
        assert!((voltages[0][0] - 1.0).abs() < 1e-8 && voltages[0][1].abs() < 1e-12);
    }

    #[test]
    fn recover_exact_outer_product() {
        let v = [Complex64::from_polar(1.0, 0.3), Complex64::from_polar(1.0, -0.2)];
        let got = recover_voltages(&HermitianMatrix::outer(&v), DEFAULT_RANK_TOL).unwrap();
        assert!(got[0].im.abs() < 1e-12);
        assert!((got[1] - Complex64::from_polar(1.0, -0.5)).norm() < 1e-9);
        assert!(matches!(recover_voltages(&HermitianMatrix::identity(2), DEFAULT_RANK_TOL), Err(CentralError::RankHigh(2))));
    }

    #[test]
    fn evaluation_flags_flow_violation() {
        let net = two_bus((-10.0, 10.0), (-10.0, 10.0), 10.0);
        let flat = evaluate_solution(&net, &[Complex64::new(1.0, 0.0); 2]);
        assert!(flat.total_loss.abs() < 1e-15 && flat.violations.is_empty());
        let v = voltages_from_angles(&net, &[std::f64::consts::FRAC_PI_2]);
        let e = evaluate_solution(&net, &v);
        assert!((e.lines[0].p_ik - 3.0).abs() < 1e-12 && (e.lines[0].q_ki - 3.0).abs() < 1e-12);
        let mut tight = net.clone();
        tight.line_mut(0).p_flow_max = 2.0;
        let e = evaluate_solution(&tight, &v);
        assert_eq!(e.violations.len(), 1);
        assert_eq!(e.violations[0].kind, "flow");
        assert!((e.violations[0].magnitude - 1.0).abs() < 1e-12);
    }
}
