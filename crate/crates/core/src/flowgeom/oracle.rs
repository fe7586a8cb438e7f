//! Exhaustive grid search over line angles, used to decide feasibility and the
//! loss-minimal operating point of very small trees independently of the SDP path.
//!
//! Every line angle ranges over `[-theta_bar, theta_bar]`. A grid point is
//! accepted when its worst constraint violation is within the Lipschitz bound
//! of the grid spacing, so a feasible network always yields a candidate and the
//! absence of candidates certifies infeasibility. The lowest-loss cells are then refined
//! by successively finer local grids.

use rayon::prelude::*;
use serde::Serialize;

use super::{line_angle_bounds, line_flow, LineFlows};
use crate::netmodel::NetworkTree;

pub const MAX_ORACLE_BUSES: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct OracleSettings {
    pub grid_points_per_line: usize,
    /// Local refinement passes after the global grid.
    pub refine_levels: usize,
    /// Points per line in each refinement pass.
    pub refine_points: usize,
    /// Lowest-loss global candidates refined at each of the start tolerances.
    pub refine_starts: usize,
    /// Upper limit on global grid points.
    pub max_points: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            grid_points_per_line: 2001,
            refine_levels: 8,
            refine_points: 21,
            refine_starts: 8,
            max_points: 200_000_000,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleResult {
    pub feasible: bool,
    pub best_loss: f64,
    /// Parent-minus-child angle per line.
    pub best_angles: Vec<f64>,
    pub max_violation: f64,
    /// Loss error bound implied by the final grid spacing.
    pub resolution_bound: f64,
    /// Loss error bound implied by the global grid spacing.
    pub coarse_resolution_bound: f64,
    pub points_evaluated: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("network with {0} buses is too large for exhaustive search (max {MAX_ORACLE_BUSES})")]
    TooManyBuses(usize),
    #[error("grid of {0} points exceeds the configured limit")]
    TooManyPoints(u64),
    #[error("grid needs at least 2 points per line")]
    Grid,
}

struct Evaluator<'a> {
    net: &'a NetworkTree,
}

#[derive(Debug, Clone, Copy)]
struct Eval {
    loss: f64,
    violation: f64,
}

impl Evaluator<'_> {
    fn eval(&self, flows: &[LineFlows]) -> Eval {
        let net = self.net;
        let n = net.n();
        let mut p = [0.0f64; MAX_ORACLE_BUSES];
        let mut q = [0.0f64; MAX_ORACLE_BUSES];
        let mut loss = 0.0;
        let mut violation: f64 = 0.0;
        for (line, f) in net.lines().iter().zip(flows) {
            p[line.from] += f.p_ik;
            p[line.to] += f.p_ki;
            q[line.from] += f.q_ik;
            q[line.to] += f.q_ki;
            let l = f.loss();
            loss += l;
            violation = violation.max(f.p_ik.abs() - line.p_flow_max).max(l - line.loss_max);
        }
        for i in 0..n {
            let b = net.bus(i);
            violation = violation
                .max(b.p_min - p[i])
                .max(p[i] - b.p_max)
                .max(b.q_min - q[i])
                .max(q[i] - b.q_max);
        }
        Eval { loss, violation: violation.max(0.0) }
    }
}

/// Box grid: per line `points` values evenly spaced on `[lo, hi]`.
#[derive(Debug, Clone)]
struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    points: usize,
}

impl Grid {
    fn step(&self, l: usize) -> f64 {
        (self.hi[l] - self.lo[l]) / (self.points - 1) as f64
    }

    fn value(&self, l: usize, k: usize) -> f64 {
        if self.points == 1 {
            return self.lo[l];
        }
        self.lo[l] + (self.hi[l] - self.lo[l]) * k as f64 / (self.points - 1) as f64
    }
}

#[derive(Debug, Clone)]
struct Best {
    loss: f64,
    violation: f64,
    angles: Vec<f64>,
}

fn better(a: &Best, b: &Best) -> bool {
    match a.loss.total_cmp(&b.loss) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.angles.iter().zip(&b.angles).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y),
    }
}

/// Keeps the `k` lowest-loss candidates in ascending order.
fn keep_best(list: &mut Vec<Best>, cand: Best, k: usize) {
    if list.len() == k && !better(&cand, list.last().expect("k > 0")) {
        return;
    }
    let pos = list.partition_point(|b| better(b, &cand));
    list.insert(pos, cand);
    list.truncate(k);
}

/// For each tolerance, the best `k` grid points by loss whose violation is within it,
/// plus the smallest violation seen and the number of points evaluated.
fn search(net: &NetworkTree, grid: &Grid, tols: &[f64], k: usize) -> (Vec<Vec<Best>>, f64, u64) {
    let m = net.lines().len();
    let gb: Vec<(f64, f64)> = net.lines().iter().map(|l| (l.g, l.b)).collect();
    let tables: Vec<Vec<LineFlows>> = (0..m)
        .map(|l| (0..grid.points).map(|k| line_flow(gb[l].0, gb[l].1, grid.value(l, k))).collect())
        .collect();
    let evaluator = Evaluator { net };
    if m == 0 {
        let e = evaluator.eval(&[]);
        let lists = tols
            .iter()
            .map(|&t| (e.violation <= t).then(|| Best { loss: e.loss, violation: e.violation, angles: vec![] }).into_iter().collect())
            .collect();
        return (lists, e.violation, 1);
    }

    let slices: Vec<(Vec<Vec<Best>>, f64, u64)> = (0..grid.points)
        .into_par_iter()
        .map(|first| {
            let mut idx = vec![0usize; m];
            idx[0] = first;
            let mut flows: Vec<LineFlows> = (0..m).map(|l| tables[l][idx[l]]).collect();
            let mut best: Vec<Vec<Best>> = vec![Vec::new(); tols.len()];
            let mut min_violation = f64::INFINITY;
            let mut count = 0u64;
            loop {
                let e = evaluator.eval(&flows);
                count += 1;
                min_violation = min_violation.min(e.violation);
                for (list, &t) in best.iter_mut().zip(tols) {
                    if e.violation <= t && (list.len() < k || e.loss <= list[list.len() - 1].loss) {
                        let angles = (0..m).map(|l| grid.value(l, idx[l])).collect();
                        keep_best(list, Best { loss: e.loss, violation: e.violation, angles }, k);
                    }
                }
                // Odometer over lines 1..m.
                let mut l = 1;
                while l < m {
                    idx[l] += 1;
                    if idx[l] < grid.points {
                        flows[l] = tables[l][idx[l]];
                        break;
                    }
                    idx[l] = 0;
                    flows[l] = tables[l][0];
                    l += 1;
                }
                if l == m {
                    break;
                }
            }
            (best, min_violation, count)
        })
        .collect();

    let mut best: Vec<Vec<Best>> = vec![Vec::new(); tols.len()];
    let mut min_violation = f64::INFINITY;
    let mut total = 0;
    for (lists, v, c) in slices {
        total += c;
        min_violation = min_violation.min(v);
        for (acc, list) in best.iter_mut().zip(lists) {
            for b in list {
                keep_best(acc, b, k);
            }
        }
    }
    (best, min_violation, total)
}

/// Lipschitz bound of the worst violation for a half-step perturbation of every angle.
fn grid_tolerance(net: &NetworkTree, grid: &Grid) -> f64 {
    let n = net.n();
    let mut per_bus = vec![0.0; n];
    let mut per_line: f64 = 0.0;
    for (l, line) in net.lines().iter().enumerate() {
        let lip = line.g.hypot(line.b) * 0.5 * grid.step(l);
        per_bus[line.from] += lip;
        per_bus[line.to] += lip;
        per_line = per_line.max(2.0 * lip);
    }
    per_bus.into_iter().fold(per_line, f64::max) * (1.0 + 1e-9)
}

fn loss_resolution(net: &NetworkTree, grid: &Grid, bars: &[f64]) -> f64 {
    net.lines()
        .iter()
        .enumerate()
        .map(|(l, line)| 2.0 * line.g * bars[l].min(std::f64::consts::FRAC_PI_2).sin() * 0.5 * grid.step(l))
        .sum()
}

pub fn brute_force_oracle(net: &NetworkTree, settings: &OracleSettings) -> Result<OracleResult, OracleError> {
    let n = net.n();
    if n > MAX_ORACLE_BUSES {
        return Err(OracleError::TooManyBuses(n));
    }
    if settings.grid_points_per_line < 2 || settings.refine_points < 2 {
        return Err(OracleError::Grid);
    }
    let m = net.lines().len();
    let total = (settings.grid_points_per_line as u64).saturating_pow(m as u32);
    if total > settings.max_points {
        return Err(OracleError::TooManyPoints(total));
    }
    let bars: Vec<f64> = line_angle_bounds(net)
        .iter()
        .zip(net.lines())
        .map(|(ab, l)| ab.effective_bar(l.g, l.b))
        .collect();

    let grid = Grid {
        lo: bars.iter().map(|b| -b).collect(),
        hi: bars.clone(),
        points: settings.grid_points_per_line,
    };
    let tol = grid_tolerance(net, &grid);
    let coarse_res = loss_resolution(net, &grid, &bars);
    // Starts are drawn at several tolerances down to strict feasibility, so a thin
    // feasible set is not crowded out by cheaper points that exploit the tolerance.
    let tols: Vec<f64> = (0..8).map(|j| tol * 0.25f64.powi(j)).chain([0.0]).collect();
    let (lists, min_violation, mut evaluated) = search(net, &grid, &tols, settings.refine_starts.max(1));
    let mut starts: Vec<Best> = Vec::new();
    for b in lists.into_iter().flatten() {
        if !starts.iter().any(|s| s.angles == b.angles) {
            starts.push(b);
        }
    }
    if starts.is_empty() {
        return Ok(OracleResult {
            feasible: false,
            best_loss: f64::INFINITY,
            best_angles: vec![],
            max_violation: min_violation,
            resolution_bound: coarse_res,
            coarse_resolution_bound: coarse_res,
            points_evaluated: evaluated,
        });
    }

    // Strictly feasible starts stay strictly feasible. Other starts are refined under
    // the tolerance of each finer grid, since the coarse tolerance lets them trade
    // violation for loss. When no point of a window meets it, the least-violating
    // point is taken instead so the start moves towards the feasible set.
    let refined: Vec<(bool, Best, f64, u64)> = starts
        .into_par_iter()
        .map(|mut best| {
            let strict = best.violation == 0.0;
            let mut grid = grid.clone();
            let mut resolution = coarse_res;
            let mut tight = true;
            let mut count = 0;
            for _ in 0..settings.refine_levels {
                let half: Vec<f64> = (0..m).map(|l| 2.0 * grid.step(l)).collect();
                let next = Grid {
                    lo: (0..m).map(|l| (best.angles[l] - half[l]).max(-bars[l])).collect(),
                    hi: (0..m).map(|l| (best.angles[l] + half[l]).min(bars[l])).collect(),
                    points: settings.refine_points,
                };
                let tol = if strict { 0.0 } else { grid_tolerance(net, &next) };
                let (mut found, least, c) = search(net, &next, &[tol], 1);
                count += c;
                tight = !found[0].is_empty();
                if !tight {
                    let (relaxed, _, c) = search(net, &next, &[least * (1.0 + 1e-12)], 1);
                    count += c;
                    found = relaxed;
                }
                let Some(b) = found.swap_remove(0).into_iter().next() else { break };
                best = b;
                resolution = loss_resolution(net, &next, &bars);
                grid = next;
            }
            (tight, best, resolution, count)
        })
        .collect();
    evaluated += refined.iter().map(|r| r.3).sum::<u64>();
    let rank = |r: &(bool, Best, f64, u64)| (!r.0, if r.0 { r.1.loss } else { r.1.violation });
    let (_, best, resolution, _) = refined
        .into_iter()
        .reduce(|a, b| {
            let (ka, kb) = (rank(&a), rank(&b));
            let order = kb.0.cmp(&ka.0).then(kb.1.total_cmp(&ka.1));
            if order.is_lt() || (order.is_eq() && better(&b.1, &a.1)) {
                b
            } else {
                a
            }
        })
        .expect("at least one start");

    Ok(OracleResult {
        feasible: true,
        best_loss: best.loss,
        best_angles: best.angles,
        max_violation: best.violation,
        resolution_bound: resolution,
        coarse_resolution_bound: coarse_res,
        points_evaluated: evaluated,
    })
}
