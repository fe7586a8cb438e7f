//! Dense solver for small semidefinite programs over Hermitian matrices.
//!
//! Problems have the form
//!
//! ```text
//! min Tr(C W)  s.t.  Tr(A_j W) = b_j,  lo_j <= Tr(B_j W) <= hi_j,  W >= 0
//! ```
//!
//! and are solved through the real symmetric embedding by a primal-dual
//! interior-point method. Infeasibility is decided by a phase-one problem that
//! minimizes the total constraint violation.

mod hermitian;
mod ipm;
mod rank;

pub use hermitian::HermitianMatrix;
pub use rank::{rank_and_factor, NotPsd, RankFactor};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use ipm::{ConicProblem, IpmOutcome, IpmSettings, OrthantVar};

#[derive(Debug, Clone)]
pub struct EqualityConstraint {
    pub matrix: HermitianMatrix,
    pub value: f64,
}

/// `lo <= Tr(matrix W) <= hi`; either side may be infinite.
#[derive(Debug, Clone)]
pub struct IntervalConstraint {
    pub matrix: HermitianMatrix,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub dim: usize,
    pub objective: HermitianMatrix,
    pub equalities: Vec<EqualityConstraint>,
    pub intervals: Vec<IntervalConstraint>,
    /// Upper bound on `Tr(W)` over the feasible set. Inferred automatically when
    /// every diagonal entry is pinned by an equality.
    pub trace_bound: Option<f64>,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ProblemError {
    #[error("constraint {index} has dimension {found}, expected {expected}")]
    Dimension { index: usize, found: usize, expected: usize },
    #[error("interval constraint {index} has lo {lo} > hi {hi}")]
    EmptyInterval { index: usize, lo: f64, hi: f64 },
    #[error("constraint {index} has a non-finite value")]
    NonFinite { index: usize },
}

impl SdpProblem {
    pub fn new(objective: HermitianMatrix) -> Self {
        Self {
            dim: objective.dim(),
            objective,
            equalities: Vec::new(),
            intervals: Vec::new(),
            trace_bound: None,
        }
    }

    pub fn equality(&mut self, matrix: HermitianMatrix, value: f64) -> &mut Self {
        self.equalities.push(EqualityConstraint { matrix, value });
        self
    }

    pub fn interval(&mut self, matrix: HermitianMatrix, lo: f64, hi: f64) -> &mut Self {
        self.intervals.push(IntervalConstraint { matrix, lo, hi });
        self
    }

    /// Pins `W[i, i] = value`.
    pub fn fix_diagonal(&mut self, i: usize, value: f64) -> &mut Self {
        let mut e = HermitianMatrix::zeros(self.dim);
        e.set(i, i, 1.0.into());
        self.equality(e, value)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.dim;
        if self.objective.dim() != n {
            return Err(ProblemError::Dimension { index: 0, found: self.objective.dim(), expected: n });
        }
        for (index, e) in self.equalities.iter().enumerate() {
            if e.matrix.dim() != n {
                return Err(ProblemError::Dimension { index, found: e.matrix.dim(), expected: n });
            }
            if !e.value.is_finite() {
                return Err(ProblemError::NonFinite { index });
            }
        }
        for (index, c) in self.intervals.iter().enumerate() {
            let index = index + self.equalities.len();
            if c.matrix.dim() != n {
                return Err(ProblemError::Dimension { index, found: c.matrix.dim(), expected: n });
            }
            if c.lo.is_nan() || c.hi.is_nan() {
                return Err(ProblemError::NonFinite { index });
            }
            if c.lo > c.hi {
                return Err(ProblemError::EmptyInterval { index, lo: c.lo, hi: c.hi });
            }
        }
        Ok(())
    }

    /// Trace bound from pinned diagonal entries, if all of them are pinned.
    pub fn inferred_trace_bound(&self) -> Option<f64> {
        if let Some(t) = self.trace_bound {
            return Some(t);
        }
        let mut diag: Vec<Option<f64>> = vec![None; self.dim];
        for e in &self.equalities {
            let m = e.matrix.as_matrix();
            let mut nz = m.iter().enumerate().filter(|(_, z)| z.norm() > 0.0);
            if let (Some((pos, z)), None) = (nz.next(), nz.next()) {
                let (r, c) = (pos % self.dim, pos / self.dim);
                if r == c && z.re != 0.0 {
                    diag[r] = Some(e.value / z.re);
                }
            }
        }
        diag.iter().try_fold(0.0, |acc, d| d.map(|v| acc + v.max(0.0)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Primal objective and rigorous dual lower bound at one interior-point iteration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct IterationRecord {
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// Lagrangian bound valid for every feasible `W`; `None` without a trace bound.
    pub dual_bound: Option<f64>,
    pub mu: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub w: Option<HermitianMatrix>,
    pub objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Phase-one optimum (minimum total violation) when infeasibility was examined.
    pub min_violation: Option<f64>,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpTolerances {
    /// Relative duality gap target.
    pub gap: f64,
    /// Relative primal and dual residual target.
    pub feasibility: f64,
    pub max_iter: usize,
    /// Phase-one optimum above this declares infeasibility.
    pub infeasibility: f64,
    pub step_fraction: f64,
    /// Intervals narrower than this (relative) are treated as equalities.
    pub equality_width: f64,
}

impl Default for SdpTolerances {
    fn default() -> Self {
        Self {
            gap: 1e-9,
            feasibility: 1e-9,
            max_iter: 100,
            infeasibility: 1e-6,
            step_fraction: 0.95,
            equality_width: 1e-12,
        }
    }
}

struct Embedded {
    conic: ConicProblem,
    /// Row index -> original constraint (equalities first, then intervals).
    /// Dropped equality rows that were inconsistent with the kept ones.
    inconsistent: bool,
}

fn embed_scaled(h: &HermitianMatrix) -> DMatrix<f64> {
    h.embed() * 0.5
}

/// Greedy Gram-Schmidt selection of linearly independent equality rows.
fn independent_rows(rows: &[DMatrix<f64>], b: &[f64], drop_tol: f64) -> (Vec<usize>, bool) {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let v = DVector::from_column_slice(r.as_slice());
        let norm = v.norm();
        let mut w = v.clone();
        for q in &basis {
            let c = q.dot(&w);
            w -= q * c;
        }
        if norm > 0.0 && w.norm() > drop_tol * norm {
            let n = w.norm();
            basis.push(w / n);
            kept.push(i);
        } else {
            dropped.push(i);
        }
    }
    let mut inconsistent = false;
    if !dropped.is_empty() {
        let k = kept.len();
        let gram = DMatrix::from_fn(k, k, |a, c| inner(&rows[kept[a]], &rows[kept[c]]));
        let chol = gram.cholesky();
        for &d in &dropped {
            let rhs = DVector::from_fn(k, |a, _| inner(&rows[kept[a]], &rows[d]));
            let coef = match (&chol, k) {
                (_, 0) => DVector::zeros(0),
                (Some(ch), _) => ch.solve(&rhs),
                (None, _) => {
                    inconsistent = true;
                    continue;
                }
            };
            let pred: f64 = kept.iter().zip(coef.iter()).map(|(&i, c)| c * b[i]).sum();
            if (pred - b[d]).abs() > 1e-8 * (1.0 + b[d].abs()) {
                inconsistent = true;
            }
        }
    }
    (kept, inconsistent)
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn build_embedded(p: &SdpProblem, tol: &SdpTolerances) -> Embedded {
    let mut eq_rows = Vec::new();
    let mut eq_b = Vec::new();
    for e in &p.equalities {
        eq_rows.push(embed_scaled(&e.matrix));
        eq_b.push(e.value);
    }
    let mut intervals = Vec::new();
    for c in &p.intervals {
        let width = c.hi - c.lo;
        if c.lo.is_finite() && c.hi.is_finite() && width <= tol.equality_width * (1.0 + c.lo.abs().max(c.hi.abs())) {
            eq_rows.push(embed_scaled(&c.matrix));
            eq_b.push(0.5 * (c.lo + c.hi));
        } else if c.lo.is_finite() || c.hi.is_finite() {
            intervals.push(c);
        }
    }
    let (kept, inconsistent) = independent_rows(&eq_rows, &eq_b, 1e-10);

    let mut rows: Vec<DMatrix<f64>> = kept.iter().map(|&i| eq_rows[i].clone()).collect();
    let mut b: Vec<f64> = kept.iter().map(|&i| eq_b[i]).collect();
    let mut lp = Vec::new();
    for c in intervals {
        let a = embed_scaled(&c.matrix);
        if c.lo.is_finite() {
            lp.push(OrthantVar { row: rows.len(), coef: -1.0, cost: 0.0 });
            rows.push(a.clone());
            b.push(c.lo);
        }
        if c.hi.is_finite() {
            lp.push(OrthantVar { row: rows.len(), coef: 1.0, cost: 0.0 });
            rows.push(a);
            b.push(c.hi);
        }
    }
    Embedded {
        conic: ConicProblem {
            c: embed_scaled(&p.objective),
            rows,
            b: DVector::from_vec(b),
            lp,
            trace_bound: p.inferred_trace_bound().map(|t| 2.0 * t),
        },
        inconsistent,
    }
}

/// Minimum total violation problem: every row gets violation variables with unit cost.
fn phase_one(main: &ConicProblem) -> ConicProblem {
    let n = main.dim();
    let mut lp = main.lp.clone();
    let slack_rows: Vec<Option<f64>> = {
        let mut v = vec![None; main.rows.len()];
        for o in &main.lp {
            v[o.row] = Some(o.coef);
        }
        v
    };
    for (row, slack) in slack_rows.iter().enumerate() {
        match slack {
            Some(coef) => lp.push(OrthantVar { row, coef: -coef, cost: 1.0 }),
            None => {
                lp.push(OrthantVar { row, coef: 1.0, cost: 1.0 });
                lp.push(OrthantVar { row, coef: -1.0, cost: 1.0 });
            }
        }
    }
    ConicProblem {
        c: DMatrix::zeros(n, n),
        rows: main.rows.clone(),
        b: main.b.clone(),
        lp,
        trace_bound: None,
    }
}

/// Solves `problem`; never panics on numerical trouble, reporting it in the status instead.
pub fn solve_sdp(problem: &SdpProblem, tol: &SdpTolerances) -> Result<SdpSolution, ProblemError> {
    problem.validate()?;
    let emb = build_embedded(problem, tol);
    let settings = IpmSettings {
        max_iter: tol.max_iter,
        gap_tol: tol.gap,
        feas_tol: tol.feasibility,
        step_fraction: tol.step_fraction,
    };

    let history = |log: &[ipm::IterLog]| -> Vec<IterationRecord> {
        log.iter()
            .map(|l| IterationRecord {
                primal_objective: l.primal_objective,
                dual_objective: l.dual_objective,
                dual_bound: l.dual_bound,
                mu: l.mu,
                primal_residual: l.primal_residual,
                dual_residual: l.dual_residual,
            })
            .collect()
    };

    if emb.inconsistent {
        return Ok(SdpSolution {
            status: SdpStatus::Infeasible,
            w: None,
            objective: f64::NAN,
            dual_objective: f64::NAN,
            iterations: 0,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
            min_violation: None,
            history: Vec::new(),
        });
    }

    let main = ipm::solve(&emb.conic, &settings);
    if main.outcome == IpmOutcome::Converged {
        return Ok(SdpSolution {
            status: SdpStatus::Optimal,
            w: Some(HermitianMatrix::extract(&main.x)),
            objective: main.primal_objective,
            dual_objective: main.dual_objective,
            iterations: main.iterations,
            primal_residual: main.primal_residual,
            dual_residual: main.dual_residual,
            min_violation: None,
            history: history(&main.log),
        });
    }

    let p1 = ipm::solve(&phase_one(&emb.conic), &settings);
    let violation = p1.primal_objective;
    let loose = main.primal_residual <= 1e-7 && main.dual_residual <= 1e-7 && {
        let g = (main.primal_objective - main.dual_objective).abs();
        g <= 1e-7 * (1.0 + main.primal_objective.abs())
    };
    // A dual-feasible phase-one iterate bounds the minimum violation from below.
    let certified = p1.dual_residual <= 1e-7 && p1.dual_objective > tol.infeasibility;
    let status = if (p1.outcome == IpmOutcome::Converged && violation > tol.infeasibility) || certified {
        SdpStatus::Infeasible
    } else if loose {
        SdpStatus::Optimal
    } else {
        SdpStatus::NumericalFailure
    };
    Ok(SdpSolution {
        status,
        w: (status == SdpStatus::Optimal).then(|| HermitianMatrix::extract(&main.x)),
        objective: main.primal_objective,
        dual_objective: main.dual_objective,
        iterations: main.iterations + p1.iterations,
        primal_residual: main.primal_residual,
        dual_residual: main.dual_residual,
        min_violation: Some(violation.max(0.0)),
        history: history(&main.log),
    })
}
