//! Primal-dual interior-point method for real conic programs over one PSD block
//! and a nonnegative orthant:
//!
//! ```text
//! min <C, X> + c_lp' s   s.t.  <A_i, X> + (G s)_i = b_i,   X >= 0 (psd),  s >= 0
//! ```
//!
//! Every orthant variable appears in exactly one row, which is all the
//! interval slacks and phase-one violation variables need. Search directions
//! are HKM with an adaptive centering parameter and a corrector term.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// One nonnegative variable attached to a single constraint row.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OrthantVar {
    pub row: usize,
    pub coef: f64,
    pub cost: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct ConicProblem {
    pub c: DMatrix<f64>,
    pub rows: Vec<DMatrix<f64>>,
    pub b: DVector<f64>,
    pub lp: Vec<OrthantVar>,
    /// Upper bound on `Tr(X)` implied by the constraints, when known.
    pub trace_bound: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmSettings {
    pub max_iter: usize,
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub step_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmOutcome {
    Converged,
    /// Iteration budget exhausted or steps stalled.
    Stalled,
    /// Dual iterates diverging: a strong hint of primal infeasibility.
    DualDiverging,
    Breakdown,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IterLog {
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub dual_bound: Option<f64>,
    pub mu: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub outcome: IpmOutcome,
    pub x: DMatrix<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
    pub log: Vec<IterLog>,
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

/// Largest `alpha <= 1/fraction-free` keeping `x + alpha dx` psd, given `x` psd definite.
fn max_psd_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> Option<f64> {
    let n = x.nrows();
    if n == 0 {
        return Some(f64::INFINITY);
    }
    let l = x.clone().cholesky()?.l();
    let tmp = l.solve_lower_triangular(dx)?;
    let s = l.solve_lower_triangular(&tmp.transpose())?;
    let lmin = min_eigenvalue(&s);
    Some(if lmin < 0.0 { -1.0 / lmin } else { f64::INFINITY })
}

fn max_orthant_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(f64::INFINITY, f64::min)
}

impl ConicProblem {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>, s: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::from_iterator(self.rows.len(), self.rows.iter().map(|a| inner(a, x)));
        for (k, v) in self.lp.iter().enumerate() {
            out[v.row] += v.coef * s[k];
        }
        out
    }

    fn adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (a, yi) in self.rows.iter().zip(y.iter()) {
            if *yi != 0.0 {
                out += a * *yi;
            }
        }
        out
    }

    fn adjoint_lp(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.lp.len(), self.lp.iter().map(|v| v.coef * y[v.row]))
    }

    fn c_lp(&self) -> DVector<f64> {
        DVector::from_iterator(self.lp.len(), self.lp.iter().map(|v| v.cost))
    }

    /// Lagrangian lower bound at `y` after clipping each row multiplier into the
    /// range where the orthant variables keep a nonnegative reduced cost.
    fn dual_bound(&self, y: &DVector<f64>) -> Option<f64> {
        let trace = self.trace_bound?;
        let mut lo = vec![f64::NEG_INFINITY; self.rows.len()];
        let mut hi = vec![f64::INFINITY; self.rows.len()];
        for v in &self.lp {
            let lim = v.cost / v.coef;
            if v.coef > 0.0 {
                hi[v.row] = hi[v.row].min(lim);
            } else {
                lo[v.row] = lo[v.row].max(lim);
            }
        }
        let mut yc = y.clone();
        for r in 0..yc.len() {
            if lo[r] > hi[r] {
                return None;
            }
            yc[r] = yc[r].clamp(lo[r], hi[r]);
        }
        let z = &self.c - self.adjoint(&yc);
        let lmin = min_eigenvalue(&z);
        Some(self.b.dot(&yc) + trace * lmin.min(0.0))
    }
}

pub(crate) fn solve(p: &ConicProblem, cfg: &IpmSettings) -> IpmResult {
    let n = p.dim();
    let m = p.rows.len();
    let nlp = p.lp.len();
    let c_lp = p.c_lp();

    let bnorm = p.b.norm();
    let cnorm = p.c.norm() + c_lp.norm();
    let amax = p.rows.iter().map(|a| a.norm()).fold(0.0, f64::max);
    let xi = {
        let mut v = (n.max(1) as f64).sqrt().max(1.0);
        for (a, bi) in p.rows.iter().zip(p.b.iter()) {
            v = v.max((n.max(1) as f64) * (1.0 + bi.abs()) / (1.0 + a.norm()));
        }
        v
    };
    let eta = (n.max(1) as f64).sqrt().max(cnorm).max(amax).max(1.0);

    let mut x = DMatrix::<f64>::identity(n, n) * xi;
    let mut z = DMatrix::<f64>::identity(n, n) * eta;
    let mut s = DVector::<f64>::from_element(nlp, xi);
    let mut zl = DVector::<f64>::from_element(nlp, eta);
    let mut y = DVector::<f64>::zeros(m);
    let nu = (n + nlp).max(1) as f64;

    // Gram matrix of the full primal operator; used to pull search directions
    // back onto the affine constraints when the Schur solve loses accuracy.
    let gram = {
        let mut g = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = inner(&p.rows[i], &p.rows[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        for v in &p.lp {
            g[(v.row, v.row)] += v.coef * v.coef;
        }
        g.cholesky()
    };

    let mut log = Vec::new();
    let mut outcome = IpmOutcome::Stalled;
    let mut stall = 0usize;
    let mut iterations = 0usize;

    let finish = |outcome, x: DMatrix<f64>, s: DVector<f64>, y: DVector<f64>, log: Vec<IterLog>, iterations| {
        let rp = &p.b - p.apply(&x, &s);
        let pobj = inner(&p.c, &x) + c_lp.dot(&s);
        let dobj = p.b.dot(&y);
        let last = log.last().copied();
        IpmResult {
            outcome,
            primal_objective: pobj,
            dual_objective: dobj,
            primal_residual: rp.norm() / (1.0 + bnorm),
            dual_residual: last.map(|l: IterLog| l.dual_residual).unwrap_or(f64::INFINITY),
            x,
            iterations,
            log,
        }
    };

    for it in 0..=cfg.max_iter {
        iterations = it;
        let rp = &p.b - p.apply(&x, &s);
        let rd_mat = &p.c - p.adjoint(&y) - &z;
        let rd_lp = &c_lp - p.adjoint_lp(&y) - &zl;
        let pobj = inner(&p.c, &x) + c_lp.dot(&s);
        let dobj = p.b.dot(&y);
        let mu = (inner(&x, &z) + s.dot(&zl)) / nu;
        let relp = rp.norm() / (1.0 + bnorm);
        let reld = (rd_mat.norm() + rd_lp.norm()) / (1.0 + cnorm);
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        log.push(IterLog {
            primal_objective: pobj,
            dual_objective: dobj,
            dual_bound: p.dual_bound(&y),
            mu,
            primal_residual: relp,
            dual_residual: reld,
        });

        if relp <= cfg.feas_tol && reld <= cfg.feas_tol && gap <= cfg.gap_tol && mu * nu <= cfg.gap_tol * (1.0 + pobj.abs()) {
            outcome = IpmOutcome::Converged;
            break;
        }
        if y.norm() > 1e10 * (1.0 + cnorm) {
            outcome = IpmOutcome::DualDiverging;
            break;
        }
        if it == cfg.max_iter {
            break;
        }

        let zinv = match z.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => {
                outcome = IpmOutcome::Breakdown;
                break;
            }
        };
        let ratio = DVector::from_iterator(nlp, s.iter().zip(zl.iter()).map(|(a, b)| a / b));

        // Schur complement of the HKM system.
        let t: Vec<DMatrix<f64>> = p.rows.iter().map(|a| &x * a * &zinv).collect();
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = inner(&p.rows[i], &t[j]);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        for (k, v) in p.lp.iter().enumerate() {
            schur[(v.row, v.row)] += v.coef * v.coef * ratio[k];
        }
        let scale = (0..m).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let chol = match schur.clone().cholesky() {
            Some(ch) => Some(ch),
            None => {
                let mut reg = schur.clone();
                for i in 0..m {
                    reg[(i, i)] += 1e-12 * scale;
                }
                reg.cholesky()
            }
        };
        let Some(chol) = chol else {
            outcome = IpmOutcome::Breakdown;
            break;
        };

        let x_rd_zinv = sym(&(&x * &rd_mat * &zinv));
        let direction = |target: f64,
                         corr: Option<(&DMatrix<f64>, &DVector<f64>)>|
         -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
            let mut h = &zinv * target - &x;
            let mut lp_h = DVector::from_iterator(nlp, zl.iter().zip(s.iter()).map(|(zk, sk)| target / zk - sk));
            if let Some((kmat, kvec)) = corr {
                h -= sym(&(kmat * &zinv));
                for k in 0..nlp {
                    lp_h[k] -= kvec[k] / zl[k];
                }
            }
            for k in 0..nlp {
                lp_h[k] -= ratio[k] * rd_lp[k];
            }
            let base = &h - &x_rd_zinv;
            let mut rhs = &rp - DVector::from_iterator(m, p.rows.iter().map(|a| inner(a, &base)));
            for (k, v) in p.lp.iter().enumerate() {
                rhs[v.row] -= v.coef * lp_h[k];
            }
            let dy = if m > 0 { chol.solve(&rhs) } else { DVector::zeros(0) };
            let dz = &rd_mat - p.adjoint(&dy);
            let mut dx = &h - sym(&(&x * &dz * &zinv));
            let dzl = &rd_lp - p.adjoint_lp(&dy);
            let mut dsl = lp_h.clone();
            for k in 0..nlp {
                // lp_h already holds the -ratio * rd_lp part.
                dsl[k] += ratio[k] * (rd_lp[k] - dzl[k]);
            }
            if let Some(g) = &gram {
                let miss = &rp - p.apply(&dx, &dsl);
                let fix = g.solve(&miss);
                dx += p.adjoint(&fix);
                dsl += p.adjoint_lp(&fix);
            }
            (dx, dsl, dy, dz, dzl)
        };

        let steps = |dx: &DMatrix<f64>, ds: &DVector<f64>, dz: &DMatrix<f64>, dzl: &DVector<f64>| -> Option<(f64, f64)> {
            let ap = max_psd_step(&x, dx)?.min(max_orthant_step(&s, ds));
            let ad = max_psd_step(&z, dz)?.min(max_orthant_step(&zl, dzl));
            Some((ap, ad))
        };

        // Predictor.
        let (dxa, dsa, _dya, dza, dzla) = direction(0.0, None);
        let Some((apa, ada)) = steps(&dxa, &dsa, &dza, &dzla) else {
            outcome = IpmOutcome::Breakdown;
            break;
        };
        let (apa, ada) = (apa.min(1.0), ada.min(1.0));
        let mu_aff = (inner(&(&x + &dxa * apa), &(&z + &dza * ada))
            + (&s + &dsa * apa).dot(&(&zl + &dzla * ada)))
            / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let kmat = &dxa * &dza;
        let kvec = dsa.component_mul(&dzla);
        let (dx, ds, dy, dz, dzl) = direction(sigma * mu, Some((&kmat, &kvec)));
        let Some((ap, ad)) = steps(&dx, &ds, &dz, &dzl) else {
            outcome = IpmOutcome::Breakdown;
            break;
        };
        let ap = (cfg.step_fraction * ap).min(1.0);
        let ad = (cfg.step_fraction * ad).min(1.0);
        if ap < 1e-12 && ad < 1e-12 {
            stall += 1;
            if stall > 3 {
                break;
            }
        } else {
            stall = 0;
        }

        x += &dx * ap;
        s += &ds * ap;
        y += &dy * ad;
        z += &dz * ad;
        zl += &dzl * ad;
        x = sym(&x);
        z = sym(&z);
    }

    finish(outcome, x, s, y, log, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> IpmSettings {
        IpmSettings {
            max_iter: 100,
            gap_tol: 1e-10,
            feas_tol: 1e-10,
            step_fraction: 0.95,
        }
    }

    #[test]
    fn tiny_lp_through_orthant_block() {
        // min s1 + 2 s2  s.t. s1 + s2 = 1 encoded on a 1x1 psd block pinned to 0.
        let row = DMatrix::from_element(1, 1, 0.0);
        let p = ConicProblem {
            c: DMatrix::from_element(1, 1, 1.0),
            rows: vec![row, DMatrix::from_element(1, 1, 1.0)],
            b: DVector::from_vec(vec![1.0, 0.5]),
            lp: vec![
                OrthantVar { row: 0, coef: 1.0, cost: 1.0 },
                OrthantVar { row: 0, coef: 1.0, cost: 2.0 },
            ],
            trace_bound: None,
        };
        let r = solve(&p, &settings());
        assert_eq!(r.outcome, IpmOutcome::Converged);
        assert!((r.primal_objective - 1.5).abs() < 1e-8, "{}", r.primal_objective);
    }

    #[test]
    fn max_eigen_sdp() {
        // min <-B, X> s.t. tr X = 1 gives -lambda_max(B).
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = ConicProblem {
            c: -b,
            rows: vec![DMatrix::identity(2, 2)],
            b: DVector::from_vec(vec![1.0]),
            lp: vec![],
            trace_bound: Some(1.0),
        };
        let r = solve(&p, &settings());
        assert_eq!(r.outcome, IpmOutcome::Converged);
        assert!((r.primal_objective + 3.0).abs() < 1e-8);
        for l in &r.log {
            assert!(l.dual_bound.unwrap() <= r.primal_objective + 1e-9);
        }
    }
}
