//! Dense convex QP:
//!
//! ```text
//! min ½xᵀHx + fᵀx   s.t.  Aeq·x = beq,  lower ≤ Ain·x ≤ upper,  lb ≤ x ≤ ub
//! ```
//!
//! Equalities are eliminated through an SVD null-space basis; the reduced problem is solved by a
//! dual active-set method. Multipliers follow the convention
//! `Hx + f − Aeqᵀλ − Ainᵀμ − z = 0`, with `μ`, `z` positive on active lower bounds and negative on
//! active upper bounds.

mod dual;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub aeq: DMatrix<f64>,
    pub beq: DVector<f64>,
    pub ain: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// A single constraint side, in terms of the original problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintRef {
    Equality(usize),
    Row { index: usize, upper: bool },
    Bound { index: usize, upper: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub constraint: ConstraintRef,
    /// Magnitude of the violation at the returned iterate.
    pub violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub bound_duals: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt: KktResidual,
    pub objective: f64,
    pub infeasibility: Option<Infeasibility>,
}

impl QpProblem {
    /// Unconstrained problem of dimension `d`; add constraints with the builder methods.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let d = f.len();
        Self {
            h,
            f,
            aeq: DMatrix::zeros(0, d),
            beq: DVector::zeros(0),
            ain: DMatrix::zeros(0, d),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
            lb: DVector::from_element(d, f64::NEG_INFINITY),
            ub: DVector::from_element(d, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, aeq: DMatrix<f64>, beq: DVector<f64>) -> Self {
        self.aeq = aeq;
        self.beq = beq;
        self
    }

    pub fn with_rows(mut self, ain: DMatrix<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.ain = ain;
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let bad = |m: String| Err(Error::InvalidProblem(m));
        if self.h.nrows() != d || self.h.ncols() != d {
            return bad(format!("H is {}×{}, expected {d}×{d}", self.h.nrows(), self.h.ncols()));
        }
        if self.aeq.ncols() != d || self.aeq.nrows() != self.beq.len() {
            return bad("Aeq/beq dimensions disagree".into());
        }
        if self.ain.ncols() != d || self.ain.nrows() != self.lower.len() || self.ain.nrows() != self.upper.len() {
            return bad("Ain/lower/upper dimensions disagree".into());
        }
        if self.lb.len() != d || self.ub.len() != d {
            return bad("lb/ub dimensions disagree".into());
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.h) || !finite(&self.aeq) || !finite(&self.ain) {
            return bad("non-finite matrix entry".into());
        }
        if self.f.iter().chain(self.beq.iter()).any(|v| !v.is_finite()) {
            return bad("non-finite vector entry".into());
        }
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-10 * scale {
            return bad("H is not symmetric".into());
        }
        for (name, lo, hi) in [("row", &self.lower, &self.upper), ("bound", &self.lb, &self.ub)] {
            for i in 0..lo.len() {
                if lo[i].is_nan() || hi[i].is_nan() || lo[i] > hi[i] || lo[i] == f64::INFINITY || hi[i] == f64::NEG_INFINITY {
                    return bad(format!("{name} {i}: invalid interval [{}, {}]", lo[i], hi[i]));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&QpDump::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: QpDump = serde_json::from_str(text).map_err(|e| Error::parse("<qp dump>", &e))?;
        dump.into_problem()
    }
}

/// JSON form of a problem; infinite bounds are written as `null`.
#[derive(Debug, Serialize, Deserialize)]
struct QpDump {
    h: Vec<Vec<f64>>,
    f: Vec<f64>,
    aeq: Vec<Vec<f64>>,
    beq: Vec<f64>,
    ain: Vec<Vec<f64>>,
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
    lb: Vec<Option<f64>>,
    ub: Vec<Option<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn opt(v: &DVector<f64>) -> Vec<Option<f64>> {
    v.iter().map(|x| x.is_finite().then_some(*x)).collect()
}

impl From<&QpProblem> for QpDump {
    fn from(p: &QpProblem) -> Self {
        Self {
            h: rows_of(&p.h),
            f: p.f.iter().copied().collect(),
            aeq: rows_of(&p.aeq),
            beq: p.beq.iter().copied().collect(),
            ain: rows_of(&p.ain),
            lower: opt(&p.lower),
            upper: opt(&p.upper),
            lb: opt(&p.lb),
            ub: opt(&p.ub),
        }
    }
}

impl QpDump {
    fn into_problem(self) -> Result<QpProblem> {
        let d = self.f.len();
        let mat = |rows: Vec<Vec<f64>>| -> Result<DMatrix<f64>> {
            if rows.iter().any(|r| r.len() != d) {
                return Err(Error::InvalidProblem("ragged matrix in dump".into()));
            }
            Ok(DMatrix::from_row_iterator(rows.len(), d, rows.into_iter().flatten()))
        };
        let lo = |v: Vec<Option<f64>>| DVector::from_iterator(v.len(), v.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)));
        let hi = |v: Vec<Option<f64>>| DVector::from_iterator(v.len(), v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)));
        let p = QpProblem {
            h: mat(self.h)?,
            f: DVector::from_vec(self.f),
            aeq: mat(self.aeq)?,
            beq: DVector::from_vec(self.beq),
            ain: mat(self.ain)?,
            lower: lo(self.lower),
            upper: hi(self.upper),
            lb: lo(self.lb),
            ub: hi(self.ub),
        };
        p.validate()?;
        Ok(p)
    }
}

/// Null-space parameterization `x = x0 + Z·y` of `Aeq·x = beq`.
struct Elimination {
    x0: DVector<f64>,
    z: DMatrix<f64>,
    /// `(U, Σ⁺, V)` pieces for least-squares solves with `Aeqᵀ`.
    svd: Option<nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    rank: usize,
}

fn eliminate(aeq: &DMatrix<f64>, beq: &DVector<f64>) -> Elimination {
    let (p, d) = aeq.shape();
    if p == 0 {
        return Elimination {
            x0: DVector::zeros(d),
            z: DMatrix::identity(d, d),
            svd: None,
            rank: 0,
        };
    }
    // Pad to at least d rows so that V is complete.
    let rows = p.max(d);
    let mut padded = DMatrix::zeros(rows, d);
    padded.rows_mut(0, p).copy_from(aeq);
    let mut bpad = DVector::zeros(rows);
    bpad.rows_mut(0, p).copy_from(beq);
    let svd = padded.svd(true, true);
    let smax = svd.singular_values.max();
    let cut = smax * 1e-12 * rows as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let v_t = svd.v_t.as_ref().expect("computed");
    let u = svd.u.as_ref().expect("computed");
    let mut x0 = DVector::zeros(d);
    // Singular values come sorted in decreasing order.
    for k in 0..d.min(rows) {
        let s = svd.singular_values[k];
        if s > cut {
            let coef = u.column(k).dot(&bpad) / s;
            x0 += v_t.row(k).transpose() * coef;
        }
    }
    let mut cols = Vec::new();
    for k in 0..d {
        if k >= rank {
            cols.push(v_t.row(k).transpose());
        }
    }
    let z = if cols.is_empty() {
        DMatrix::zeros(d, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    Elimination {
        x0,
        z,
        svd: Some(svd),
        rank,
    }
}

/// Sign-aware multiplier split: positive values pair with the lower side.
fn side_gap(mu: f64, value: f64, lo: f64, hi: f64) -> f64 {
    if mu > 0.0 {
        if lo.is_finite() {
            mu * (value - lo).abs()
        } else {
            mu
        }
    } else if mu < 0.0 {
        if hi.is_finite() {
            -mu * (hi - value).abs()
        } else {
            -mu
        }
    } else {
        0.0
    }
}

/// KKT residuals of a candidate solution, recomputed from the problem data alone.
pub fn kkt_residual(p: &QpProblem, s: &QpSolution) -> KktResidual {
    let x = &s.x;
    let grad = &p.h * x + &p.f - p.aeq.transpose() * &s.eq_duals - p.ain.transpose() * &s.ineq_duals - &s.bound_duals;
    let stationarity = grad.amax();
    let mut primal: f64 = 0.0;
    if p.aeq.nrows() > 0 {
        primal = primal.max((&p.aeq * x - &p.beq).amax());
    }
    let ax = &p.ain * x;
    let mut comp: f64 = 0.0;
    for i in 0..ax.len() {
        primal = primal.max(p.lower[i] - ax[i]).max(ax[i] - p.upper[i]);
        comp = comp.max(side_gap(s.ineq_duals[i], ax[i], p.lower[i], p.upper[i]));
    }
    for i in 0..x.len() {
        primal = primal.max(p.lb[i] - x[i]).max(x[i] - p.ub[i]);
        comp = comp.max(side_gap(s.bound_duals[i], x[i], p.lb[i], p.ub[i]));
    }
    KktResidual {
        stationarity,
        primal: primal.max(0.0),
        complementarity: comp,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSolver {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

impl QpSolver {
    pub fn solve(&self, p: &QpProblem) -> Result<QpSolution> {
        solve(p, self.tol, self.max_iter)
    }
}

pub fn solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.validate()?;
    let d = p.dim();
    let el = eliminate(&p.aeq, &p.beq);

    // Inconsistent equalities: report the worst row.
    if p.aeq.nrows() > 0 {
        let res = &p.aeq * &el.x0 - &p.beq;
        let scale = 1.0 + p.beq.amax();
        let (imax, vmax) = res.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
        if vmax > tol * scale.max(1.0) * 10.0 {
            return Ok(finish(p, &el, el.x0.clone(), &[], &[], 0, QpStatus::Infeasible, Some(Infeasibility {
                constraint: ConstraintRef::Equality(imax),
                violation: vmax,
            })));
        }
    }

    // One-sided reduced rows: cᵀy ≥ b, with their origin.
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    let mut norms: Vec<f64> = Vec::new();
    let mut origin: Vec<ConstraintRef> = Vec::new();
    let mut push = |full_row: DVector<f64>, bound: f64, sign: f64, r: ConstraintRef| -> Option<Infeasibility> {
        let c = el.z.transpose() * &full_row * sign;
        let b = sign * (bound - full_row.dot(&el.x0));
        let nrm = c.norm();
        let row_scale = full_row.norm().max(1e-300);
        if nrm <= 1e-12 * row_scale {
            // Constant in the reduced space: satisfied or infeasible at x0.
            if b > tol * (1.0 + bound.abs()) {
                return Some(Infeasibility {
                    constraint: r,
                    violation: b / row_scale,
                });
            }
            return None;
        }
        rows.push(c / nrm);
        rhs.push(b / nrm);
        norms.push(nrm);
        origin.push(r);
        None
    };
    let mut early: Option<Infeasibility> = None;
    for i in 0..p.ain.nrows() {
        let row = p.ain.row(i).transpose();
        if p.lower[i].is_finite() {
            early = early.or(push(row.clone(), p.lower[i], 1.0, ConstraintRef::Row { index: i, upper: false }));
        }
        if p.upper[i].is_finite() {
            early = early.or(push(row, p.upper[i], -1.0, ConstraintRef::Row { index: i, upper: true }));
        }
    }
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        if p.lb[i].is_finite() {
            early = early.or(push(e.clone(), p.lb[i], 1.0, ConstraintRef::Bound { index: i, upper: false }));
        }
        if p.ub[i].is_finite() {
            early = early.or(push(e, p.ub[i], -1.0, ConstraintRef::Bound { index: i, upper: true }));
        }
    }
    if let Some(inf) = early {
        return Ok(finish(p, &el, el.x0.clone(), &[], &[], 0, QpStatus::Infeasible, Some(inf)));
    }

    let m = el.z.ncols();
    if m == 0 {
        // Fully determined by the equalities.
        let viol = rows.iter().zip(&rhs).enumerate().find(|(_, (_, &b))| b > tol);
        let (status, inf) = match viol {
            Some((j, (_, &b))) => (QpStatus::Infeasible, Some(Infeasibility { constraint: origin[j], violation: b })),
            None => (QpStatus::Optimal, None),
        };
        return Ok(finish(p, &el, el.x0.clone(), &[], &[], 0, status, inf));
    }

    let mut g = el.z.transpose() * &p.h * &el.z;
    g = (&g + g.transpose()) * 0.5;
    let a = el.z.transpose() * (&p.h * &el.x0 + &p.f);
    let chol = match Cholesky::new(g.clone()) {
        Some(c) => c,
        None => {
            let tr = g.trace();
            let sigma = if tr > 0.0 { 1e-9 * tr / m as f64 } else { 1e-9 };
            let mut gr = g.clone();
            for i in 0..m {
                gr[(i, i)] += sigma;
            }
            Cholesky::new(gr).ok_or(Error::NotPsd)?
        }
    };

    let res = dual::solve(&chol, &a, &rows, &rhs, tol, max_iter);
    let x = &el.x0 + &el.z * &res.y;
    let (status, inf) = match res.outcome {
        dual::Outcome::Optimal => (QpStatus::Optimal, None),
        dual::Outcome::MaxIter => (QpStatus::MaxIter, None),
        dual::Outcome::Infeasible(j, v) => (
            QpStatus::Infeasible,
            Some(Infeasibility {
                constraint: origin[j],
                violation: -v,
            }),
        ),
    };
    let mults: Vec<f64> = res.u.iter().zip(&norms).map(|(u, n)| u / n).collect();
    Ok(finish(p, &el, x, &mults, &origin, res.iterations, status, inf))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &QpProblem,
    el: &Elimination,
    x: DVector<f64>,
    mults: &[f64],
    origin: &[ConstraintRef],
    iterations: usize,
    status: QpStatus,
    infeasibility: Option<Infeasibility>,
) -> QpSolution {
    let d = p.dim();
    let mut ineq = DVector::zeros(p.ain.nrows());
    let mut bound = DVector::zeros(d);
    for (&mu, r) in mults.iter().zip(origin) {
        match *r {
            ConstraintRef::Row { index, upper } => ineq[index] += if upper { -mu } else { mu },
            ConstraintRef::Bound { index, upper } => bound[index] += if upper { -mu } else { mu },
            ConstraintRef::Equality(_) => {}
        }
    }
    let mut eq = DVector::zeros(p.aeq.nrows());
    if let Some(svd) = &el.svd {
        // Aeqᵀλ = Hx + f − Ainᵀμ − z, solved in the least-squares sense via Aeq = UΣVᵀ.
        let r = &p.h * &x + &p.f - p.ain.transpose() * &ineq - &bound;
        let u = svd.u.as_ref().expect("computed");
        let v_t = svd.v_t.as_ref().expect("computed");
        let mut lam = DVector::zeros(u.nrows());
        for k in 0..el.rank {
            let s = svd.singular_values[k];
            lam += u.column(k) * (v_t.row(k).transpose().dot(&r) / s);
        }
        eq = lam.rows(0, p.aeq.nrows()).clone_owned();
    }
    let mut sol = QpSolution {
        objective: p.objective(&x),
        x,
        eq_duals: eq,
        ineq_duals: ineq,
        bound_duals: bound,
        status,
        iterations,
        kkt: KktResidual::default(),
        infeasibility,
    };
    sol.kkt = kkt_residual(p, &sol);
    sol
}
