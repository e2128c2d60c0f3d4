//! Dual active-set method (Goldfarb–Idnani) for `min ½yᵀGy + aᵀy  s.t.  cⱼᵀy ≥ bⱼ` with `G`
//! positive definite. Problems here are tiny, so every step re-solves the small dense systems
//! directly instead of updating factorizations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub(crate) enum Outcome {
    Optimal,
    /// Constraint that could not be satisfied and its (normalized) violation.
    Infeasible(usize, f64),
    MaxIter,
}

pub(crate) struct DualResult {
    pub y: DVector<f64>,
    /// Multiplier per constraint row (zero for inactive rows).
    pub u: DVector<f64>,
    pub iterations: usize,
    pub outcome: Outcome,
}

/// `rows` must be unit-norm. Entry ties pick the lowest index.
pub(crate) fn solve(
    g: &Cholesky<f64, Dyn>,
    a: &DVector<f64>,
    rows: &[DVector<f64>],
    b: &[f64],
    tol: f64,
    max_iter: usize,
) -> DualResult {
    let mut y = -g.solve(a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let slack = |y: &DVector<f64>, j: usize| rows[j].dot(y) - b[j];

    let finish = |y: DVector<f64>, active: &[usize], u: &[f64], iterations, outcome| {
        let mut full = DVector::zeros(rows.len());
        for (&j, &uj) in active.iter().zip(u) {
            full[j] = uj;
        }
        DualResult {
            y,
            u: full,
            iterations,
            outcome,
        }
    };

    loop {
        let mut pick: Option<(usize, f64)> = None;
        for j in 0..rows.len() {
            if active.contains(&j) {
                continue;
            }
            let s = slack(&y, j);
            if s < -tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((j, s));
            }
        }
        let Some((p, _)) = pick else {
            return finish(y, &active, &u, iterations, Outcome::Optimal);
        };
        let np = &rows[p];
        let mut up = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return finish(y, &active, &u, iterations - 1, Outcome::MaxIter);
            }
            let w = g.solve(np);
            let k = active.len();
            let (z, r) = if k == 0 {
                (w.clone(), DVector::zeros(0))
            } else {
                let n = DMatrix::from_columns(&active.iter().map(|&j| rows[j].clone()).collect::<Vec<_>>());
                let gn = g.solve(&n);
                let s = n.transpose() * &gn;
                let rhs = n.transpose() * &w;
                let r = match Cholesky::new(s.clone()) {
                    Some(c) => c.solve(&rhs),
                    None => s.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(k)),
                };
                (&w - gn * &r, r)
            };
            let mut t1 = f64::INFINITY;
            let mut drop: Option<usize> = None;
            for idx in 0..k {
                if r[idx] > 0.0 {
                    let ratio = u[idx] / r[idx];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(idx);
                    }
                }
            }
            let zn = z.dot(np);
            let scale = np.dot(&w).max(f64::MIN_POSITIVE);
            if zn <= 1e-13 * scale {
                let Some(kdrop) = drop else {
                    let v = slack(&y, p);
                    return finish(y, &active, &u, iterations, Outcome::Infeasible(p, v));
                };
                for idx in 0..k {
                    u[idx] -= t1 * r[idx];
                }
                up += t1;
                active.remove(kdrop);
                u.remove(kdrop);
                continue;
            }
            let t2 = -slack(&y, p) / zn;
            let t = t1.min(t2);
            y += &z * t;
            for idx in 0..k {
                u[idx] -= t * r[idx];
            }
            up += t;
            if t2 <= t1 {
                active.push(p);
                u.push(up);
                break;
            }
            let kdrop = drop.expect("partial step implies a blocking constraint");
            active.remove(kdrop);
            u.remove(kdrop);
        }
    }
}
