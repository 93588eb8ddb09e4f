//! Dense strictly convex quadratic programming.
//!
//! ```text
//!     minimize    ½ xᵀ H x + gᵀ x
//!     subject to  A_ineq x ≥ b_ineq
//!                 A_eq   x = b_eq
//! ```
//!
//! Solved with the Goldfarb–Idnani dual active-set method. The method starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time, keeping the factorization `Jᵀ N_A = [R; 0]` (with `J = L⁻ᵀ`, `H = LLᵀ`)
//! current through Givens rotations.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
        }
    }

    /// `min ‖x − center‖²`, the cost of a minimally invasive filter.
    pub fn projection(center: &DVector<f64>) -> Self {
        let n = center.len();
        Self::new(DMatrix::identity(n, n) * 2.0, center * -2.0)
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_ineq = a;
        self.b_ineq = b;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn n_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn n_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    fn check(&self) -> Result<()> {
        let n = self.n();
        check_dim("QP Hessian rows", n, self.h.nrows())?;
        check_dim("QP Hessian columns", n, self.h.ncols())?;
        check_dim("inequality columns", n, self.a_ineq.ncols())?;
        check_dim("inequality rhs", self.a_ineq.nrows(), self.b_ineq.len())?;
        check_dim("equality columns", n, self.a_eq.ncols())?;
        check_dim("equality rhs", self.a_eq.nrows(), self.b_eq.len())?;
        let scale = 1.0 + self.h.amax();
        if (&self.h - self.h.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidConfig("QP Hessian is not symmetric".into()));
        }
        let finite = self.h.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.a_ineq.iter().all(|v| v.is_finite())
            && self.b_ineq.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidConfig("QP data is not finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Largest of the scaled primal, stationarity and complementarity residuals.
    pub kkt_residual: f64,
    pub primal_violation: f64,
    pub stationarity: f64,
    pub complementarity: f64,
    /// Indices of active inequality rows in the caller's numbering.
    pub active_set: Vec<usize>,
    /// One multiplier per inequality row (zero when inactive).
    pub multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Reusable solver; holds factorization buffers between solves.
#[derive(Debug, Default)]
pub struct QpSolver {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
}

/// Reduced constraint row after de-duplication.
#[derive(Debug, Clone)]
struct Row {
    normal: DVector<f64>,
    rhs: f64,
    /// Index in the caller's inequality (or equality) list.
    origin: usize,
    equality: bool,
}

enum Prepared {
    Rows { eq: Vec<Row>, ineq: Vec<Row> },
    Infeasible(Vec<usize>),
}

fn row_key(row: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 must hash alike
    row.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Merge bitwise-identical rows; drop zero rows that are trivially satisfied.
fn prepare_rows(problem: &QpProblem) -> Prepared {
    let n = problem.n();
    let mut eq: Vec<Row> = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for i in 0..problem.n_eq() {
        let normal: Vec<f64> = problem.a_eq.row(i).iter().copied().collect();
        let rhs = problem.b_eq[i];
        if normal.iter().all(|v| *v == 0.0) {
            if rhs.abs() > 1e-12 {
                return Prepared::Infeasible(vec![]);
            }
            continue;
        }
        match seen.get(&row_key(&normal)) {
            Some(&k) if eq[k].rhs == rhs => {}
            Some(_) => return Prepared::Infeasible(vec![]),
            None => {
                seen.insert(row_key(&normal), eq.len());
                eq.push(Row {
                    normal: DVector::from_vec(normal),
                    rhs,
                    origin: i,
                    equality: true,
                });
            }
        }
    }
    let mut ineq: Vec<Row> = Vec::new();
    seen.clear();
    for i in 0..problem.n_ineq() {
        let normal: Vec<f64> = problem.a_ineq.row(i).iter().copied().collect();
        let rhs = problem.b_ineq[i];
        if normal.iter().all(|v| *v == 0.0) {
            if rhs > 1e-12 {
                return Prepared::Infeasible(vec![i]);
            }
            continue;
        }
        let key = row_key(&normal);
        match seen.get(&key) {
            // parallel duplicate: the larger rhs dominates; ties keep the first
            Some(&k) => {
                if rhs > ineq[k].rhs {
                    ineq[k].rhs = rhs;
                    ineq[k].origin = i;
                }
            }
            None => {
                seen.insert(key, ineq.len());
                ineq.push(Row {
                    normal: DVector::from_vec(normal),
                    rhs,
                    origin: i,
                    equality: false,
                });
            }
        }
    }
    debug_assert!(eq.iter().chain(&ineq).all(|r| r.normal.len() == n));
    Prepared::Rows { eq, ineq }
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn iteration_cap(problem: &QpProblem) -> usize {
        10 * (problem.n() + problem.n_ineq() + problem.n_eq()).max(1)
    }

    pub fn solve(
        &mut self,
        problem: &QpProblem,
        warm_start: Option<&DVector<f64>>,
    ) -> Result<QpSolution> {
        problem.check()?;
        let n = problem.n();
        if let Some(w) = warm_start {
            check_dim("warm start", n, w.len())?;
        }

        let (eq, ineq) = match prepare_rows(problem) {
            Prepared::Rows { eq, ineq } => (eq, ineq),
            Prepared::Infeasible(rows) => {
                let sol = self.finish(problem, DVector::zeros(n), QpStatus::Infeasible, &[], &[], 0);
                return Ok(QpSolution {
                    active_set: rows,
                    ..sol
                });
            }
        };

        // Equalities make a merely semidefinite H acceptable as long as it is
        // definite on their null space: add ½ρ‖A_eq x − b_eq‖², which vanishes
        // on the feasible set.
        let mut hess = problem.h.clone();
        let mut lin = problem.g.clone();
        let mut chol = hess.clone().cholesky();
        if chol.is_none() && !eq.is_empty() {
            let a_scale = problem.a_eq.amax().max(1e-12);
            let rho = (1.0 + problem.h.amax()) / (a_scale * a_scale);
            hess += problem.a_eq.transpose() * &problem.a_eq * rho;
            lin -= problem.a_eq.transpose() * &problem.b_eq * rho;
            chol = hess.clone().cholesky();
        }
        let chol = chol.ok_or_else(|| {
            Error::InvalidConfig("QP is not strictly convex on the equality null space".into())
        })?;

        let mut warm_iters = 0;
        if let Some(w) = warm_start {
            warm_iters = 1;
            if let Some(sol) = self.try_warm(problem, &chol, &lin, &eq, &ineq, w) {
                return Ok(sol);
            }
        }

        let rows: Vec<&Row> = eq.iter().chain(ineq.iter()).collect();
        let n_eq = eq.len();
        let cap = Self::iteration_cap(problem);

        // J = L⁻ᵀ
        let l_inv = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .expect("Cholesky factor is nonsingular");
        self.j = l_inv.transpose();
        self.r = DMatrix::zeros(n, n);
        let mut x = -chol.solve(&lin);

        // active constraints: (row index, sign applied to the row, multiplier)
        let mut active: Vec<usize> = Vec::new();
        let mut signs: Vec<f64> = Vec::new();
        let mut u: Vec<f64> = Vec::new();
        let mut iterations = warm_iters;
        let mut next_eq = 0;
        let mut status = QpStatus::Optimal;

        'outer: loop {
            // choose the constraint to add
            let (p, sign) = if next_eq < n_eq {
                let row = rows[next_eq];
                let s = row.normal.dot(&x) - row.rhs;
                next_eq += 1;
                (next_eq - 1, if s > 0.0 { -1.0 } else { 1.0 })
            } else {
                let mut worst: Option<(usize, f64)> = None;
                for (idx, row) in rows.iter().enumerate().skip(n_eq) {
                    if active.contains(&idx) {
                        continue;
                    }
                    let norm = row.normal.norm();
                    let s = row.normal.dot(&x) - row.rhs;
                    let tol = 1e-12 * (1.0 + row.rhs.abs() + norm * x.amax());
                    if s < -tol {
                        let score = s / norm;
                        if worst.is_none_or(|(_, w)| score < w) {
                            worst = Some((idx, score));
                        }
                    }
                }
                match worst {
                    Some((idx, _)) => (idx, 1.0),
                    None => break 'outer,
                }
            };
            let normal = &rows[p].normal * sign;
            let rhs = rows[p].rhs * sign;
            let mut u_new = 0.0;

            loop {
                iterations += 1;
                if iterations > cap {
                    status = QpStatus::MaxIter;
                    break 'outer;
                }
                let q = active.len();
                let d = self.j.transpose() * &normal;
                let z = self.j.columns(q, n - q) * d.rows(q, n - q);
                let r = if q > 0 {
                    self.r
                        .view((0, 0), (q, q))
                        .solve_upper_triangular(&d.rows(0, q).into_owned())
                        .expect("active-set factor is nonsingular")
                } else {
                    DVector::zeros(0)
                };

                // dual step length: first active inequality whose multiplier hits zero
                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for k in 0..q {
                    if rows[active[k]].equality || r[k] <= 0.0 {
                        continue;
                    }
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
                // primal step length: until the new constraint is satisfied
                let zn = z.dot(&normal);
                let z_scale = 1e-12 * (1.0 + normal.norm()) * (1.0 + normal.norm());
                let t2 = if zn.abs() > z_scale {
                    -(normal.dot(&x) - rhs) / zn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if t.is_infinite() {
                    status = QpStatus::Infeasible;
                    active.push(p);
                    break 'outer;
                }
                for k in 0..q {
                    u[k] -= t * r[k];
                }
                u_new += t;
                if t2.is_finite() {
                    x += &z * t;
                }
                if t2.is_finite() && t2 <= t1 {
                    self.add_constraint(d, q);
                    active.push(p);
                    signs.push(sign);
                    u.push(u_new);
                    continue 'outer;
                }
                let k = drop_at.expect("partial step has a blocking constraint");
                self.drop_constraint(k, q);
                active.remove(k);
                signs.remove(k);
                u.remove(k);
            }
        }

        if status == QpStatus::Infeasible {
            let idx: Vec<usize> = active.iter().filter(|&&i| !rows[i].equality).map(|&i| rows[i].origin).collect();
            let sol = self.finish(problem, x, status, &[], &[], iterations);
            return Ok(QpSolution {
                active_set: idx,
                ..sol
            });
        }
        let active_rows: Vec<&Row> = active.iter().map(|&i| rows[i]).collect();
        let mults: Vec<f64> = u.iter().zip(&signs).map(|(m, s)| m * s).collect();
        Ok(self.finish(problem, x, status, &active_rows, &mults, iterations))
    }

    /// Solve the equality-constrained problem on the rows active at `w`.
    fn try_warm(
        &self,
        problem: &QpProblem,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        lin: &DVector<f64>,
        eq: &[Row],
        ineq: &[Row],
        w: &DVector<f64>,
    ) -> Option<QpSolution> {
        let guess: Vec<&Row> = eq
            .iter()
            .chain(ineq.iter().filter(|r| {
                (r.normal.dot(w) - r.rhs).abs() <= 1e-9 * (1.0 + r.rhs.abs())
            }))
            .collect();
        let n = problem.n();
        let k = guess.len();
        if k > n {
            return None;
        }
        let x_free = -chol.solve(lin);
        let (x, mult) = if k == 0 {
            (x_free, DVector::zeros(0))
        } else {
            let mut a = DMatrix::zeros(k, n);
            let mut b = DVector::zeros(k);
            for (i, row) in guess.iter().enumerate() {
                a.set_row(i, &row.normal.transpose());
                b[i] = row.rhs;
            }
            let h_inv_at = chol.solve(&a.transpose());
            let schur = &a * &h_inv_at;
            let lambda = schur.cholesky()?.solve(&(&b - &a * &x_free));
            (&x_free + h_inv_at * &lambda, lambda)
        };
        for (row, m) in guess.iter().zip(mult.iter()) {
            if !row.equality && *m < -1e-10 {
                return None;
            }
        }
        for row in ineq {
            if row.normal.dot(&x) - row.rhs < -1e-9 * (1.0 + row.rhs.abs()) {
                return None;
            }
        }
        let mults: Vec<f64> = mult.iter().copied().collect();
        let sol = self.finish(problem, x, QpStatus::Optimal, &guess, &mults, 1);
        (sol.kkt_residual < 1e-8).then_some(sol)
    }

    fn add_constraint(&mut self, mut d: DVector<f64>, q: usize) {
        let n = d.len();
        for j in (q + 1..n).rev() {
            let (a, b) = (d[j - 1], d[j]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[j - 1] = h;
            d[j] = 0.0;
            rotate_columns(&mut self.j, j - 1, j, c, s);
        }
        for i in 0..=q {
            self.r[(i, q)] = d[i];
        }
    }

    fn drop_constraint(&mut self, k: usize, q: usize) {
        let n = self.r.nrows();
        for col in k..q - 1 {
            for i in 0..n {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..n {
            self.r[(i, q - 1)] = 0.0;
        }
        for j in k..q - 1 {
            let (a, b) = (self.r[(j, j)], self.r[(j + 1, j)]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in j..q - 1 {
                let (x, y) = (self.r[(j, col)], self.r[(j + 1, col)]);
                self.r[(j, col)] = c * x + s * y;
                self.r[(j + 1, col)] = -s * x + c * y;
            }
            self.r[(j + 1, j)] = 0.0;
            rotate_columns(&mut self.j, j, j + 1, c, s);
        }
    }

    fn finish(
        &self,
        problem: &QpProblem,
        x: DVector<f64>,
        status: QpStatus,
        active_rows: &[&Row],
        multipliers: &[f64],
        iterations: usize,
    ) -> QpSolution {
        let mut mult_ineq = DVector::zeros(problem.n_ineq());
        let mut mult_eq = DVector::zeros(problem.n_eq());
        let mut active_set = Vec::new();
        for (row, &m) in active_rows.iter().zip(multipliers) {
            if row.equality {
                mult_eq[row.origin] = m;
            } else {
                mult_ineq[row.origin] = m;
                active_set.push(row.origin);
            }
        }
        active_set.sort_unstable();

        let slack_ineq = &problem.a_ineq * &x - &problem.b_ineq;
        let resid_eq = &problem.a_eq * &x - &problem.b_eq;
        let primal = slack_ineq
            .iter()
            .map(|s| (-s).max(0.0))
            .chain(resid_eq.iter().map(|r| r.abs()))
            .fold(0.0, f64::max);
        let grad = &problem.h * &x + &problem.g
            - problem.a_ineq.transpose() * &mult_ineq
            - problem.a_eq.transpose() * &mult_eq;
        let stationarity = grad.amax();
        let complementarity = slack_ineq
            .iter()
            .zip(mult_ineq.iter())
            .map(|(s, m)| (s * m).abs())
            .fold(0.0, f64::max);
        let b_norm = problem.b_ineq.norm().max(problem.b_eq.norm());
        let kkt_residual = (primal / (1.0 + b_norm))
            .max(stationarity / (1.0 + problem.g.norm()))
            .max(complementarity);
        QpSolution {
            x,
            status,
            kkt_residual,
            primal_violation: primal,
            stationarity,
            complementarity,
            active_set,
            multipliers: mult_ineq,
            eq_multipliers: mult_eq,
            iterations,
        }
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, a: usize, b: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, a)], m[(i, b)]);
        m[(i, a)] = c * x + s * y;
        m[(i, b)] = -s * x + c * y;
    }
}

/// One-shot convenience wrapper around [`QpSolver::solve`].
pub fn solve(problem: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    QpSolver::new().solve(problem, warm_start)
}

#[cfg(test)]
#[path = "../tests/common/qp_oracle.rs"]
pub(crate) mod qp_oracle;
