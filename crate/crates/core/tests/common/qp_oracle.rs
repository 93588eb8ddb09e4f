//! Exhaustive active-set enumeration for small QPs.
//!
//! Every subset of inequality rows (plus all equalities) is treated as active,
//! the equality-constrained KKT system is solved directly, and the cheapest
//! primal-feasible candidate is kept. Exponential in the row count; only for
//! problems with a handful of inequalities.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

pub struct OracleProblem<'a> {
    pub h: &'a DMatrix<f64>,
    pub g: &'a DVector<f64>,
    pub a_ineq: &'a DMatrix<f64>,
    pub b_ineq: &'a DVector<f64>,
    pub a_eq: &'a DMatrix<f64>,
    pub b_eq: &'a DVector<f64>,
}

pub fn enumerate(p: &OracleProblem) -> Option<DVector<f64>> {
    let n = p.g.len();
    let m = p.b_ineq.len();
    let e = p.b_eq.len();
    assert!(m <= 16, "enumeration oracle is exponential in the row count");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << m) {
        let rows: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let k = e + rows.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(p.h);
        for i in 0..n {
            rhs[i] = -p.g[i];
        }
        for (r, row) in (0..e)
            .map(|i| (p.a_eq.row(i).transpose(), p.b_eq[i]))
            .chain(rows.iter().map(|&i| (p.a_ineq.row(i).transpose(), p.b_ineq[i])))
            .enumerate()
        {
            for c in 0..n {
                kkt[(n + r, c)] = row.0[c];
                kkt[(c, n + r)] = row.0[c];
            }
            rhs[n + r] = row.1;
        }
        let lu = kkt.full_piv_lu();
        if !lu.is_invertible() {
            continue;
        }
        let sol = match lu.solve(&rhs) {
            Some(s) => s,
            None => continue,
        };
        let x = sol.rows(0, n).into_owned();
        let feasible = (0..m).all(|i| p.a_ineq.row(i).dot(&x.transpose()) - p.b_ineq[i] >= -1e-9)
            && (0..e).all(|i| (p.a_eq.row(i).dot(&x.transpose()) - p.b_eq[i]).abs() <= 1e-9);
        if !feasible {
            continue;
        }
        let cost = 0.5 * x.dot(&(p.h * &x)) + p.g.dot(&x);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, x));
        }
    }
    best.map(|(_, x)| x)
}
