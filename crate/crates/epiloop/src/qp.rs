//! Exact solver for tiny dense convex QPs with inequality constraints:
//!
//! ```text
//!     minimize    1/2 x' H x + B' x
//!     subject to  a_i' x <= b_i      for every row i
//! ```
//!
//! Sized for the controller's per-step problems (3 variables, up to 8 rows).
//! `solve` is a primal active-set iteration; `kkt_enumerate_oracle` brute
//! forces every candidate active set and is kept as an independent
//! verification route.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

const FEASIBILITY_TOL: f64 = 1e-8;
const MULTIPLIER_TOL: f64 = 1e-9;
const MAX_ACTIVE_SET_CHANGES: usize = 256;
const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, PartialEq)]
pub enum QpError {
    #[error("no point satisfies all constraint rows")]
    Infeasible,
    #[error("active-set KKT system is ill-conditioned")]
    IllConditioned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Inequality rows (a, b) meaning a' x <= b.
    pub rows: Vec<(DVector<f64>, f64)>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, b: DVector<f64>, rows: Vec<(DVector<f64>, f64)>) -> Self {
        debug_assert!(h.is_square() && h.nrows() == b.len());
        debug_assert!(rows.iter().all(|(a, _)| a.len() == b.len()));
        QpProblem { h, b, rows }
    }

    pub fn n(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.h * x)[(0, 0)] + self.b.dot(x)
    }

    fn row_violation(&self, i: usize, x: &DVector<f64>) -> f64 {
        let (a, b) = &self.rows[i];
        a.dot(x) - b
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        (0..self.rows.len())
            .all(|i| self.row_violation(i, x) <= FEASIBILITY_TOL * (1.0 + self.rows[i].1.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Indices of rows active at the solution.
    pub active_set: Vec<usize>,
    /// One multiplier per row; zero for inactive rows.
    pub multipliers: Vec<f64>,
}

/// Solve the equality-constrained QP with rows `active` forced to equality.
/// Returns (x, multipliers for the active rows) or None when the KKT system
/// is singular or too ill-conditioned to trust.
fn solve_kkt(p: &QpProblem, active: &[usize]) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = p.n();
    let m = active.len();
    let dim = n + m;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for (k, &i) in active.iter().enumerate() {
        let (a, _) = &p.rows[i];
        for j in 0..n {
            kkt[(j, n + k)] = a[j];
            kkt[(n + k, j)] = a[j];
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.b));
    for (k, &i) in active.iter().enumerate() {
        rhs[n + k] = p.rows[i].1;
    }
    // Symmetric Ruiz equilibration: the controller's problems mix unit
    // scales across ~8 orders of magnitude, which would otherwise trip the
    // condition check without the system being genuinely singular.
    let mut d = DVector::from_element(dim, 1.0);
    for _ in 0..2 {
        for i in 0..dim {
            let norm = (0..dim).fold(0.0f64, |acc, j| acc.max(kkt[(i, j)].abs()));
            if norm > 0.0 {
                let s = norm.sqrt().recip();
                d[i] *= s;
                for j in 0..dim {
                    kkt[(i, j)] *= s;
                    kkt[(j, i)] *= s;
                }
            }
        }
    }
    for i in 0..dim {
        rhs[i] *= d[i];
    }
    let svd = kkt.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
        return None;
    }
    let sol = kkt.lu().solve(&rhs)?.component_mul(&d);
    let x = sol.rows(0, n).into_owned();
    // The block system solves H x + sum lambda_i a_i = -B, so the slack-block
    // entries already carry the stationarity sign convention.
    let lambda = (0..m).map(|k| sol[n + k]).collect();
    Some((x, lambda))
}

/// KKT stationarity residual ||H x + B + sum lambda_i a_i||.
fn stationarity_residual(p: &QpProblem, x: &DVector<f64>, multipliers: &[f64]) -> f64 {
    let mut g = &p.h * x + &p.b;
    for (i, &lam) in multipliers.iter().enumerate() {
        g += &p.rows[i].0 * lam;
    }
    g.norm()
}

fn build_solution(p: &QpProblem, x: DVector<f64>, active: &[usize], lambda: &[f64]) -> QpSolution {
    let mut multipliers = vec![0.0; p.rows.len()];
    for (k, &i) in active.iter().enumerate() {
        multipliers[i] = lambda[k].max(0.0);
    }
    debug_assert!(
        stationarity_residual(p, &x, &multipliers) <= 1e-7 * (1.0 + p.b.norm()),
        "stationarity certificate violated"
    );
    QpSolution { objective: p.objective(&x), active_set: active.to_vec(), multipliers, x }
}

/// Cholesky with a one-shot diagonal regularization fallback for numerically
/// semidefinite H.
fn unconstrained_minimum(p: &QpProblem) -> Option<DVector<f64>> {
    if let Some(chol) = p.h.clone().cholesky() {
        return Some(chol.solve(&(-&p.b)));
    }
    let trace = p.h.trace();
    let reg = &p.h + DMatrix::identity(p.n(), p.n()) * (1e-12 * trace.max(1.0));
    log::warn!("QP Hessian not positive definite; regularizing by 1e-12 * trace");
    reg.cholesky().map(|c| c.solve(&(-&p.b)))
}

/// Best feasible starting point: the unconstrained minimum when feasible,
/// otherwise the lowest-objective feasible minimizer over small active
/// subsets (faces and vertices).
fn starting_point(p: &QpProblem) -> Result<(DVector<f64>, Vec<usize>), QpError> {
    if let Some(x) = unconstrained_minimum(p) {
        if p.is_feasible(&x) {
            return Ok((x, Vec::new()));
        }
    }
    let m = p.rows.len();
    let n = p.n();
    let mut best: Option<(f64, DVector<f64>, Vec<usize>)> = None;
    for mask in 1u32..(1 << m) {
        if (mask.count_ones() as usize) > n {
            continue;
        }
        let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if let Some((x, _)) = solve_kkt(p, &subset) {
            if p.is_feasible(&x) {
                let obj = p.objective(&x);
                if best.as_ref().is_none_or(|(b, _, _)| obj < *b) {
                    best = Some((obj, x, subset));
                }
            }
        }
    }
    match best {
        Some((_, x, subset)) => Ok((x, subset)),
        None => Err(QpError::Infeasible),
    }
}

/// Global minimizer by primal active-set iteration.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    let (mut x, mut working) = starting_point(p)?;
    let n = p.n();
    let mut changes = 0;
    loop {
        assert!(
            changes < MAX_ACTIVE_SET_CHANGES,
            "active-set iteration failed to terminate within {MAX_ACTIVE_SET_CHANGES} changes"
        );
        changes += 1;
        let Some((x_eq, lambda)) = solve_kkt(p, &working) else {
            // Ill-conditioned working set: drop the most recently added row.
            if working.pop().is_none() {
                return Err(QpError::IllConditioned);
            }
            continue;
        };
        let step = &x_eq - &x;
        if step.norm() <= 1e-10 * (1.0 + x.norm()) {
            // Stationary on the working set; check dual feasibility.
            if let Some((k, &lam)) =
                lambda.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            {
                if lam < -MULTIPLIER_TOL {
                    working.remove(k);
                    continue;
                }
            }
            return Ok(build_solution(p, x_eq, &working, &lambda));
        }
        // Longest feasible step toward the equality minimizer.
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..p.rows.len() {
            if working.contains(&i) {
                continue;
            }
            let (a, b) = &p.rows[i];
            let dir = a.dot(&step);
            if dir > 1e-12 {
                let room = (b - a.dot(&x)) / dir;
                if room < alpha {
                    alpha = room.max(0.0);
                    blocking = Some(i);
                }
            }
        }
        x += step * alpha;
        match blocking {
            Some(i) => {
                working.push(i);
                assert!(working.len() <= n, "more active rows than variables");
            }
            None => {
                // Full step reached the working-set minimizer.
                x = x_eq;
            }
        }
    }
}

/// Exhaustive KKT oracle: solve the equality QP for every subset of rows,
/// keep primal-feasible solutions with nonnegative multipliers, return the
/// minimum-objective one. Independent of the active-set path above.
pub fn kkt_enumerate_oracle(p: &QpProblem) -> Result<QpSolution, QpError> {
    let m = p.rows.len();
    assert!(p.n() <= 4 && m <= 10, "oracle sized for tiny problems");
    let mut best: Option<QpSolution> = None;
    for mask in 0u32..(1 << m) {
        if (mask.count_ones() as usize) > p.n() {
            continue;
        }
        let subset: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let Some((x, lambda)) = solve_kkt(p, &subset) else {
            continue;
        };
        if !p.is_feasible(&x) {
            continue;
        }
        if lambda.iter().any(|&l| l < -MULTIPLIER_TOL) {
            continue;
        }
        let candidate = build_solution(p, x, &subset, &lambda);
        if best.as_ref().is_none_or(|b| candidate.objective < b.objective) {
            best = Some(candidate);
        }
    }
    best.ok_or(QpError::Infeasible)
}

/// Verify the KKT certificate carried by a solution: primal feasibility,
/// stationarity, nonnegative multipliers, and complementary slackness.
pub fn check_certificate(p: &QpProblem, sol: &QpSolution) -> Result<(), String> {
    for (i, (a, b)) in p.rows.iter().enumerate() {
        let slack = a.dot(&sol.x) - b;
        if slack > 1e-8 * (1.0 + b.abs()) {
            return Err(format!("row {i} violated by {slack}"));
        }
        let lam = sol.multipliers[i];
        if lam < -1e-9 {
            return Err(format!("row {i} multiplier negative: {lam}"));
        }
        if (lam * slack).abs() > 1e-7 * (1.0 + b.abs()) {
            return Err(format!("row {i} complementary slackness violated"));
        }
    }
    let resid = stationarity_residual(p, &sol.x, &sol.multipliers);
    if resid > 1e-7 * (1.0 + p.b.norm()) {
        return Err(format!("stationarity residual {resid}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn row(a: &[f64], b: f64) -> (DVector<f64>, f64) {
        (DVector::from_row_slice(a), b)
    }

    #[test]
    fn unconstrained_minimum_is_returned() {
        let p = QpProblem::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3), Vec::new());
        let sol = solve(&p).unwrap();
        assert!(sol.x.norm() < 1e-12);
        assert_eq!(sol.objective, 0.0);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn clipped_scalar_minimum() {
        // minimize x^2 - 2x subject to x <= 0: optimum at the bound.
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -2.0),
            vec![row(&[1.0], 0.0)],
        );
        let sol = solve(&p).unwrap();
        assert!(sol.x[0].abs() < 1e-10);
        assert_eq!(sol.active_set, vec![0]);
        let oracle = kkt_enumerate_oracle(&p).unwrap();
        assert!((sol.objective - oracle.objective).abs() < 1e-12);
    }

    #[test]
    fn infeasible_rows_are_reported() {
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            vec![row(&[1.0], -1.0), row(&[-1.0], -1.0)],
        );
        assert_eq!(solve(&p).unwrap_err(), QpError::Infeasible);
        assert_eq!(kkt_enumerate_oracle(&p).unwrap_err(), QpError::Infeasible);
    }

    fn random_problem(rng: &mut ChaCha12Rng) -> QpProblem {
        // H = M M' + d I keeps the Hessian well-conditioned PD.
        let m = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(3, 3) * rng.gen_range(0.1..1.0);
        let b = DVector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
        // Rows kept feasible by construction: each passes through a point
        // near the origin with slack.
        let rows = (0..5)
            .map(|_| {
                let a = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
                let bound = rng.gen_range(0.05..2.0);
                (a, bound)
            })
            .collect();
        QpProblem::new(h, b, rows)
    }

    #[test]
    fn random_problems_match_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        for trial in 0..200 {
            let p = random_problem(&mut rng);
            let sol = solve(&p).unwrap();
            let oracle = kkt_enumerate_oracle(&p).unwrap();
            assert!(
                (sol.objective - oracle.objective).abs() <= 1e-6,
                "trial {trial}: {} vs {}",
                sol.objective,
                oracle.objective
            );
            check_certificate(&p, &sol).unwrap();
            check_certificate(&p, &oracle).unwrap();
        }
    }

    #[test]
    fn oracle_unconstrained_case_is_closed_form() {
        let h = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, -2.0]);
        let expected = -h.clone().try_inverse().unwrap() * &b;
        let p = QpProblem::new(h, b, Vec::new());
        let sol = kkt_enumerate_oracle(&p).unwrap();
        assert!((sol.x - expected).norm() < 1e-12);
    }

    #[test]
    fn identical_problems_solve_bit_identically() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let p = random_problem(&mut rng);
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        assert_eq!(a.x.as_slice(), b.x.as_slice());
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}
