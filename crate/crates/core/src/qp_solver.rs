//! Dense convex QP: minimize `½uᵀHu + gᵀu` subject to `b̲ ≤ Au ≤ b̄`.
//!
//! Dual active-set method in the style of Goldfarb and Idnani. With
//! `H = LLᵀ` the problem is solved in whitened coordinates `y = Lᵀu`, where
//! the Hessian is the identity and every step is an orthogonal projection
//! against the current working set. The iterate is dual feasible throughout;
//! each outer iteration adds the most violated constraint (scaled by its
//! whitened norm, index order breaking ties) and drops working constraints
//! whose multipliers would turn negative. Equality rows (`b̲ = b̄`) enter the
//! working set first and are never dropped.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const DEFAULT_MAX_ITERATIONS: usize = 200;

/// Feasibility tolerance relative to `1 + |b|`.
const FEAS_TOL: f64 = 1e-10;
/// Relative norm below which a constraint normal is treated as linearly dependent.
const DEPENDENCE_TOL: f64 = 1e-10;
/// Slack window for seeding the working set from a warm-start point.
const WARM_ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(h: DMatrix<f64>, g: DVector<f64>) -> Self {
        let n = g.len();
        Self {
            h,
            g,
            a: DMatrix::zeros(0, n),
            lower: DVector::zeros(0),
            upper: DVector::zeros(0),
        }
    }

    pub fn num_variables(&self) -> usize {
        self.g.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.g.dot(u)
    }

    /// Appends rows `lower ≤ rows·u ≤ upper`.
    pub fn push_rows(&mut self, rows: &DMatrix<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
        let m = self.a.nrows();
        let k = rows.nrows();
        let n = self.a.ncols();
        let mut a = DMatrix::zeros(m + k, n);
        a.rows_mut(0, m).copy_from(&self.a);
        a.rows_mut(m, k).copy_from(rows);
        self.a = a;
        let mut lo = DVector::zeros(m + k);
        lo.rows_mut(0, m).copy_from(&self.lower);
        lo.rows_mut(m, k).copy_from(lower);
        let mut up = DVector::zeros(m + k);
        up.rows_mut(0, m).copy_from(&self.upper);
        up.rows_mut(m, k).copy_from(upper);
        self.lower = lo;
        self.upper = up;
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("Hessian is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("problem dimensions are inconsistent: {0}")]
    DimensionMismatch(String),
    #[error("row {0} has lower bound above upper bound or NaN bounds")]
    InvalidBounds(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIterations => "max_iter",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundSide {
    Lower,
    Upper,
    Equality,
}

/// A row of `A` held at one of its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActiveConstraint {
    pub row: usize,
    pub side: BoundSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `‖Hu + g + Aᵀλ‖∞`.
    pub stationarity: f64,
    /// Largest bound violation.
    pub primal: f64,
    /// Largest `|λ_i|·slack_i` over the bound each multiplier acts on.
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    /// One multiplier per row, signed so that `Hu + g + Aᵀλ = 0`
    /// (negative on lower bounds, positive on upper bounds).
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub kkt: KktResiduals,
    pub active_set: Vec<ActiveConstraint>,
}

/// Inequality `nᵀu ≥ b` in whitened form.
#[derive(Debug, Clone)]
struct Constraint {
    row: usize,
    side: BoundSide,
    n_hat: DVector<f64>,
    b: f64,
}

#[derive(Debug, Clone, Copy)]
struct Member {
    index: usize,
    /// `-1` when an equality row entered with its normal flipped.
    sign: f64,
    mult: f64,
}

/// QR factorization of the whitened working-set normals.
struct Basis {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Basis {
    fn new(cons: &[Constraint], work: &[Member], n: usize) -> Self {
        let k = work.len();
        if k == 0 {
            return Self {
                q: DMatrix::zeros(n, 0),
                r: DMatrix::zeros(0, 0),
            };
        }
        let mut nm = DMatrix::zeros(n, k);
        for (c, m) in work.iter().enumerate() {
            nm.column_mut(c).copy_from(&(&cons[m.index].n_hat * m.sign));
        }
        let qr = nm.qr();
        Self { q: qr.q(), r: qr.r() }
    }

    /// Returns `(z, r)`: the component of `v` orthogonal to the working set and
    /// the coefficients of its projection, `v = z + N r`.
    fn split(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        if self.q.ncols() == 0 {
            return (v.clone(), DVector::zeros(0));
        }
        let c = self.q.transpose() * v;
        let z = v - &self.q * &c;
        let r = self.r.solve_upper_triangular(&c).unwrap_or_else(|| DVector::zeros(c.len()));
        (z, r)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolver {
    pub max_iterations: usize,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

enum Outcome {
    Done,
    Infeasible,
    MaxIterations,
}

impl QpSolver {
    pub fn new(max_iterations: usize) -> Self {
        Self { max_iterations }
    }

    /// Solves `p`. A warm-start point seeds the working set with the
    /// inequality bounds active at that point.
    pub fn solve(&self, p: &QpProblem, warm_start: Option<&DVector<f64>>) -> Result<QpSolution, QpError> {
        validate(p)?;
        let guess = match warm_start {
            Some(u0) if u0.len() == p.num_variables() => active_at(p, u0),
            Some(u0) => {
                return Err(QpError::DimensionMismatch(format!(
                    "warm start has {} entries, problem has {} variables",
                    u0.len(),
                    p.num_variables()
                )))
            }
            None => Vec::new(),
        };
        self.solve_with_active_set(p, &guess)
    }

    /// Solves `p` starting from a guessed working set (e.g. the previous
    /// solution's `active_set`). Guesses that no longer fit are discarded.
    pub fn solve_with_active_set(&self, p: &QpProblem, guess: &[ActiveConstraint]) -> Result<QpSolution, QpError> {
        validate(p)?;
        let n = p.num_variables();
        let h = (&p.h + p.h.transpose()) * 0.5;
        let chol = h.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let l = chol.l();
        let whiten = |v: &DVector<f64>| l.solve_lower_triangular(v).expect("Cholesky factor is nonsingular");

        let mut cons = Vec::new();
        for i in 0..p.num_rows() {
            let (lo, up) = (p.lower[i], p.upper[i]);
            let a: DVector<f64> = p.a.row(i).transpose();
            if lo == up {
                cons.push(Constraint {
                    row: i,
                    side: BoundSide::Equality,
                    n_hat: whiten(&a),
                    b: lo,
                });
                continue;
            }
            if lo.is_finite() {
                cons.push(Constraint {
                    row: i,
                    side: BoundSide::Lower,
                    n_hat: whiten(&a),
                    b: lo,
                });
            }
            if up.is_finite() {
                cons.push(Constraint {
                    row: i,
                    side: BoundSide::Upper,
                    n_hat: whiten(&(-a)),
                    b: -up,
                });
            }
        }

        let g_hat = whiten(&p.g);
        let mut y = -&g_hat;
        let mut work: Vec<Member> = Vec::new();
        let mut iterations = 0;

        let outcome = 'run: {
            // Equality rows first; their multipliers are free in sign.
            for ci in 0..cons.len() {
                if cons[ci].side != BoundSide::Equality {
                    continue;
                }
                let s = cons[ci].n_hat.dot(&y) - cons[ci].b;
                let sign = if s > 0.0 { -1.0 } else { 1.0 };
                match self.add_constraint(&cons, &mut work, &mut y, ci, sign, &mut iterations) {
                    Outcome::Done => {}
                    other => break 'run other,
                }
            }

            if !guess.is_empty() {
                self.seed_working_set(&cons, &mut work, &mut y, &g_hat, guess, &mut iterations);
            }

            loop {
                if iterations >= self.max_iterations {
                    break 'run Outcome::MaxIterations;
                }
                let mut best: Option<(usize, f64)> = None;
                for (ci, c) in cons.iter().enumerate() {
                    if c.side == BoundSide::Equality || work.iter().any(|m| m.index == ci) {
                        continue;
                    }
                    let s = c.n_hat.dot(&y) - c.b;
                    if s >= -FEAS_TOL * (1.0 + c.b.abs()) {
                        continue;
                    }
                    let score = s / c.n_hat.norm();
                    if best.is_none_or(|(_, v)| score < v) {
                        best = Some((ci, score));
                    }
                }
                let Some((ci, _)) = best else {
                    break 'run Outcome::Done;
                };
                match self.add_constraint(&cons, &mut work, &mut y, ci, 1.0, &mut iterations) {
                    Outcome::Done => {}
                    other => break 'run other,
                }
            }
        };

        if matches!(outcome, Outcome::Done) {
            polish(&cons, &mut work, &mut y, &g_hat, n);
        }
        let u = l.transpose().solve_upper_triangular(&y).expect("Cholesky factor is nonsingular");

        let mut multipliers = DVector::zeros(p.num_rows());
        let mut active_set = Vec::with_capacity(work.len());
        for m in &work {
            let c = &cons[m.index];
            match c.side {
                BoundSide::Lower => multipliers[c.row] -= m.mult,
                BoundSide::Upper => multipliers[c.row] += m.mult,
                BoundSide::Equality => multipliers[c.row] -= m.mult * m.sign,
            }
            active_set.push(ActiveConstraint { row: c.row, side: c.side });
        }
        active_set.sort();
        let status = match outcome {
            Outcome::Done => QpStatus::Optimal,
            Outcome::Infeasible => QpStatus::Infeasible,
            Outcome::MaxIterations => QpStatus::MaxIterations,
        };
        let kkt = kkt_residuals(p, &u, &multipliers);
        Ok(QpSolution {
            objective: p.objective(&u),
            u,
            status,
            multipliers,
            iterations,
            kkt,
            active_set,
        })
    }

    /// One dual step sequence bringing constraint `ci` (normal scaled by
    /// `sign`) into the working set.
    fn add_constraint(
        &self,
        cons: &[Constraint],
        work: &mut Vec<Member>,
        y: &mut DVector<f64>,
        ci: usize,
        sign: f64,
        iterations: &mut usize,
    ) -> Outcome {
        let n = y.len();
        let np = &cons[ci].n_hat * sign;
        let bp = cons[ci].b * sign;
        let is_equality = cons[ci].side == BoundSide::Equality;
        let mut mult_p = 0.0;
        loop {
            if *iterations >= self.max_iterations {
                return Outcome::MaxIterations;
            }
            *iterations += 1;
            let basis = Basis::new(cons, work, n);
            let (z, r) = basis.split(&np);
            let dependent = z.norm() <= DEPENDENCE_TOL * np.norm().max(f64::MIN_POSITIVE);
            let s = np.dot(y) - bp;

            // Partial step: largest t keeping inequality multipliers nonnegative.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (j, m) in work.iter().enumerate() {
                if cons[m.index].side == BoundSide::Equality || r[j] <= 1e-14 {
                    continue;
                }
                let t = m.mult / r[j];
                if t < t1 {
                    t1 = t;
                    drop = Some(j);
                }
            }
            let t2 = if dependent { f64::INFINITY } else { -s / z.norm_squared() };

            if dependent && s.abs() <= FEAS_TOL * (1.0 + bp.abs()) && is_equality {
                // Redundant but consistent equality.
                return Outcome::Done;
            }
            let t = t1.min(t2);
            if !t.is_finite() {
                return Outcome::Infeasible;
            }
            if !dependent {
                *y += &z * t;
            }
            for (j, m) in work.iter_mut().enumerate() {
                m.mult -= t * r[j];
            }
            mult_p += t;
            if t2 <= t1 {
                work.push(Member {
                    index: ci,
                    sign,
                    mult: mult_p,
                });
                return Outcome::Done;
            }
            let j = drop.expect("finite partial step has a blocking constraint");
            work.remove(j);
        }
    }

    /// Adds the guessed constraints that are independent of the current working
    /// set, re-solves the equality-constrained subproblem and drops guesses
    /// with negative multipliers until the pair is dual feasible.
    fn seed_working_set(
        &self,
        cons: &[Constraint],
        work: &mut Vec<Member>,
        y: &mut DVector<f64>,
        g_hat: &DVector<f64>,
        guess: &[ActiveConstraint],
        iterations: &mut usize,
    ) {
        let n = y.len();
        let before = work.len();
        for gc in guess {
            if gc.side == BoundSide::Equality {
                continue;
            }
            let Some(ci) = cons.iter().position(|c| c.row == gc.row && c.side == gc.side) else {
                continue;
            };
            if work.iter().any(|m| m.index == ci) || work.len() >= n {
                continue;
            }
            let basis = Basis::new(cons, work, n);
            let (z, _) = basis.split(&cons[ci].n_hat);
            if z.norm() <= 1e-6 * cons[ci].n_hat.norm() {
                continue;
            }
            work.push(Member {
                index: ci,
                sign: 1.0,
                mult: 0.0,
            });
        }
        if work.len() == before {
            return;
        }
        loop {
            solve_equality_subproblem(cons, work, y, g_hat, n);
            let mut worst: Option<(usize, f64)> = None;
            for (j, m) in work.iter().enumerate() {
                if cons[m.index].side != BoundSide::Equality && m.mult < 0.0 && worst.is_none_or(|(_, v)| m.mult < v) {
                    worst = Some((j, m.mult));
                }
            }
            match worst {
                Some((j, _)) => {
                    work.remove(j);
                    *iterations += 1;
                }
                None => return,
            }
        }
    }
}

/// `y = −ĝ + N̂μ` with `N̂ᵀy = b`, written into `y` and the members' multipliers.
fn solve_equality_subproblem(cons: &[Constraint], work: &mut [Member], y: &mut DVector<f64>, g_hat: &DVector<f64>, n: usize) {
    if work.is_empty() {
        *y = -g_hat;
        return;
    }
    let basis = Basis::new(cons, work, n);
    let rhs = DVector::from_iterator(
        work.len(),
        work.iter().map(|m| m.sign * cons[m.index].b + m.sign * cons[m.index].n_hat.dot(g_hat)),
    );
    // RᵀR μ = rhs.
    let w = basis
        .r
        .transpose()
        .solve_lower_triangular(&rhs)
        .unwrap_or_else(|| DVector::zeros(rhs.len()));
    let mu = basis.r.solve_upper_triangular(&w).unwrap_or_else(|| DVector::zeros(rhs.len()));
    *y = -g_hat + &basis.q * &w;
    for (m, v) in work.iter_mut().zip(mu.iter()) {
        m.mult = *v;
    }
}

/// Re-solves the final working set directly to remove accumulated drift.
fn polish(cons: &[Constraint], work: &mut [Member], y: &mut DVector<f64>, g_hat: &DVector<f64>, n: usize) {
    let saved_y = y.clone();
    let saved: Vec<f64> = work.iter().map(|m| m.mult).collect();
    solve_equality_subproblem(cons, work, y, g_hat, n);
    let ok = y.iter().all(|v| v.is_finite()) && work.iter().all(|m| m.mult.is_finite());
    if !ok {
        *y = saved_y;
        for (m, v) in work.iter_mut().zip(saved) {
            m.mult = v;
        }
        return;
    }
    for m in work.iter_mut() {
        if cons[m.index].side != BoundSide::Equality && m.mult < 0.0 {
            m.mult = 0.0;
        }
    }
}

fn validate(p: &QpProblem) -> Result<(), QpError> {
    let n = p.g.len();
    if p.h.nrows() != n || p.h.ncols() != n {
        return Err(QpError::DimensionMismatch(format!("H is {}×{}, g has {} entries", p.h.nrows(), p.h.ncols(), n)));
    }
    let m = p.a.nrows();
    if p.a.ncols() != n || p.lower.len() != m || p.upper.len() != m {
        return Err(QpError::DimensionMismatch(format!(
            "A is {}×{}, bounds have {} and {} entries",
            m,
            p.a.ncols(),
            p.lower.len(),
            p.upper.len()
        )));
    }
    for i in 0..m {
        let (lo, up) = (p.lower[i], p.upper[i]);
        if lo.is_nan() || up.is_nan() || lo > up {
            return Err(QpError::InvalidBounds(i));
        }
    }
    if p.h.iter().chain(p.g.iter()).chain(p.a.iter()).any(|x| !x.is_finite()) {
        return Err(QpError::DimensionMismatch("non-finite problem data".into()));
    }
    Ok(())
}

fn active_at(p: &QpProblem, u0: &DVector<f64>) -> Vec<ActiveConstraint> {
    let au = &p.a * u0;
    let mut out = Vec::new();
    for i in 0..p.num_rows() {
        let (lo, up) = (p.lower[i], p.upper[i]);
        if lo == up {
            continue;
        }
        if lo.is_finite() && (au[i] - lo).abs() <= WARM_ACTIVE_TOL * (1.0 + lo.abs()) {
            out.push(ActiveConstraint {
                row: i,
                side: BoundSide::Lower,
            });
        } else if up.is_finite() && (au[i] - up).abs() <= WARM_ACTIVE_TOL * (1.0 + up.abs()) {
            out.push(ActiveConstraint {
                row: i,
                side: BoundSide::Upper,
            });
        }
    }
    out
}

pub fn kkt_residuals(p: &QpProblem, u: &DVector<f64>, lambda: &DVector<f64>) -> KktResiduals {
    let stationarity = (&p.h * u + &p.g + p.a.transpose() * lambda).amax();
    let au = &p.a * u;
    let mut primal: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..p.num_rows() {
        primal = primal.max(p.lower[i] - au[i]).max(au[i] - p.upper[i]);
        let l = lambda[i];
        let slack = if l < 0.0 {
            au[i] - p.lower[i]
        } else if l > 0.0 {
            p.upper[i] - au[i]
        } else {
            0.0
        };
        if slack.is_finite() {
            complementarity = complementarity.max((l * slack).abs());
        } else if l != 0.0 {
            complementarity = f64::INFINITY;
        }
        if p.lower[i] == p.upper[i] {
            // Equality multipliers are free in sign.
            complementarity = complementarity.max(0.0);
        }
    }
    KktResiduals {
        stationarity,
        primal,
        complementarity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_contract(p: &QpProblem, s: &QpSolution) {
        assert_eq!(s.status, QpStatus::Optimal);
        assert!(s.kkt.stationarity <= 1e-8 * (1.0 + p.g.amax()), "{:?}", s.kkt);
        assert!(s.kkt.primal <= 1e-8, "{:?}", s.kkt);
        assert!(s.kkt.complementarity <= 1e-8, "{:?}", s.kkt);
        let au = &p.a * &s.u;
        for i in 0..p.num_rows() {
            if p.lower[i] == p.upper[i] {
                assert!((au[i] - p.lower[i]).abs() <= 1e-9);
            }
        }
    }

    pub(crate) fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, equalities: usize) -> QpProblem {
        crate::verify::random_qp(rng, n, m, equalities)
    }

    #[test]
    fn unconstrained_quadratic() {
        let c = DVector::from_vec(vec![1.0, -2.0, 3.0]);
        let p = QpProblem::unconstrained(DMatrix::identity(3, 3), -&c);
        let s = QpSolver::default().solve(&p, None).unwrap();
        check_contract(&p, &s);
        assert!((s.u - c).norm() < 1e-14);
    }

    #[test]
    fn halfspace_projection() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.push_rows(
            &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, f64::INFINITY),
        );
        let s = QpSolver::default().solve(&p, None).unwrap();
        check_contract(&p, &s);
        assert!((&s.u - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-14);
        // λ = 1 on the lower bound; signed convention stores it as −1.
        assert!((s.multipliers[0] + 1.0).abs() < 1e-14);
        assert_eq!(s.active_set, vec![ActiveConstraint { row: 0, side: BoundSide::Lower }]);
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.push_rows(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            &DVector::from_vec(vec![1.0, 2.0]),
            &DVector::from_vec(vec![1.0, 2.0]),
        );
        let s = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn contradictory_inequalities_are_infeasible() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(3, 3), DVector::from_vec(vec![1.0, 0.0, -1.0]));
        p.push_rows(
            &DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]),
            &DVector::from_vec(vec![2.0, f64::NEG_INFINITY]),
            &DVector::from_vec(vec![f64::INFINITY, 1.0]),
        );
        let s = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn redundant_equalities_are_accepted() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.push_rows(
            &DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 1.0, -1.0]),
            &DVector::from_vec(vec![1.0, 2.0, 0.0]),
            &DVector::from_vec(vec![1.0, 2.0, 0.0]),
        );
        let s = QpSolver::default().solve(&p, None).unwrap();
        check_contract(&p, &s);
        assert!((&s.u - DVector::from_vec(vec![0.5, 0.5])).norm() < 1e-12);
    }

    #[test]
    fn rejects_indefinite_hessian_and_bad_bounds() {
        let p = QpProblem::unconstrained(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), DVector::zeros(2));
        assert_eq!(QpSolver::default().solve(&p, None), Err(QpError::NotPositiveDefinite));
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::zeros(2));
        p.push_rows(
            &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &DVector::from_element(1, 1.0),
            &DVector::from_element(1, 0.0),
        );
        assert_eq!(QpSolver::default().solve(&p, None), Err(QpError::InvalidBounds(0)));
    }

    #[test]
    fn matches_dual_gradient_oracle_on_random_problems() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let solver = QpSolver::default();
        for _ in 0..50 {
            let n = rng.random_range(2..=20);
            let m = rng.random_range(0..=40);
            let eq = rng.random_range(0..=(n / 2).min(m));
            let p = random_problem(&mut rng, n, m, eq);
            let s = solver.solve(&p, None).unwrap();
            check_contract(&p, &s);
            let oracle_u = crate::verify::dual_projected_gradient(&p, 60_000);
            let f_oracle = p.objective(&oracle_u);
            let viol = {
                let au = &p.a * &oracle_u;
                (0..m).map(|i| (p.lower[i] - au[i]).max(au[i] - p.upper[i])).fold(0.0, f64::max)
            };
            assert!(viol < 1e-6, "oracle did not converge: {viol}");
            assert!((s.objective - f_oracle).abs() < 1e-6 * (1.0 + f_oracle.abs()), "{} vs {}", s.objective, f_oracle);
        }
    }

    #[test]
    fn scaling_leaves_solution_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for _ in 0..20 {
            let p = random_problem(&mut rng, 12, 25, 3);
            let mut scaled = p.clone();
            scaled.h *= 1e3;
            scaled.g *= 1e3;
            let a = QpSolver::default().solve(&p, None).unwrap();
            let b = QpSolver::default().solve(&scaled, None).unwrap();
            assert_eq!(b.status, QpStatus::Optimal);
            assert!((a.u - b.u).amax() < 1e-6);
        }
    }

    #[test]
    fn warm_start_reproduces_cold_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let solver = QpSolver::default();
        for _ in 0..30 {
            let p = random_problem(&mut rng, 15, 35, 4);
            let cold = solver.solve(&p, None).unwrap();
            let warm = solver.solve(&p, Some(&cold.u)).unwrap();
            check_contract(&p, &warm);
            assert!((&warm.u - &cold.u).amax() < 1e-8);
            assert!(warm.iterations <= cold.iterations);
            let seeded = solver.solve_with_active_set(&p, &cold.active_set).unwrap();
            assert!((&seeded.u - &cold.u).amax() < 1e-8);
            assert!(seeded.iterations <= cold.iterations);

            // A slightly perturbed neighbour still converges to its own optimum.
            let mut q = p.clone();
            q.g += DVector::from_fn(q.g.len(), |_, _| rng.random_range(-0.1..0.1));
            let cold_q = solver.solve(&q, None).unwrap();
            let warm_q = solver.solve_with_active_set(&q, &cold.active_set).unwrap();
            check_contract(&q, &warm_q);
            assert!((&warm_q.u - &cold_q.u).amax() < 1e-8);
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let p = random_problem(&mut rng, 18, 40, 5);
        let a = QpSolver::default().solve(&p, None).unwrap();
        let b = QpSolver::default().solve(&p, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iteration_cap_reports_max_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let p = random_problem(&mut rng, 20, 40, 0);
        let full = QpSolver::default().solve(&p, None).unwrap();
        assert!(full.iterations > 1);
        let capped = QpSolver::new(1).solve(&p, None).unwrap();
        assert_eq!(capped.status, QpStatus::MaxIterations);
        assert!(capped.u.iter().all(|x| x.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn optimal_solutions_meet_kkt(seed in 0u64..10_000, n in 2usize..12, m in 0usize..24) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eq = rng.random_range(0..=(n / 2).min(m));
            let p = random_problem(&mut rng, n, m, eq);
            let s = QpSolver::default().solve(&p, None).unwrap();
            prop_assert_eq!(s.status, QpStatus::Optimal);
            prop_assert!(s.kkt.stationarity <= 1e-8 * (1.0 + p.g.amax()));
            prop_assert!(s.kkt.primal <= 1e-8);
            prop_assert!(s.kkt.complementarity <= 1e-8);
        }
    }
}
