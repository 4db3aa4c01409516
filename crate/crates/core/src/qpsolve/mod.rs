//! Convex quadratic programs with separable curvature, linear rows, and
//! variable bounds, plus a small branch-and-bound layer for binary variables.
//!
//! A [`QuadProgram`] minimizes
//!
//! ```text
//! sum_i quadratic_diag[i] * x[i]^2 + linear_cost[i] * x[i] + constant_cost
//! ```
//!
//! subject to equality rows `a·x = b`, two-sided inequality rows
//! `lo <= a·x <= hi`, and per-variable bounds. The continuous solver
//! ([`solve_qp`]) is an over-relaxed operator-splitting iteration with
//! diagonal equilibration, deterministic step-size adaptation, primal/dual
//! infeasibility certificates, and an active-set refinement pass that
//! sharpens optimal solutions to near machine precision.
//! [`solve_with_binaries`] wraps it in a best-first branch-and-bound search
//! over a designated set of 0/1 variables.
//!
//! Everything here is deterministic: fixed iteration order, no randomized
//! pivoting, identical inputs produce bitwise-identical outputs.

mod admm;
mod bb;

pub use bb::{solve_with_binaries, solve_with_binaries_seeded, BnbStats};

use thiserror::Error;

use crate::scalar::Scalar;

/// Sparse linear row: a list of `(variable index, coefficient)` pairs.
/// Duplicate indices are allowed and their coefficients sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow<F> {
    pub coeffs: Vec<(usize, F)>,
}

impl<F: Scalar> LinearRow<F> {
    pub fn new(coeffs: Vec<(usize, F)>) -> Self {
        Self { coeffs }
    }

    /// Dot product with a dense vector.
    pub fn dot(&self, x: &[F]) -> F {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// Equality row `row · x = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equality<F> {
    pub row: LinearRow<F>,
    pub rhs: F,
}

/// Two-sided inequality row `lower <= row · x <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct Inequality<F> {
    pub row: LinearRow<F>,
    pub lower: F,
    pub upper: F,
}

/// Convex quadratic program with diagonal curvature.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadProgram<F> {
    pub n_vars: usize,
    /// Per-variable curvature; must be non-negative (convexity).
    pub quadratic_diag: Vec<F>,
    pub linear_cost: Vec<F>,
    /// Constant objective offset, included in reported objectives.
    pub constant_cost: F,
    pub equalities: Vec<Equality<F>>,
    pub inequalities: Vec<Inequality<F>>,
    /// Per-variable `(lo, hi)`; use infinities for unbounded directions.
    pub var_bounds: Vec<(F, F)>,
}

impl<F: Scalar> QuadProgram<F> {
    /// A program over `n` variables with zero objective and free bounds.
    pub fn new(n: usize) -> Self {
        Self {
            n_vars: n,
            quadratic_diag: vec![F::zero(); n],
            linear_cost: vec![F::zero(); n],
            constant_cost: F::zero(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            var_bounds: vec![(F::neg_infinity(), F::infinity()); n],
        }
    }

    /// Objective value at `x` (including the constant offset).
    pub fn objective_value(&self, x: &[F]) -> F {
        let quad: F = self
            .quadratic_diag
            .iter()
            .zip(x)
            .map(|(&d, &v)| d * v * v)
            .sum();
        let lin: F = self.linear_cost.iter().zip(x).map(|(&c, &v)| c * v).sum();
        quad + lin + self.constant_cost
    }

    /// Shape and convexity checks shared by the solver entry points.
    pub(crate) fn validate(&self) -> Result<(), QpError> {
        let n = self.n_vars;
        for (name, len) in [
            ("quadratic_diag", self.quadratic_diag.len()),
            ("linear_cost", self.linear_cost.len()),
            ("var_bounds", self.var_bounds.len()),
        ] {
            if len != n {
                return Err(QpError::Dimension { what: name, expected: n, got: len });
            }
        }
        for (j, &d) in self.quadratic_diag.iter().enumerate() {
            if d < F::zero() {
                return Err(QpError::NonConvex { var: j });
            }
        }
        let check_row = |row: &LinearRow<F>| -> Result<(), QpError> {
            for &(j, _) in &row.coeffs {
                if j >= n {
                    return Err(QpError::BadIndex { index: j, n_vars: n });
                }
            }
            Ok(())
        };
        for eq in &self.equalities {
            check_row(&eq.row)?;
        }
        for ineq in &self.inequalities {
            check_row(&ineq.row)?;
        }
        Ok(())
    }
}

/// Outcome class of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    /// Converged with residuals below the configured tolerances.
    Optimal,
    /// A certificate of primal infeasibility (or of an unbounded descent
    /// direction) was detected, or bounds were contradictory.
    Infeasible,
    /// Iteration or node budget exhausted before convergence.
    MaxIterations,
}

/// Solver result. For non-optimal statuses `x` is the last iterate and the
/// objective/residual fields describe it; they carry no optimality claim.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<F> {
    pub status: QpStatus,
    pub x: Vec<F>,
    pub objective: F,
    pub primal_residual: F,
    pub dual_residual: F,
    pub iterations: usize,
    /// Whether the active-set refinement pass was applied to `x`.
    pub polished: bool,
}

/// Tolerances and iteration controls.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings<F> {
    /// Absolute primal/dual residual tolerance.
    pub eps_abs: F,
    /// Relative primal/dual residual tolerance.
    pub eps_rel: F,
    /// Infeasibility certificate tolerance.
    pub eps_infeasible: F,
    pub max_iterations: usize,
    /// Initial step-size parameter of the splitting iteration.
    pub rho: F,
    /// Ridge regularization of the linear-system subproblem.
    pub sigma: F,
    /// Over-relaxation factor in (0, 2).
    pub over_relaxation: F,
    /// Rounds of diagonal equilibration applied to the problem data.
    pub scaling_iterations: usize,
    /// Residuals and certificates are evaluated every this many iterations.
    pub check_interval: usize,
    /// Step-size adaptation is considered every this many iterations
    /// (a multiple of `check_interval`).
    pub rho_adapt_interval: usize,
    pub adaptive_rho: bool,
    /// Run the active-set refinement pass on optimal solutions.
    pub polish: bool,
    /// Ridge regularization used by the refinement pass.
    pub polish_regularization: F,
    /// Iterative-refinement sweeps in the refinement pass.
    pub refinement_steps: usize,
}

impl<F: Scalar> Default for QpSettings<F> {
    fn default() -> Self {
        Self {
            eps_abs: F::lit(1e-6),
            eps_rel: F::lit(1e-6),
            eps_infeasible: F::lit(1e-7),
            max_iterations: 20_000,
            rho: F::lit(0.1),
            sigma: F::lit(1e-6),
            over_relaxation: F::lit(1.6),
            scaling_iterations: 10,
            check_interval: 25,
            rho_adapt_interval: 100,
            adaptive_rho: true,
            polish: true,
            polish_regularization: F::lit(1e-6),
            refinement_steps: 3,
        }
    }
}

/// Rejected inputs.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum QpError {
    #[error("variable {var} has negative curvature; the objective must be convex")]
    NonConvex { var: usize },
    #[error("row references variable {index} but the program has {n_vars} variables")]
    BadIndex { index: usize, n_vars: usize },
    #[error("{what} has length {got}, expected {expected}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("binary variable {var} must have bounds within [0, 1]")]
    BinaryBounds { var: usize },
}

/// Solves a convex program from a cold start.
pub fn solve_qp<F: Scalar>(p: &QuadProgram<F>, settings: &QpSettings<F>) -> Result<QpSolution<F>, QpError> {
    solve_qp_seeded(p, settings, None, None)
}

/// Solves a convex program, optionally seeding the primal iterate `x0`
/// (length `n_vars`) and the row multipliers `y0` (one entry per equality,
/// then inequality, then variable-bound row).
pub fn solve_qp_seeded<F: Scalar>(
    p: &QuadProgram<F>,
    settings: &QpSettings<F>,
    x0: Option<&[F]>,
    y0: Option<&[F]>,
) -> Result<QpSolution<F>, QpError> {
    let prepared = admm::Prepared::new(p, settings)?;
    if let Some(x) = x0 {
        if x.len() != p.n_vars {
            return Err(QpError::Dimension { what: "x0", expected: p.n_vars, got: x.len() });
        }
    }
    if let Some(y) = y0 {
        let m = prepared.row_count();
        if y.len() != m {
            return Err(QpError::Dimension { what: "y0", expected: m, got: y.len() });
        }
    }
    Ok(prepared.solve(&[], x0, y0, settings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    type P = QuadProgram<f64>;

    fn settings() -> QpSettings<f64> {
        QpSettings::default()
    }

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * 1.0_f64.max(a.abs()).max(b.abs())
    }

    #[test]
    fn interior_minimum_of_a_parabola() {
        // minimize (x - 1)^2 on [0, 2]
        let mut p = P::new(1);
        p.quadratic_diag = vec![1.0];
        p.linear_cost = vec![-2.0];
        p.constant_cost = 1.0;
        p.var_bounds = vec![(0.0, 2.0)];
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-8, "x = {}", sol.x[0]);
        assert!(sol.objective.abs() < 1e-10, "objective = {}", sol.objective);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        // minimize x subject to x >= 3 and x <= 2
        let mut p = P::new(1);
        p.linear_cost = vec![1.0];
        p.inequalities = vec![
            Inequality { row: LinearRow::new(vec![(0, 1.0)]), lower: 3.0, upper: f64::INFINITY },
            Inequality { row: LinearRow::new(vec![(0, 1.0)]), lower: f64::NEG_INFINITY, upper: 2.0 },
        ];
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn contradictory_bounds_are_infeasible_without_iterating() {
        let mut p = P::new(1);
        p.var_bounds = vec![(1.0, 0.0)];
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn unbounded_descent_direction_is_reported_infeasible() {
        // minimize -x with x >= 0: descent direction certificate.
        let mut p = P::new(1);
        p.linear_cost = vec![-1.0];
        p.var_bounds = vec![(0.0, f64::INFINITY)];
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_row_with_and_without_an_active_bound() {
        // minimize x^2 + y^2 subject to x + y = 1.
        let mut p = P::new(2);
        p.quadratic_diag = vec![1.0, 1.0];
        p.equalities = vec![Equality { row: LinearRow::new(vec![(0, 1.0), (1, 1.0)]), rhs: 1.0 }];
        let sol = solve_qp(&p, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-7 && (sol.x[1] - 0.5).abs() < 1e-7, "{:?}", sol.x);
        assert!(rel_close(sol.objective, 0.5, 1e-7));

        // Adding y <= 0.2 moves the optimum to (0.8, 0.2).
        let mut p2 = p.clone();
        p2.var_bounds[1] = (f64::NEG_INFINITY, 0.2);
        let sol2 = solve_qp(&p2, &settings()).unwrap();
        assert_eq!(sol2.status, QpStatus::Optimal);
        assert!((sol2.x[0] - 0.8).abs() < 1e-7 && (sol2.x[1] - 0.2).abs() < 1e-7, "{:?}", sol2.x);
        assert!(rel_close(sol2.objective, 0.68, 1e-7));
    }

    /// Box-constrained programs split per coordinate, so two independent
    /// oracles exist: a projected-gradient iteration run to convergence and
    /// the per-coordinate closed form clamp(-c/(2d), lo, hi).
    #[test]
    fn random_box_programs_match_projected_gradient_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x51ab);
        for case in 0..20 {
            let n = 20;
            let mut p = P::new(n);
            for j in 0..n {
                p.quadratic_diag[j] = rng.random_range(0.1..2.0);
                p.linear_cost[j] = rng.random_range(-2.0..2.0);
                let a: f64 = rng.random_range(-3.0..3.0);
                let b: f64 = rng.random_range(-3.0..3.0);
                p.var_bounds[j] = (a.min(b), a.max(b));
            }

            // Oracle 1: projected gradient, brute-force iteration.
            let step = 1.0 / (2.0 * 2.0 + 1.0);
            let mut x: Vec<f64> = vec![0.0; n];
            for j in 0..n {
                x[j] = x[j].clamp(p.var_bounds[j].0, p.var_bounds[j].1);
            }
            for _ in 0..20_000 {
                for j in 0..n {
                    let g = 2.0 * p.quadratic_diag[j] * x[j] + p.linear_cost[j];
                    x[j] = (x[j] - step * g).clamp(p.var_bounds[j].0, p.var_bounds[j].1);
                }
            }
            let pg_obj = p.objective_value(&x);

            // Oracle 2: per-coordinate closed form.
            let closed: Vec<f64> = (0..n)
                .map(|j| {
                    (-p.linear_cost[j] / (2.0 * p.quadratic_diag[j]))
                        .clamp(p.var_bounds[j].0, p.var_bounds[j].1)
                })
                .collect();
            let closed_obj = p.objective_value(&closed);
            assert!(rel_close(pg_obj, closed_obj, 1e-7), "oracles disagree on case {case}");

            let sol = solve_qp(&p, &settings()).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
            assert!(
                rel_close(sol.objective, closed_obj, 1e-5),
                "case {case}: solver {} vs oracle {}",
                sol.objective,
                closed_obj
            );
            for j in 0..n {
                assert!(
                    sol.x[j] >= p.var_bounds[j].0 - 1e-8 && sol.x[j] <= p.var_bounds[j].1 + 1e-8,
                    "case {case}: variable {j} out of bounds"
                );
            }
        }
    }

    /// Random programs with coupling rows: optimal solutions must satisfy
    /// every equality to 1e-6·(1+|rhs|), bounds to 1e-8, and stationarity.
    #[test]
    fn random_row_programs_satisfy_kkt_residual_bars() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
        let mut optimal_seen = 0;
        for _ in 0..25 {
            let n = 8;
            let mut p = P::new(n);
            for j in 0..n {
                p.quadratic_diag[j] = rng.random_range(0.05..1.5);
                p.linear_cost[j] = rng.random_range(-1.0..1.0);
                p.var_bounds[j] = (-4.0, 4.0);
            }
            let row: Vec<(usize, f64)> =
                (0..n).map(|j| (j, rng.random_range(-1.0..1.0))).collect();
            let rhs = rng.random_range(-1.0..1.0);
            p.equalities.push(Equality { row: LinearRow::new(row), rhs });
            let irow: Vec<(usize, f64)> =
                (0..n).map(|j| (j, rng.random_range(-1.0..1.0))).collect();
            p.inequalities.push(Inequality {
                row: LinearRow::new(irow),
                lower: -0.5,
                upper: 0.5,
            });

            let sol = solve_qp(&p, &settings()).unwrap();
            if sol.status != QpStatus::Optimal {
                continue; // random data can be infeasible; that is fine here
            }
            optimal_seen += 1;
            for eq in &p.equalities {
                let r = (eq.row.dot(&sol.x) - eq.rhs).abs();
                assert!(r <= 1e-6 * (1.0 + eq.rhs.abs()), "equality residual {r}");
            }
            for ineq in &p.inequalities {
                let v = ineq.row.dot(&sol.x);
                assert!(v >= ineq.lower - 1e-6 && v <= ineq.upper + 1e-6);
            }
            for j in 0..n {
                assert!(sol.x[j] >= p.var_bounds[j].0 - 1e-8);
                assert!(sol.x[j] <= p.var_bounds[j].1 + 1e-8);
            }
            assert!(sol.primal_residual <= 1e-6 && sol.dual_residual <= 1e-6);
        }
        assert!(optimal_seen >= 20, "only {optimal_seen} optimal instances");
    }

    #[test]
    fn identical_programs_solve_bitwise_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 12;
        let mut p = P::new(n);
        for j in 0..n {
            p.quadratic_diag[j] = rng.random_range(0.0..1.0);
            p.linear_cost[j] = rng.random_range(-1.0..1.0);
            p.var_bounds[j] = (-2.0, 2.0);
        }
        p.equalities.push(Equality {
            row: LinearRow::new((0..n).map(|j| (j, 1.0 + j as f64 * 0.1)).collect()),
            rhs: 3.0,
        });
        let a = solve_qp(&p, &settings()).unwrap();
        let b = solve_qp(&p, &settings()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        for (u, v) in a.x.iter().zip(&b.x) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn warm_start_from_the_optimum_converges_immediately() {
        let mut p = P::new(3);
        p.quadratic_diag = vec![1.0, 0.5, 2.0];
        p.linear_cost = vec![-1.0, 0.3, 0.7];
        p.var_bounds = vec![(-1.0, 1.0); 3];
        p.equalities.push(Equality {
            row: LinearRow::new(vec![(0, 1.0), (1, 1.0), (2, 1.0)]),
            rhs: 0.4,
        });
        let cold = solve_qp(&p, &settings()).unwrap();
        assert_eq!(cold.status, QpStatus::Optimal);

        // One multiplier entry per equality, inequality, then bound row.
        let m = p.equalities.len() + p.inequalities.len() + p.n_vars;
        let y = vec![0.0; m];
        let warm = solve_qp_seeded(&p, &settings(), Some(&cold.x), Some(&y)).unwrap();
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!(warm.iterations <= 2 * settings().check_interval);
        assert!((warm.objective - cold.objective).abs() <= 1e-8);
    }

    #[test]
    fn negative_curvature_is_rejected() {
        let mut p = P::new(1);
        p.quadratic_diag = vec![-1.0];
        assert_eq!(solve_qp(&p, &settings()).unwrap_err(), QpError::NonConvex { var: 0 });
    }

    #[test]
    fn out_of_range_row_index_is_rejected() {
        let mut p = P::new(2);
        p.equalities.push(Equality { row: LinearRow::new(vec![(5, 1.0)]), rhs: 0.0 });
        assert_eq!(
            solve_qp(&p, &settings()).unwrap_err(),
            QpError::BadIndex { index: 5, n_vars: 2 }
        );
    }

    #[test]
    fn solves_at_single_precision() {
        let mut p = QuadProgram::<f32>::new(2);
        p.quadratic_diag = vec![1.0, 1.0];
        p.linear_cost = vec![-2.0, -4.0];
        p.var_bounds = vec![(0.0, 10.0), (0.0, 10.0)];
        let mut s = QpSettings::<f32>::default();
        s.eps_abs = 1e-4;
        s.eps_rel = 1e-4;
        let sol = solve_qp(&p, &s).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-3 && (sol.x[1] - 2.0).abs() < 1e-3);
    }
}
