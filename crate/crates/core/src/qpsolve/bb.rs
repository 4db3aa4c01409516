//! Best-first branch-and-bound over designated binary variables.
//!
//! Nodes are continuous relaxations of [`super::QuadProgram`] with some
//! binaries pinned via bound overrides; pinning never changes the
//! equilibration or the cached Gram matrix, so every node reuses the parent
//! preparation. Node order is (lower bound, insertion id), branching picks
//! the most fractional binary (ties to the lowest index), and integral
//! incumbents are also sought by snapping fractional relaxation values and
//! re-solving. The returned solution re-solves the winning pinning with the
//! refinement pass enabled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::scalar::Scalar;

use super::admm::Prepared;
use super::{QpError, QpSettings, QpSolution, QpStatus, QuadProgram};

/// Relaxation values within this distance of an integer count as integral.
const INTEGRALITY_TOL: f64 = 1e-6;
/// Nodes whose bound is within this relative margin of the incumbent are
/// pruned; the returned objective is optimal up to this margin.
const PRUNE_REL: f64 = 1e-6;

/// Search statistics for tests and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BnbStats {
    /// Relaxations solved (snap re-solves not counted).
    pub nodes_explored: usize,
    /// The node budget ran out before the tree was exhausted.
    pub budget_exhausted: bool,
    /// Some node relaxation hit its iteration limit and was skipped.
    pub unresolved_nodes: usize,
}

struct Node<F> {
    bound: F,
    id: u64,
    fixes: Vec<(usize, bool)>,
    warm_x: Option<Vec<F>>,
    warm_y: Option<Vec<F>>,
}

impl<F: Scalar> PartialEq for Node<F> {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl<F: Scalar> Eq for Node<F> {}
impl<F: Scalar> PartialOrd for Node<F> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<F: Scalar> Ord for Node<F> {
    /// Max-heap ordering inverted so the pop order is (bound asc, id asc).
    fn cmp(&self, other: &Self) -> Ordering {
        match other.bound.partial_cmp(&self.bound).unwrap_or(Ordering::Equal) {
            Ordering::Equal => other.id.cmp(&self.id),
            ord => ord,
        }
    }
}

struct Incumbent<F> {
    objective: F,
    fixes: Vec<(usize, bool)>,
    x: Vec<F>,
    y_len: usize,
}

fn prune_margin<F: Scalar>(objective: F) -> F {
    F::lit(PRUNE_REL) * (F::one() + objective.abs())
}

fn overrides<F: Scalar>(fixes: &[(usize, bool)]) -> Vec<(usize, F, F)> {
    fixes
        .iter()
        .map(|&(var, on)| {
            let v = if on { F::one() } else { F::zero() };
            (var, v, v)
        })
        .collect()
}

/// Solves a program whose `binaries` variables must take 0/1 values, from a
/// cold start. See [`solve_with_binaries_seeded`].
pub fn solve_with_binaries<F: Scalar>(
    p: &QuadProgram<F>,
    binaries: &[usize],
    node_budget: usize,
    settings: &QpSettings<F>,
) -> Result<(QpSolution<F>, BnbStats), QpError> {
    solve_with_binaries_seeded(p, binaries, node_budget, settings, None, None)
}

/// Branch-and-bound with an optional primal/multiplier seed for the root
/// relaxation. Returns the best integral solution found together with search
/// statistics. Status is `Optimal` when the tree was fully resolved,
/// `MaxIterations` when the node budget ran out (with the best incumbent if
/// one exists), and `Infeasible` when no integral assignment admits a
/// feasible program.
pub fn solve_with_binaries_seeded<F: Scalar>(
    p: &QuadProgram<F>,
    binaries: &[usize],
    node_budget: usize,
    settings: &QpSettings<F>,
    x0: Option<&[F]>,
    y0: Option<&[F]>,
) -> Result<(QpSolution<F>, BnbStats), QpError> {
    let prepared = Prepared::new(p, settings)?;
    let mut bins: Vec<usize> = binaries.to_vec();
    bins.sort_unstable();
    bins.dedup();
    for &b in &bins {
        if b >= p.n_vars {
            return Err(QpError::BadIndex { index: b, n_vars: p.n_vars });
        }
        let (lo, hi) = p.var_bounds[b];
        let tol = F::lit(1e-9);
        if lo < -tol || hi > F::one() + tol {
            return Err(QpError::BinaryBounds { var: b });
        }
    }
    if let Some(x) = x0 {
        if x.len() != p.n_vars {
            return Err(QpError::Dimension { what: "x0", expected: p.n_vars, got: x.len() });
        }
    }
    if let Some(y) = y0 {
        if y.len() != prepared.row_count() {
            return Err(QpError::Dimension {
                what: "y0",
                expected: prepared.row_count(),
                got: y.len(),
            });
        }
    }

    let mut stats = BnbStats { nodes_explored: 0, budget_exhausted: false, unresolved_nodes: 0 };
    if bins.is_empty() {
        let sol = prepared.solve(&[], x0, y0, settings);
        stats.nodes_explored = 1;
        return Ok((sol, stats));
    }

    // Node relaxations skip the refinement pass; only the final winning
    // pinning is re-solved with the caller's settings.
    let mut relax_settings = settings.clone();
    relax_settings.polish = false;

    let mut heap: BinaryHeap<Node<F>> = BinaryHeap::new();
    let mut next_id = 0u64;
    heap.push(Node {
        bound: F::neg_infinity(),
        id: next_id,
        fixes: Vec::new(),
        warm_x: x0.map(<[F]>::to_vec),
        warm_y: y0.map(<[F]>::to_vec),
    });
    next_id += 1;

    let mut incumbent: Option<Incumbent<F>> = None;

    while let Some(node) = heap.pop() {
        if let Some(inc) = &incumbent {
            if node.bound >= inc.objective - prune_margin(inc.objective) {
                continue;
            }
        }
        if stats.nodes_explored >= node_budget {
            stats.budget_exhausted = true;
            break;
        }
        stats.nodes_explored += 1;

        let ovr = overrides::<F>(&node.fixes);
        let sol = prepared.solve(&ovr, node.warm_x.as_deref(), node.warm_y.as_deref(), &relax_settings);
        match sol.status {
            QpStatus::Infeasible => continue,
            QpStatus::MaxIterations => {
                stats.unresolved_nodes += 1;
                continue;
            }
            QpStatus::Optimal => {}
        }
        if let Some(inc) = &incumbent {
            if sol.objective >= inc.objective - prune_margin(inc.objective) {
                continue;
            }
        }

        let int_tol = F::lit(INTEGRALITY_TOL);
        let frac_of = |v: F| (v - v.round()).abs();
        let fractional: Vec<usize> =
            bins.iter().copied().filter(|&b| frac_of(sol.x[b]) > int_tol).collect();

        if fractional.is_empty() {
            let fixes: Vec<(usize, bool)> =
                bins.iter().map(|&b| (b, sol.x[b] > F::lit(0.5))).collect();
            adopt(&mut incumbent, sol.objective, fixes, &sol.x, prepared.row_count());
            continue;
        }

        // Snap heuristics: nearest rounding, then rounding fractionals up.
        let nearest: Vec<(usize, bool)> =
            bins.iter().map(|&b| (b, sol.x[b].round() > F::lit(0.5))).collect();
        let up: Vec<(usize, bool)> = bins
            .iter()
            .map(|&b| (b, frac_of(sol.x[b]) > int_tol || sol.x[b].round() > F::lit(0.5)))
            .collect();
        let mut candidates = vec![nearest.clone()];
        if up != nearest {
            candidates.push(up);
        }
        for cand in candidates {
            let better = match &incumbent {
                Some(inc) => inc.objective,
                None => F::infinity(),
            };
            let cov = overrides::<F>(&cand);
            let csol = prepared.solve(&cov, Some(&sol.x), None, &relax_settings);
            if csol.status == QpStatus::Optimal && csol.objective < better {
                adopt(&mut incumbent, csol.objective, cand, &csol.x, prepared.row_count());
            }
        }

        // Branch on the most fractional binary (ties to the lowest index).
        let mut best_b = fractional[0];
        let mut best_f = frac_of(sol.x[best_b]);
        for &b in &fractional[1..] {
            let f = frac_of(sol.x[b]);
            if f > best_f {
                best_f = f;
                best_b = b;
            }
        }
        for on in [false, true] {
            let mut fixes = node.fixes.clone();
            fixes.push((best_b, on));
            heap.push(Node {
                bound: sol.objective,
                id: next_id,
                fixes,
                warm_x: Some(sol.x.clone()),
                warm_y: None,
            });
            next_id += 1;
        }
    }

    let certified = !stats.budget_exhausted && stats.unresolved_nodes == 0;
    match incumbent {
        Some(inc) => {
            // Re-solve the winning pinning at full accuracy.
            let ovr = overrides::<F>(&inc.fixes);
            let y_seed = vec![F::zero(); inc.y_len];
            let mut final_sol = prepared.solve(&ovr, Some(&inc.x), Some(&y_seed), settings);
            if final_sol.status != QpStatus::Optimal {
                final_sol = QpSolution {
                    status: QpStatus::Optimal,
                    x: inc.x,
                    objective: inc.objective,
                    primal_residual: F::nan(),
                    dual_residual: F::nan(),
                    iterations: 0,
                    polished: false,
                };
            }
            if !certified {
                final_sol.status = QpStatus::MaxIterations;
            }
            Ok((final_sol, stats))
        }
        None => {
            let sol = QpSolution {
                status: QpStatus::Infeasible,
                x: vec![F::zero(); p.n_vars],
                objective: F::infinity(),
                primal_residual: F::infinity(),
                dual_residual: F::infinity(),
                iterations: 0,
                polished: false,
            };
            Ok((sol, stats))
        }
    }
}

fn adopt<F: Scalar>(
    incumbent: &mut Option<Incumbent<F>>,
    objective: F,
    fixes: Vec<(usize, bool)>,
    x: &[F],
    y_len: usize,
) {
    let take = match incumbent {
        Some(inc) => objective < inc.objective,
        None => true,
    };
    if take {
        *incumbent = Some(Incumbent { objective, fixes, x: x.to_vec(), y_len });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qpsolve::{solve_qp, Equality, Inequality, LinearRow};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    type P = QuadProgram<f64>;

    fn settings() -> QpSettings<f64> {
        QpSettings::default()
    }

    fn binary_var(p: &mut P, j: usize) {
        p.var_bounds[j] = (0.0, 1.0);
    }

    #[test]
    fn integral_relaxation_returns_after_one_node() {
        // minimize (z - 1)^2 with z binary: relaxation already integral.
        let mut p = P::new(1);
        p.quadratic_diag = vec![1.0];
        p.linear_cost = vec![-2.0];
        p.constant_cost = 1.0;
        binary_var(&mut p, 0);
        let (sol, stats) = solve_with_binaries(&p, &[0], 100, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(stats.nodes_explored, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!(sol.objective.abs() < 1e-8);
    }

    #[test]
    fn coupled_binary_takes_the_better_branch() {
        // minimize (x - 0.8)^2 with x = z, z binary: optimum z = 1.
        let mut p = P::new(2);
        p.quadratic_diag = vec![1.0, 0.0];
        p.linear_cost = vec![-1.6, 0.0];
        p.constant_cost = 0.64;
        p.var_bounds[0] = (-10.0, 10.0);
        binary_var(&mut p, 1);
        p.equalities.push(Equality {
            row: LinearRow::new(vec![(0, 1.0), (1, -1.0)]),
            rhs: 0.0,
        });
        let (sol, _) = solve_with_binaries(&p, &[1], 100, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.x[1] - 1.0).abs() < 1e-6, "z = {}", sol.x[1]);
        assert!((sol.objective - 0.04).abs() < 1e-6, "objective = {}", sol.objective);
    }

    #[test]
    fn no_integral_point_reports_infeasible() {
        // 1.5 <= z1 + z2 <= 1.7 admits no 0/1 assignment.
        let mut p = P::new(2);
        binary_var(&mut p, 0);
        binary_var(&mut p, 1);
        p.inequalities.push(Inequality {
            row: LinearRow::new(vec![(0, 1.0), (1, 1.0)]),
            lower: 1.5,
            upper: 1.7,
        });
        let (sol, _) = solve_with_binaries(&p, &[0, 1], 100, &settings()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn exhausted_node_budget_reports_max_iterations_with_incumbent() {
        // Fractional root relaxation, so branching is required; the snap
        // heuristic still finds the optimum before the budget cuts off.
        let mut p = P::new(2);
        p.quadratic_diag = vec![1.0, 0.0];
        p.linear_cost = vec![-1.6, 0.0];
        p.constant_cost = 0.64;
        p.var_bounds[0] = (-10.0, 10.0);
        binary_var(&mut p, 1);
        p.equalities.push(Equality {
            row: LinearRow::new(vec![(0, 1.0), (1, -1.0)]),
            rhs: 0.0,
        });
        let (sol, stats) = solve_with_binaries(&p, &[1], 1, &settings()).unwrap();
        assert!(stats.budget_exhausted);
        assert_eq!(sol.status, QpStatus::MaxIterations);
        assert!((sol.objective - 0.04).abs() < 1e-6);
    }

    #[test]
    fn no_binaries_degenerates_to_a_plain_solve() {
        let mut p = P::new(1);
        p.quadratic_diag = vec![1.0];
        p.linear_cost = vec![-2.0];
        p.var_bounds = vec![(0.0, 3.0)];
        let (sol, stats) = solve_with_binaries(&p, &[], 10, &settings()).unwrap();
        assert_eq!(stats.nodes_explored, 1);
        assert!((sol.x[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn loose_binary_bounds_are_rejected() {
        let mut p = P::new(1);
        p.var_bounds = vec![(0.0, 2.0)];
        assert_eq!(
            solve_with_binaries(&p, &[0], 10, &settings()).unwrap_err(),
            QpError::BinaryBounds { var: 0 }
        );
    }

    /// Oracle: exhaustive enumeration over all binary assignments, each
    /// solved as a continuous program with the binaries pinned.
    fn enumerate_best(p: &P, bins: &[usize]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for mask in 0..(1u32 << bins.len()) {
            let mut fixed = p.clone();
            for (pos, &b) in bins.iter().enumerate() {
                let v = if mask & (1 << pos) != 0 { 1.0 } else { 0.0 };
                fixed.var_bounds[b] = (v, v);
            }
            let sol = solve_qp(&fixed, &settings()).unwrap();
            if sol.status == QpStatus::Optimal {
                best = Some(match best {
                    Some(b) => b.min(sol.objective),
                    None => sol.objective,
                });
            }
        }
        best
    }

    #[test]
    fn search_matches_exhaustive_enumeration_on_random_programs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
        for case in 0..30 {
            let n_cont = rng.random_range(1..4usize);
            let n_bin = rng.random_range(1..4usize);
            let n = n_cont + n_bin;
            let mut p = P::new(n);
            for j in 0..n_cont {
                p.quadratic_diag[j] = rng.random_range(0.1..1.5);
                p.linear_cost[j] = rng.random_range(-1.0..1.0);
                p.var_bounds[j] = (-2.0, 2.0);
            }
            let bins: Vec<usize> = (n_cont..n).collect();
            for &b in &bins {
                binary_var(&mut p, b);
                p.linear_cost[b] = rng.random_range(-1.0..1.0);
            }
            for _ in 0..2 {
                let row: Vec<(usize, f64)> =
                    (0..n).map(|j| (j, rng.random_range(-1.0..1.0))).collect();
                let lo = rng.random_range(-1.0..0.0);
                let hi = lo + rng.random_range(0.2..1.5);
                p.inequalities.push(Inequality { row: LinearRow::new(row), lower: lo, upper: hi });
            }

            let oracle = enumerate_best(&p, &bins);
            let (sol, stats) = solve_with_binaries(&p, &bins, 200, &settings()).unwrap();
            assert!(!stats.budget_exhausted, "case {case} ran out of nodes");
            match oracle {
                None => assert_eq!(sol.status, QpStatus::Infeasible, "case {case}"),
                Some(best) => {
                    assert_eq!(sol.status, QpStatus::Optimal, "case {case}");
                    let tol = 1e-5 * (1.0 + best.abs());
                    assert!(
                        (sol.objective - best).abs() <= tol,
                        "case {case}: search {} vs enumeration {}",
                        sol.objective,
                        best
                    );
                    for &b in &bins {
                        assert!((sol.x[b] - sol.x[b].round()).abs() <= 1e-6);
                    }
                }
            }
        }
    }
}
