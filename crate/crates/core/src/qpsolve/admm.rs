//! Operator-splitting core behind [`super::solve_qp`].
//!
//! The program is rewritten as
//!
//! ```text
//! minimize  x' diag(p2/2) x / ... (p2 = 2 * curvature)  + q'x
//! subject to  l <= A x <= u
//! ```
//!
//! where `A` stacks the equality rows (l = u), the inequality rows, and one
//! identity row per variable bound. Each iteration solves a ridge-regularized
//! normal-equation system through a cached dense Cholesky factorization,
//! projects onto the bound box, and takes an over-relaxed dual step.
//! Residual checks, infeasibility certificates, and step-size adaptation run
//! on a fixed schedule so the whole solve is deterministic.

use crate::scalar::Scalar;

use super::{QpError, QpSettings, QpSolution, QpStatus, QuadProgram};

/// Step-size multiplier on equality-type rows (including pinned bounds).
const EQ_RHO_FACTOR: f64 = 1e3;
/// Step-size multiplier on rows without any finite bound.
const LOOSE_RHO_FACTOR: f64 = 1e-6;
/// Admissible range of the base step-size parameter.
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e3;
/// Norms below this guard are treated as zero in ratios.
const DIV_GUARD: f64 = 1e-10;
/// Per-round equilibration factors are clamped to this range.
const SCALE_MIN: f64 = 1e-4;
const SCALE_MAX: f64 = 1e4;
/// Step-size adaptation triggers outside [1/threshold, threshold].
const RHO_ADAPT_THRESHOLD: f64 = 5.0;

/// Dense row-major matrix; all solver linear algebra is dense because the
/// dispatch programs stay small (a few hundred rows).
pub(super) struct DenseMat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> DenseMat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![F::zero(); rows * cols] }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `out = M x`
    pub fn matvec(&self, x: &[F], out: &mut [F]) {
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = F::zero();
            for (a, v) in row.iter().zip(x) {
                acc += *a * *v;
            }
            out[i] = acc;
        }
    }

    /// `out = M' y`
    pub fn tr_matvec(&self, y: &[F], out: &mut [F]) {
        for o in out.iter_mut() {
            *o = F::zero();
        }
        for i in 0..self.rows {
            let yi = y[i];
            if yi == F::zero() {
                continue;
            }
            for (a, o) in self.row(i).iter().zip(out.iter_mut()) {
                *o += *a * yi;
            }
        }
    }
}

/// In-place lower Cholesky factorization; fails on loss of positive
/// definiteness.
fn cholesky_factor<F: Scalar>(mat: &mut DenseMat<F>) -> Result<(), ()> {
    let n = mat.rows;
    for j in 0..n {
        let mut diag = mat.data[j * n + j];
        for k in 0..j {
            let v = mat.data[j * n + k];
            diag -= v * v;
        }
        if diag <= F::zero() {
            return Err(());
        }
        let ljj = diag.sqrt();
        mat.data[j * n + j] = ljj;
        for i in (j + 1)..n {
            let mut v = mat.data[i * n + j];
            for k in 0..j {
                v -= mat.data[i * n + k] * mat.data[j * n + k];
            }
            mat.data[i * n + j] = v / ljj;
        }
    }
    Ok(())
}

/// Solves `L L' x = b` in place given the lower factor.
fn cholesky_solve<F: Scalar>(l: &DenseMat<F>, b: &mut [F]) {
    let n = l.rows;
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l.data[i * n + k] * b[k];
        }
        b[i] = v / l.data[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l.data[k * n + i] * b[k];
        }
        b[i] = v / l.data[i * n + i];
    }
}

fn inf_norm<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |acc, &x| acc.max(x.abs()))
}

fn clamp<F: Scalar>(v: F, lo: F, hi: F) -> F {
    v.max(lo).min(hi)
}

/// Row classes fix the per-row step-size multiplier for the whole solve;
/// they are derived from the base bounds, never from per-solve overrides.
#[derive(Clone, Copy, PartialEq)]
enum RowClass {
    Equality,
    Inequality,
    Loose,
}

impl RowClass {
    fn multiplier<F: Scalar>(self) -> F {
        match self {
            RowClass::Equality => F::lit(EQ_RHO_FACTOR),
            RowClass::Inequality => F::one(),
            RowClass::Loose => F::lit(LOOSE_RHO_FACTOR),
        }
    }
}

/// Problem data assembled, equilibrated, and cached for one or more solves.
/// Re-solving with different variable-bound overrides (as branch-and-bound
/// does) reuses the scaling and the Gram matrix.
pub(super) struct Prepared<F: Scalar> {
    n: usize,
    m: usize,
    /// Rows `0..m_rows` are equality+inequality rows; `m_rows..m` are the
    /// identity rows carrying variable bounds.
    m_rows: usize,
    // Unscaled data.
    quad_diag: Vec<F>,
    lin: Vec<F>,
    constant: F,
    p2: Vec<F>,
    a: DenseMat<F>,
    l: Vec<F>,
    u: Vec<F>,
    // Equilibrated data: a_s = E A D, p2_s = c D P2 D, q_s = c D q.
    a_s: DenseMat<F>,
    p2_s: Vec<F>,
    q_s: Vec<F>,
    d_scale: Vec<F>,
    e_scale: Vec<F>,
    c_scale: F,
    row_class: Vec<RowClass>,
    /// `sum_i multiplier_i * a_s_row_i a_s_row_i'`; the normal matrix is
    /// `diag(p2_s) + sigma I + rho * gram`.
    gram: DenseMat<F>,
}

impl<F: Scalar> Prepared<F> {
    pub fn new(p: &QuadProgram<F>, settings: &QpSettings<F>) -> Result<Self, QpError> {
        p.validate()?;
        let n = p.n_vars;
        let m_rows = p.equalities.len() + p.inequalities.len();
        let m = m_rows + n;

        let mut a = DenseMat::zeros(m, n);
        let mut l = vec![F::neg_infinity(); m];
        let mut u = vec![F::infinity(); m];
        let mut row_class = vec![RowClass::Inequality; m];

        let mut r = 0;
        for eq in &p.equalities {
            for &(j, v) in &eq.row.coeffs {
                a.row_mut(r)[j] += v;
            }
            l[r] = eq.rhs;
            u[r] = eq.rhs;
            row_class[r] = RowClass::Equality;
            r += 1;
        }
        for ineq in &p.inequalities {
            for &(j, v) in &ineq.row.coeffs {
                a.row_mut(r)[j] += v;
            }
            l[r] = ineq.lower;
            u[r] = ineq.upper;
            row_class[r] = if ineq.lower == ineq.upper && ineq.lower.is_finite() {
                RowClass::Equality
            } else if !ineq.lower.is_finite() && !ineq.upper.is_finite() {
                RowClass::Loose
            } else {
                RowClass::Inequality
            };
            r += 1;
        }
        for j in 0..n {
            a.row_mut(r)[j] = F::one();
            let (lo, hi) = p.var_bounds[j];
            l[r] = lo;
            u[r] = hi;
            row_class[r] = if lo == hi && lo.is_finite() {
                RowClass::Equality
            } else if !lo.is_finite() && !hi.is_finite() {
                RowClass::Loose
            } else {
                RowClass::Inequality
            };
            r += 1;
        }

        let p2: Vec<F> = p.quadratic_diag.iter().map(|&d| d + d).collect();

        // Diagonal equilibration of [[P2, A'], [A, 0]] with cost scaling.
        let mut a_s = DenseMat::zeros(m, n);
        a_s.data.copy_from_slice(&a.data);
        let mut p2_s = p2.clone();
        let mut q_s = p.linear_cost.clone();
        let mut d_scale = vec![F::one(); n];
        let mut e_scale = vec![F::one(); m];
        let mut c_scale = F::one();

        let tiny = F::lit(1e-12);
        let scale_of = |norm: F| -> F {
            if norm < tiny {
                F::one()
            } else {
                clamp(F::one() / norm.sqrt(), F::lit(SCALE_MIN), F::lit(SCALE_MAX))
            }
        };
        for _ in 0..settings.scaling_iterations {
            let mut dj = vec![F::one(); n];
            for (j, dj_j) in dj.iter_mut().enumerate() {
                let mut norm = p2_s[j].abs();
                for i in 0..m {
                    norm = norm.max(a_s.row(i)[j].abs());
                }
                *dj_j = scale_of(norm);
            }
            let mut ei = vec![F::one(); m];
            for (i, ei_i) in ei.iter_mut().enumerate() {
                let norm = inf_norm(a_s.row(i));
                *ei_i = scale_of(norm);
            }
            for j in 0..n {
                d_scale[j] *= dj[j];
                p2_s[j] *= dj[j] * dj[j];
                q_s[j] *= dj[j];
            }
            for i in 0..m {
                e_scale[i] *= ei[i];
                let row = a_s.row_mut(i);
                for (j, entry) in row.iter_mut().enumerate() {
                    *entry *= ei[i] * dj[j];
                }
            }
            // Cost normalization keeps the objective scale near one.
            let mean_p: F = p2_s.iter().map(|v| v.abs()).sum::<F>() / F::lit(n.max(1) as f64);
            let denom = mean_p.max(inf_norm(&q_s));
            if denom > tiny {
                let gamma = clamp(F::one() / denom, F::lit(SCALE_MIN), F::lit(SCALE_MAX));
                c_scale *= gamma;
                for v in p2_s.iter_mut() {
                    *v *= gamma;
                }
                for v in q_s.iter_mut() {
                    *v *= gamma;
                }
            }
        }

        // Class-weighted Gram matrix of the scaled rows.
        let mut gram = DenseMat::zeros(n, n);
        for i in 0..m {
            let w: F = row_class[i].multiplier();
            let row = a_s.row(i);
            for jj in 0..n {
                let v = row[jj];
                if v == F::zero() {
                    continue;
                }
                let wv = w * v;
                for kk in jj..n {
                    gram.data[jj * n + kk] += wv * row[kk];
                }
            }
        }
        for jj in 0..n {
            for kk in (jj + 1)..n {
                gram.data[kk * n + jj] = gram.data[jj * n + kk];
            }
        }

        Ok(Self {
            n,
            m,
            m_rows,
            quad_diag: p.quadratic_diag.clone(),
            lin: p.linear_cost.clone(),
            constant: p.constant_cost,
            p2,
            a,
            l,
            u,
            a_s,
            p2_s,
            q_s,
            d_scale,
            e_scale,
            c_scale,
            row_class,
            gram,
        })
    }

    pub fn row_count(&self) -> usize {
        self.m
    }

    fn objective(&self, x: &[F]) -> F {
        let quad: F = self.quad_diag.iter().zip(x).map(|(&d, &v)| d * v * v).sum();
        let lin: F = self.lin.iter().zip(x).map(|(&c, &v)| c * v).sum();
        quad + lin + self.constant
    }

    fn build_factor(&self, rho_bar: F, sigma: F) -> Option<DenseMat<F>> {
        let n = self.n;
        let mut k = DenseMat::zeros(n, n);
        for idx in 0..n * n {
            k.data[idx] = rho_bar * self.gram.data[idx];
        }
        for j in 0..n {
            k.data[j * n + j] += self.p2_s[j] + sigma;
        }
        cholesky_factor(&mut k).ok().map(|()| k)
    }

    /// Solves with per-variable bound overrides `(var, lo, hi)` replacing the
    /// base bounds, optionally warm-starting from an unscaled primal point
    /// and row multipliers.
    pub fn solve(
        &self,
        overrides: &[(usize, F, F)],
        x0: Option<&[F]>,
        y0: Option<&[F]>,
        settings: &QpSettings<F>,
    ) -> QpSolution<F> {
        let n = self.n;
        let m = self.m;

        // Unscaled bounds with overrides applied.
        let mut l_u = self.l.clone();
        let mut u_u = self.u.clone();
        for &(var, lo, hi) in overrides {
            l_u[self.m_rows + var] = lo;
            u_u[self.m_rows + var] = hi;
        }
        // Contradictory bounds short-circuit as a trivial certificate.
        for i in 0..m {
            if l_u[i] > u_u[i] {
                return QpSolution {
                    status: QpStatus::Infeasible,
                    x: vec![F::zero(); n],
                    objective: F::infinity(),
                    primal_residual: F::infinity(),
                    dual_residual: F::infinity(),
                    iterations: 0,
                    polished: false,
                };
            }
        }
        if n == 0 {
            return QpSolution {
                status: QpStatus::Optimal,
                x: Vec::new(),
                objective: self.constant,
                primal_residual: F::zero(),
                dual_residual: F::zero(),
                iterations: 0,
                polished: false,
            };
        }

        // Scaled bounds.
        let mut l_s = vec![F::zero(); m];
        let mut u_s = vec![F::zero(); m];
        for i in 0..m {
            l_s[i] = self.e_scale[i] * l_u[i];
            u_s[i] = self.e_scale[i] * u_u[i];
        }

        let sigma = settings.sigma;
        let alpha = settings.over_relaxation;
        let one_m_alpha = F::one() - alpha;
        let mut rho_bar = clamp(settings.rho, F::lit(RHO_MIN), F::lit(RHO_MAX));
        let mut factor = match self.build_factor(rho_bar, sigma) {
            Some(f) => f,
            None => {
                // The normal matrix is positive definite by construction;
                // a failure here means catastrophic conditioning.
                return QpSolution {
                    status: QpStatus::MaxIterations,
                    x: vec![F::zero(); n],
                    objective: self.constant,
                    primal_residual: F::infinity(),
                    dual_residual: F::infinity(),
                    iterations: 0,
                    polished: false,
                };
            }
        };
        let mut rho = vec![F::zero(); m];
        let set_rho = |rho: &mut [F], rho_bar: F| {
            for (i, r) in rho.iter_mut().enumerate() {
                *r = rho_bar * self.row_class[i].multiplier::<F>();
            }
        };
        set_rho(&mut rho, rho_bar);

        // Scaled iterates.
        let mut x: Vec<F> = match x0 {
            Some(x0) => (0..n).map(|j| x0[j] / self.d_scale[j]).collect(),
            None => vec![F::zero(); n],
        };
        let mut y: Vec<F> = match y0 {
            Some(y0) => (0..m).map(|i| self.c_scale * y0[i] / self.e_scale[i]).collect(),
            None => vec![F::zero(); m],
        };
        let mut z = vec![F::zero(); m];
        self.a_s.matvec(&x, &mut z);
        for i in 0..m {
            z[i] = clamp(z[i], l_s[i], u_s[i]);
        }

        let mut xt = vec![F::zero(); n];
        let mut zt = vec![F::zero(); m];
        let mut w = vec![F::zero(); m];
        let mut rhs = vec![F::zero(); n];
        let mut delta_x = vec![F::zero(); n];
        let mut delta_y = vec![F::zero(); m];
        let mut scratch_m = vec![F::zero(); m];
        let mut scratch_n = vec![F::zero(); n];

        let div_guard = F::lit(DIV_GUARD);
        let mut status = QpStatus::MaxIterations;
        let mut iterations = settings.max_iterations;
        let mut r_prim = F::infinity();
        let mut r_dual = F::infinity();

        for iter in 1..=settings.max_iterations {
            // Linear-system step.
            for i in 0..m {
                w[i] = rho[i] * z[i] - y[i];
            }
            self.a_s.tr_matvec(&w, &mut rhs);
            for j in 0..n {
                rhs[j] += sigma * x[j] - self.q_s[j];
            }
            xt.copy_from_slice(&rhs);
            cholesky_solve(&factor, &mut xt);
            self.a_s.matvec(&xt, &mut zt);

            // Over-relaxed updates.
            for j in 0..n {
                let next = alpha * xt[j] + one_m_alpha * x[j];
                delta_x[j] = next - x[j];
                x[j] = next;
            }
            for i in 0..m {
                let v = alpha * zt[i] + one_m_alpha * z[i] + y[i] / rho[i];
                let z_next = clamp(v, l_s[i], u_s[i]);
                let y_next = rho[i] * (v - z_next);
                delta_y[i] = y_next - y[i];
                z[i] = z_next;
                y[i] = y_next;
            }

            let checking = iter % settings.check_interval == 0 || iter == settings.max_iterations;
            if !checking {
                continue;
            }

            // Unscaled residuals.
            self.a_s.matvec(&x, &mut scratch_m); // scaled A x
            let mut norm_ax = F::zero();
            let mut norm_z = F::zero();
            let mut rp = F::zero();
            for i in 0..m {
                let ax_u = scratch_m[i] / self.e_scale[i];
                let z_u = z[i] / self.e_scale[i];
                norm_ax = norm_ax.max(ax_u.abs());
                norm_z = norm_z.max(z_u.abs());
                rp = rp.max((ax_u - z_u).abs());
            }
            self.a_s.tr_matvec(&y, &mut scratch_n); // scaled A'y
            let mut norm_px = F::zero();
            let mut norm_aty = F::zero();
            let mut norm_q = F::zero();
            let mut rd = F::zero();
            for j in 0..n {
                let x_u = x[j] * self.d_scale[j];
                let px = self.p2[j] * x_u;
                let aty = scratch_n[j] / (self.d_scale[j] * self.c_scale);
                let q = self.lin[j];
                norm_px = norm_px.max(px.abs());
                norm_aty = norm_aty.max(aty.abs());
                norm_q = norm_q.max(q.abs());
                rd = rd.max((px + q + aty).abs());
            }
            r_prim = rp;
            r_dual = rd;

            let eps_prim = settings.eps_abs + settings.eps_rel * norm_ax.max(norm_z);
            let eps_dual = settings.eps_abs + settings.eps_rel * norm_px.max(norm_aty).max(norm_q);
            if r_prim <= eps_prim && r_dual <= eps_dual {
                status = QpStatus::Optimal;
                iterations = iter;
                break;
            }

            // Primal infeasibility certificate from the dual increment.
            let eps_inf = settings.eps_infeasible;
            let mut norm_dy = F::zero();
            for i in 0..m {
                let dy_u = self.e_scale[i] * delta_y[i] / self.c_scale;
                scratch_m[i] = dy_u;
                norm_dy = norm_dy.max(dy_u.abs());
            }
            if norm_dy > div_guard {
                let mut support = F::zero();
                let mut support_ok = true;
                for i in 0..m {
                    let dy = scratch_m[i];
                    if dy > F::zero() {
                        if u_u[i].is_finite() {
                            support += u_u[i] * dy;
                        } else if dy > eps_inf * norm_dy {
                            support_ok = false;
                            break;
                        }
                    } else if dy < F::zero() {
                        if l_u[i].is_finite() {
                            support += l_u[i] * dy;
                        } else if dy < -(eps_inf * norm_dy) {
                            support_ok = false;
                            break;
                        }
                    }
                }
                if support_ok && support <= -(eps_inf * norm_dy) {
                    // Need scaled delta_y for A' delta_y: rebuild in place.
                    for i in 0..m {
                        scratch_m[i] = delta_y[i];
                    }
                    self.a_s.tr_matvec(&scratch_m, &mut scratch_n);
                    let mut norm_at_dy = F::zero();
                    for j in 0..n {
                        let v = scratch_n[j] / (self.d_scale[j] * self.c_scale);
                        norm_at_dy = norm_at_dy.max(v.abs());
                    }
                    if norm_at_dy <= eps_inf * norm_dy {
                        status = QpStatus::Infeasible;
                        iterations = iter;
                        break;
                    }
                }
            }

            // Dual infeasibility certificate from the primal increment
            // (an unbounded descent direction).
            let mut norm_dx = F::zero();
            for j in 0..n {
                let dx_u = self.d_scale[j] * delta_x[j];
                scratch_n[j] = dx_u;
                norm_dx = norm_dx.max(dx_u.abs());
            }
            if norm_dx > div_guard {
                let q_dx: F = self.lin.iter().zip(&scratch_n).map(|(&q, &v)| q * v).sum();
                let p_dx_ok =
                    (0..n).all(|j| (self.p2[j] * scratch_n[j]).abs() <= eps_inf * norm_dx);
                if p_dx_ok && q_dx <= -(eps_inf * norm_dx) {
                    // A (unscaled) times the direction, via scaled pieces.
                    for j in 0..n {
                        scratch_n[j] = delta_x[j];
                    }
                    self.a_s.matvec(&scratch_n, &mut scratch_m);
                    let mut recession_ok = true;
                    for i in 0..m {
                        let adx = scratch_m[i] / self.e_scale[i];
                        let lo_fin = l_u[i].is_finite();
                        let hi_fin = u_u[i].is_finite();
                        let tol = eps_inf * norm_dx;
                        let ok = match (lo_fin, hi_fin) {
                            (true, true) => adx.abs() <= tol,
                            (false, true) => adx <= tol,
                            (true, false) => adx >= -tol,
                            (false, false) => true,
                        };
                        if !ok {
                            recession_ok = false;
                            break;
                        }
                    }
                    if recession_ok {
                        status = QpStatus::Infeasible;
                        iterations = iter;
                        break;
                    }
                }
            }

            // Deterministic step-size adaptation.
            if settings.adaptive_rho
                && settings.rho_adapt_interval > 0
                && iter % settings.rho_adapt_interval == 0
            {
                let prim_rel = r_prim / norm_ax.max(norm_z).max(div_guard);
                let dual_rel = r_dual / norm_px.max(norm_aty).max(norm_q).max(div_guard);
                let ratio = (prim_rel / dual_rel.max(div_guard)).sqrt();
                let thresh = F::lit(RHO_ADAPT_THRESHOLD);
                if ratio > thresh || ratio < F::one() / thresh {
                    let new_rho = clamp(rho_bar * ratio, F::lit(RHO_MIN), F::lit(RHO_MAX));
                    if new_rho != rho_bar {
                        rho_bar = new_rho;
                        if let Some(f) = self.build_factor(rho_bar, sigma) {
                            factor = f;
                            set_rho(&mut rho, rho_bar);
                        }
                    }
                }
            }
        }

        // Unscale the iterates.
        let mut x_u: Vec<F> = (0..n).map(|j| x[j] * self.d_scale[j]).collect();
        let mut y_u: Vec<F> = (0..m).map(|i| self.e_scale[i] * y[i] / self.c_scale).collect();

        let mut polished = false;
        if status == QpStatus::Optimal {
            if settings.polish {
                if let Some((px, py)) = self.polish(&x_u, &y_u, &l_u, &u_u, r_prim, r_dual, settings) {
                    x_u = px;
                    y_u = py;
                    polished = true;
                }
            }
            // Clamp variables into their (overridden) bounds; after a
            // successful refinement this is a no-op at machine precision.
            for j in 0..n {
                x_u[j] = clamp(x_u[j], l_u[self.m_rows + j], u_u[self.m_rows + j]);
            }
            let (rp, rd) = self.residuals(&x_u, &y_u, &l_u, &u_u);
            r_prim = rp;
            r_dual = rd;
        }

        QpSolution {
            status,
            objective: self.objective(&x_u),
            x: x_u,
            primal_residual: r_prim,
            dual_residual: r_dual,
            iterations,
            polished,
        }
    }

    /// Unscaled primal/dual residuals at `(x, y)`.
    fn residuals(&self, x: &[F], y: &[F], l_u: &[F], u_u: &[F]) -> (F, F) {
        let mut ax = vec![F::zero(); self.m];
        self.a.matvec(x, &mut ax);
        let mut rp = F::zero();
        for i in 0..self.m {
            let z = clamp(ax[i], l_u[i], u_u[i]);
            rp = rp.max((ax[i] - z).abs());
        }
        let mut aty = vec![F::zero(); self.n];
        self.a.tr_matvec(y, &mut aty);
        let mut rd = F::zero();
        for j in 0..self.n {
            rd = rd.max((self.p2[j] * x[j] + self.lin[j] + aty[j]).abs());
        }
        (rp, rd)
    }

    /// Active-set refinement: pins rows that look active, solves the reduced
    /// problem proximally centered on the splitting iterate, and accepts the
    /// result only if neither residual degrades. A row counts as active when
    /// its multiplier has a telling sign or when the iterate already sits on
    /// the bound; the second test catches degenerate rows that are active
    /// with a zero multiplier. The proximal center matters because these
    /// programs have flat optimal faces (zero-curvature variables with
    /// balanced costs): along such faces the reduced KKT system is singular,
    /// and anchoring it to the iterate picks the face point next to the
    /// nearly converged solution instead of diverging along the cost
    /// gradient. All linear algebra runs on the equilibrated data: the
    /// active set routinely contains redundant rows, leaving the Schur
    /// complement with eigenvalues at exactly the ridge value, and only the
    /// bounded dynamic range of the scaled matrix keeps those tiny pivots
    /// numerically positive.
    fn polish(
        &self,
        x_u: &[F],
        y_u: &[F],
        l_u: &[F],
        u_u: &[F],
        r_prim: F,
        r_dual: F,
        settings: &QpSettings<F>,
    ) -> Option<(Vec<F>, Vec<F>)> {
        let n = self.n;
        let m = self.m;

        let mut ax = vec![F::zero(); m];
        self.a.matvec(x_u, &mut ax);
        let slack_tol = r_prim + settings.eps_abs;

        let mut active: Vec<usize> = Vec::new();
        let mut h: Vec<F> = Vec::new();
        for i in 0..m {
            let near_lower = l_u[i].is_finite()
                && ax[i] - l_u[i] <= slack_tol + settings.eps_rel * l_u[i].abs();
            let near_upper = u_u[i].is_finite()
                && u_u[i] - ax[i] <= slack_tol + settings.eps_rel * u_u[i].abs();
            if l_u[i] == u_u[i] && l_u[i].is_finite() {
                active.push(i);
                h.push(self.e_scale[i] * l_u[i]);
            } else if (y_u[i] < F::zero() || (y_u[i] == F::zero() && near_lower))
                && l_u[i].is_finite()
            {
                active.push(i);
                h.push(self.e_scale[i] * l_u[i]);
            } else if (y_u[i] > F::zero() || (y_u[i] == F::zero() && near_upper))
                && u_u[i].is_finite()
            {
                active.push(i);
                h.push(self.e_scale[i] * u_u[i]);
            }
        }
        let na = active.len();
        if na == 0 {
            return None;
        }

        // Proximal center in the equilibrated geometry.
        let x0_s: Vec<F> = (0..n).map(|j| x_u[j] / self.d_scale[j]).collect();

        // Schur complement S = delta I + G inv(P2_s + delta I) G' over the
        // active rows of the scaled matrix; delta doubles as the proximal
        // weight. Should the factorization still break down, retry with an
        // escalated ridge; the acceptance test at the end guards against the
        // extra regularization error.
        let mut delta = settings.polish_regularization;
        let mut boosts = 0usize;
        let mut factored: Option<(DenseMat<F>, Vec<F>)> = None;
        while boosts < 6 {
            let inv_dp: Vec<F> =
                self.p2_s.iter().map(|&v| F::one() / (v + delta)).collect();
            let mut s = DenseMat::zeros(na, na);
            for (r, &ri) in active.iter().enumerate() {
                let row_r = self.a_s.row(ri);
                for (c, &ci) in active.iter().enumerate().skip(r) {
                    let row_c = self.a_s.row(ci);
                    let mut acc = F::zero();
                    for j in 0..n {
                        acc += row_r[j] * inv_dp[j] * row_c[j];
                    }
                    if r == c {
                        acc += delta;
                    }
                    s.data[r * na + c] = acc;
                    s.data[c * na + r] = acc;
                }
            }
            if cholesky_factor(&mut s).is_ok() {
                factored = Some((s, inv_dp));
                break;
            }
            delta = delta * F::lit(100.0);
            boosts += 1;
        }
        let (s, inv_dp) = factored?;
        let sweeps = settings.refinement_steps + boosts;

        // Solve the proximal KKT system by iterative refinement; the ridge in
        // the factorization matches the proximal term exactly, so each sweep
        // only cleans up roundoff and the inexact Schur solve.
        let mut xhat = vec![F::zero(); n];
        let mut nu = vec![F::zero(); na];
        let mut r1 = vec![F::zero(); n];
        let mut r2 = vec![F::zero(); na];
        // Near-parallel active rows contract slowly under the ridge, so the
        // sweep count is residual-driven with a hard cap; the equilibrated
        // data is O(1), making the absolute threshold meaningful.
        let max_sweeps = sweeps.max(40);
        let sweep_tol = F::lit(1e-12);
        for _ in 0..=max_sweeps {
            // r1 = -q_prox - ((P2_s + delta) xhat + G' nu); r2 = h - G xhat
            for j in 0..n {
                r1[j] = delta * x0_s[j] - self.q_s[j] - (self.p2_s[j] + delta) * xhat[j];
            }
            for (r, &ri) in active.iter().enumerate() {
                let row = self.a_s.row(ri);
                let nr = nu[r];
                if nr != F::zero() {
                    for j in 0..n {
                        r1[j] -= row[j] * nr;
                    }
                }
                let mut gx = F::zero();
                for j in 0..n {
                    gx += row[j] * xhat[j];
                }
                r2[r] = h[r] - gx;
            }
            if inf_norm(&r1) <= sweep_tol && inf_norm(&r2) <= sweep_tol {
                break;
            }
            // S dnu = G inv(P2+dI) r1 - r2 ; dx = inv(P2+dI)(r1 - G' dnu)
            let mut rhs = vec![F::zero(); na];
            for (r, &ri) in active.iter().enumerate() {
                let row = self.a_s.row(ri);
                let mut acc = F::zero();
                for j in 0..n {
                    acc += row[j] * inv_dp[j] * r1[j];
                }
                rhs[r] = acc - r2[r];
            }
            cholesky_solve(&s, &mut rhs);
            let dnu = rhs;
            let mut gt_dnu = vec![F::zero(); n];
            for (r, &ri) in active.iter().enumerate() {
                let row = self.a_s.row(ri);
                let v = dnu[r];
                if v != F::zero() {
                    for j in 0..n {
                        gt_dnu[j] += row[j] * v;
                    }
                }
            }
            for j in 0..n {
                xhat[j] += inv_dp[j] * (r1[j] - gt_dnu[j]);
            }
            for (r, v) in dnu.iter().enumerate() {
                nu[r] += *v;
            }
        }

        // Map back to the original geometry before judging the result.
        let mut xout = vec![F::zero(); n];
        for j in 0..n {
            xout[j] = self.d_scale[j] * xhat[j];
        }
        let mut yout = vec![F::zero(); m];
        for (r, &ri) in active.iter().enumerate() {
            yout[ri] = self.e_scale[ri] * nu[r] / self.c_scale;
        }
        let (rp, rd) = self.residuals(&xout, &yout, l_u, u_u);
        if rp <= r_prim && rd <= r_dual {
            Some((xout, yout))
        } else {
            None
        }
    }
}
