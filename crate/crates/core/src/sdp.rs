//! Primal-dual interior-point solver for the structured LMIs built by
//! [`crate::gramians`].
//!
//! The decision variables are symmetric matrices `P_0 .. P_k` of a common
//! order. Every cone is an affine matrix inequality
//!
//! ```text
//! S = C − Σ coef · (F P_var + P_var Fᵀ) ⪰ 0
//! ```
//!
//! and the solver maximises `Σ ⟨B_var, P_var⟩` over the cones. It is an
//! infeasible-start method with Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector step. The Schur complement is assembled from
//! Kronecker-structured blocks rather than from explicit constraint matrices.

use faer::{MatRef, Side};
use faer::linalg::solvers::Solve;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// One contribution `coef · L_{bases[base]}(P_var)` to a cone.
#[derive(Clone, Debug)]
pub struct SdpTerm {
    pub var: usize,
    pub base: usize,
    pub coef: f64,
}

#[derive(Clone, Debug)]
pub struct SdpCone {
    pub constant: DMatrix<f64>,
    pub bases: Vec<DMatrix<f64>>,
    pub terms: Vec<SdpTerm>,
}

#[derive(Clone, Debug)]
pub struct SdpProblem {
    /// Order of every variable and every cone.
    pub order: usize,
    pub n_vars: usize,
    /// Objective weights; the solver maximises `Σ ⟨objective[v], P_v⟩`.
    pub objective: Vec<DMatrix<f64>>,
    pub cones: Vec<SdpCone>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpMode {
    Optimize,
    /// Stop at the first iterate whose slacks are all positive definite.
    Feasibility,
}

#[derive(Clone, Debug)]
pub struct SdpOptions {
    pub mode: SdpMode,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub step_fraction: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            mode: SdpMode::Optimize,
            max_iterations: 80,
            tolerance: 1e-8,
            step_fraction: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Feasible,
    Infeasible,
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub variables: Vec<DMatrix<f64>>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Smallest eigenvalue over all true slacks `C − Σ coef · L_F(P)`.
    pub min_slack_eigenvalue: f64,
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Coordinates of `⟨E_rs, M⟩` for the basis `E_rs = e_r e_sᵀ + e_s e_rᵀ` (`E_rr = e_r e_rᵀ`).
fn svec_dual(m: &DMatrix<f64>, out: &mut [f64], scale: f64) {
    let n = m.nrows();
    let mut k = 0;
    for s in 0..n {
        for r in 0..s {
            out[k] += scale * (m[(r, s)] + m[(s, r)]);
            k += 1;
        }
        out[k] += scale * m[(s, s)];
        k += 1;
    }
}

/// `Σ y_rs E_rs`.
fn smat(y: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for s in 0..n {
        for r in 0..=s {
            m[(r, s)] = y[k];
            m[(s, r)] = y[k];
            k += 1;
        }
    }
    m
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn lyap_op(f: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let fp = f * p;
    &fp + fp.transpose()
}

struct Scaling {
    w: DMatrix<f64>,
    g: DMatrix<f64>,
    g_inv: DMatrix<f64>,
    d: DVector<f64>,
}

impl SdpProblem {
    fn validate(&self) -> Result<()> {
        let n = self.order;
        if self.objective.len() != self.n_vars {
            return Err(Error::Dimension("one objective matrix per variable expected".into()));
        }
        if self.objective.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::Dimension("objective matrix has wrong order".into()));
        }
        for cone in &self.cones {
            if cone.constant.shape() != (n, n) || cone.bases.iter().any(|f| f.shape() != (n, n)) {
                return Err(Error::Dimension("cone data has wrong order".into()));
            }
            if cone
                .terms
                .iter()
                .any(|t| t.var >= self.n_vars || t.base >= cone.bases.len())
            {
                return Err(Error::Dimension("cone term references a missing variable".into()));
            }
        }
        Ok(())
    }

    fn n_y(&self) -> usize {
        self.n_vars * svec_len(self.order)
    }

    /// `Σ_i y_i A_{k,i}` for every cone.
    fn adjoint(&self, y: &[f64]) -> Vec<DMatrix<f64>> {
        let n = self.order;
        let len = svec_len(n);
        let vars: Vec<DMatrix<f64>> = (0..self.n_vars)
            .map(|v| smat(&y[v * len..(v + 1) * len], n))
            .collect();
        self.cones
            .iter()
            .map(|cone| {
                let mut out = DMatrix::zeros(n, n);
                for (s, f) in cone.bases.iter().enumerate() {
                    let mut q = DMatrix::zeros(n, n);
                    let mut used = false;
                    for t in cone.terms.iter().filter(|t| t.base == s) {
                        q += &vars[t.var] * t.coef;
                        used = true;
                    }
                    if used {
                        out += lyap_op(f, &q);
                    }
                }
                out
            })
            .collect()
    }

    /// `(⟨A_{k,i}, X_k⟩ summed over k)_i`.
    fn forward(&self, x: &[DMatrix<f64>]) -> Vec<f64> {
        let len = svec_len(self.order);
        let mut out = vec![0.0; self.n_y()];
        for (cone, xk) in self.cones.iter().zip(x) {
            for (s, f) in cone.bases.iter().enumerate() {
                let terms: Vec<&SdpTerm> = cone.terms.iter().filter(|t| t.base == s).collect();
                if terms.is_empty() {
                    continue;
                }
                let ftx = f.transpose() * xk;
                let y = &ftx + ftx.transpose();
                for t in terms {
                    svec_dual(&y, &mut out[t.var * len..(t.var + 1) * len], t.coef);
                }
            }
        }
        out
    }

    fn objective_vector(&self) -> Vec<f64> {
        let len = svec_len(self.order);
        let mut b = vec![0.0; self.n_y()];
        for (v, m) in self.objective.iter().enumerate() {
            svec_dual(m, &mut b[v * len..(v + 1) * len], 1.0);
        }
        b
    }

    /// Lower triangle of the Schur complement `M_ij = Σ_k ⟨A_{k,i}, W_k A_{k,j} W_k⟩`,
    /// column-major.
    fn schur(&self, scalings: &[Scaling]) -> Vec<f64> {
        let n = self.order;
        let len = svec_len(n);
        let dim = self.n_y();
        let mut m = vec![0.0; dim * dim];
        let index: Vec<(usize, usize)> = (0..n).flat_map(|s| (0..=s).map(move |r| (r, s))).collect();
        let mut block = vec![0.0; len * len];
        for (cone, sc) in self.cones.iter().zip(scalings) {
            let nb = cone.bases.len();
            let mut cached: Vec<Option<Vec<f64>>> = vec![None; nb * nb];
            for t1 in &cone.terms {
                for t2 in &cone.terms {
                    if t1.var < t2.var {
                        continue;
                    }
                    let key = t1.base * nb + t2.base;
                    if cached[key].is_none() {
                        kron_block(
                            &cone.bases[t1.base],
                            &cone.bases[t2.base],
                            &sc.w,
                            &index,
                            &mut block,
                        );
                        cached[key] = Some(block.clone());
                    }
                    let g = cached[key].as_ref().expect("filled above");
                    let c = t1.coef * t2.coef;
                    let (row0, col0) = (t1.var * len, t2.var * len);
                    for j in 0..len {
                        let dst = &mut m[(col0 + j) * dim + row0..(col0 + j) * dim + row0 + len];
                        let src = &g[j * len..(j + 1) * len];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += c * s;
                        }
                    }
                }
            }
        }
        m
    }
}

/// `G[i, j] = ⟨L_F(E_i), W L_H(E_j) W⟩` over the svec basis, column-major.
fn kron_block(
    f: &DMatrix<f64>,
    h: &DMatrix<f64>,
    w: &DMatrix<f64>,
    index: &[(usize, usize)],
    out: &mut [f64],
) {
    let x = f.transpose() * w * h;
    let y = w * h;
    let z = f.transpose() * w;
    let len = index.len();
    let g = |p: usize, q: usize, r: usize, s: usize| {
        x[(p, r)] * w[(q, s)] + z[(p, r)] * y[(q, s)] + y[(p, r)] * z[(q, s)] + w[(p, r)] * x[(q, s)]
    };
    for (j, &(r, s)) in index.iter().enumerate() {
        let fj = if r == s { 0.5 } else { 1.0 };
        for (i, &(p, q)) in index.iter().enumerate() {
            let fi = if p == q { 1.0 } else { 2.0 };
            out[j * len + i] = fi * fj * (g(p, q, r, s) + g(p, q, s, r));
        }
    }
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Scaling> {
    let n = x.nrows();
    let se = SymmetricEigen::new(crate::linalg::sym(s));
    if se.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numerical("slack lost positive definiteness".into()));
    }
    let root = |p: f64| {
        let diag = DMatrix::from_diagonal(&se.eigenvalues.map(|v| v.powf(p)));
        &se.eigenvectors * diag * se.eigenvectors.transpose()
    };
    let s_half = root(0.5);
    let s_mhalf = root(-0.5);
    let mid = SymmetricEigen::new(crate::linalg::sym(&(&s_half * x * &s_half)));
    if mid.eigenvalues.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Numerical("primal iterate lost positive definiteness".into()));
    }
    let u = &mid.eigenvectors;
    let quarter = DMatrix::from_diagonal(&mid.eigenvalues.map(|v| v.powf(0.25)));
    let mquarter = DMatrix::from_diagonal(&mid.eigenvalues.map(|v| v.powf(-0.25)));
    let g = &s_mhalf * u * quarter;
    let g_inv = mquarter * u.transpose() * &s_half;
    let w = &g * g.transpose();
    let d = mid.eigenvalues.map(|v| v.sqrt());
    debug_assert_eq!(d.len(), n);
    Ok(Scaling { w, g, g_inv, d })
}

/// Largest `α ≤ 1` keeping `X + α ΔX ⪰ 0`.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let Some(chol) = x.clone().cholesky() else {
        return 0.0;
    };
    let l = chol.l();
    let Some(z) = l.solve_lower_triangular(dx) else {
        return 0.0;
    };
    let Some(z) = l.solve_lower_triangular(&z.transpose()) else {
        return 0.0;
    };
    let lmin = crate::linalg::lambda_min(&z);
    if lmin < 0.0 {
        (-1.0 / lmin).min(1.0)
    } else {
        1.0
    }
}

fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    crate::linalg::sym(m).cholesky().is_some()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct SchurFactor {
    llt: faer::linalg::solvers::Llt<f64>,
}

impl SchurFactor {
    fn new(mut m: Vec<f64>, dim: usize) -> Result<Self> {
        let max_diag = (0..dim).map(|i| m[i * dim + i].abs()).fold(0.0, f64::max);
        let mut shift = 0.0;
        for attempt in 0..4 {
            if let Ok(llt) = MatRef::from_column_major_slice(&m, dim, dim).llt(Side::Lower) {
                if attempt > 0 {
                    log::debug!("schur complement regularised by {shift:.2e}");
                }
                return Ok(Self { llt });
            }
            let next = max_diag.max(1e-300) * 1e-14 * 100f64.powi(attempt);
            for i in 0..dim {
                m[i * dim + i] += next - shift;
            }
            shift = next;
        }
        Err(Error::Numerical("Schur complement is not positive definite".into()))
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = MatRef::from_column_major_slice(rhs, rhs.len(), 1);
        let x = self.llt.solve(b);
        (0..rhs.len()).map(|i| x[(i, 0)]).collect()
    }
}

fn initial_scale(problem: &SdpProblem, b: &[f64]) -> (f64, f64) {
    let n = problem.order as f64;
    let b_inf = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let xi = 10f64.max(n.sqrt()) * (1.0 + b_inf);
    let mut eta = 10f64.max(n.sqrt());
    for cone in &problem.cones {
        let op: f64 = cone
            .terms
            .iter()
            .map(|t| 2.0 * t.coef.abs() * cone.bases[t.base].norm())
            .sum();
        eta = eta.max(cone.constant.norm()).max(op);
    }
    (xi, eta)
}

/// Solves the problem; infeasibility and stalls are reported through [`SdpStatus`].
pub fn solve(problem: &SdpProblem, options: &SdpOptions) -> Result<SdpSolution> {
    problem.validate()?;
    let n = problem.order;
    let n_y = problem.n_y();
    let k = problem.cones.len();
    let b = if options.mode == SdpMode::Feasibility {
        vec![0.0; n_y]
    } else {
        problem.objective_vector()
    };
    let (xi, eta) = initial_scale(problem, &b);
    let eye = DMatrix::<f64>::identity(n, n);
    let mut x: Vec<DMatrix<f64>> = vec![&eye * xi; k];
    let mut s: Vec<DMatrix<f64>> = vec![&eye * eta; k];
    let mut y = vec![0.0; n_y];
    let b_norm = norm(&b);
    let c_norm = problem
        .cones
        .iter()
        .map(|c| c.constant.norm_squared())
        .sum::<f64>()
        .sqrt();
    let total_order = (n * k) as f64;

    let mut status = SdpStatus::Stalled;
    let mut iterations = 0;
    let mut rel_p = f64::INFINITY;
    let mut rel_d = f64::INFINITY;
    let mut pobj = 0.0;
    let mut dobj = 0.0;
    let mut tiny_steps = 0;

    for iter in 0..=options.max_iterations {
        iterations = iter;
        let aty = problem.adjoint(&y);
        if options.mode == SdpMode::Feasibility
            && problem
                .cones
                .iter()
                .zip(&aty)
                .all(|(c, a)| is_positive_definite(&(&c.constant - a)))
        {
            status = SdpStatus::Feasible;
            break;
        }
        let rd: Vec<DMatrix<f64>> = (0..k)
            .map(|i| &problem.cones[i].constant - &s[i] - &aty[i])
            .collect();
        let ax = problem.forward(&x);
        let rp: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        pobj = problem
            .cones
            .iter()
            .zip(&x)
            .map(|(c, xk)| inner(&c.constant, xk))
            .sum();
        dobj = b.iter().zip(&y).map(|(bi, yi)| bi * yi).sum();
        let gap: f64 = x.iter().zip(&s).map(|(xk, sk)| inner(xk, sk)).sum();
        let mu = gap / total_order;
        rel_p = norm(&rp) / (1.0 + b_norm);
        rel_d = rd.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt() / (1.0 + c_norm);
        let rel_gap = (pobj - dobj).abs().max(gap) / (1.0 + pobj.abs() + dobj.abs());
        log::debug!(
            "sdp iter {iter:3}: pobj {pobj:+.6e} dobj {dobj:+.6e} rp {rel_p:.1e} rd {rel_d:.1e} gap {rel_gap:.1e}"
        );
        if options.mode == SdpMode::Optimize
            && rel_p < options.tolerance
            && rel_d < options.tolerance
            && rel_gap < options.tolerance
        {
            status = SdpStatus::Optimal;
            break;
        }
        if iter >= 5 && infeasibility_certificate(problem, &x, pobj, &ax, c_norm) {
            status = SdpStatus::Infeasible;
            break;
        }
        if iter == options.max_iterations || tiny_steps >= 5 {
            break;
        }

        // Loss of definiteness or of the Schur factor near convergence ends the
        // run; the caller judges the last iterate by its residuals.
        let scalings = match x.iter().zip(&s).map(|(xk, sk)| nt_scaling(xk, sk)).collect::<Result<Vec<_>>>() {
            Ok(sc) => sc,
            Err(e) => {
                log::debug!("sdp iter {iter}: {e}; returning the current iterate");
                break;
            }
        };
        let factor = match SchurFactor::new(problem.schur(&scalings), n_y) {
            Ok(f) => f,
            Err(e) => {
                log::debug!("sdp iter {iter}: {e}; returning the current iterate");
                break;
            }
        };

        let direction = |rc: &[DMatrix<f64>]| {
            let mixed: Vec<DMatrix<f64>> = (0..k)
                .map(|i| &rc[i] - &scalings[i].w * &rd[i] * &scalings[i].w)
                .collect();
            let a_mixed = problem.forward(&mixed);
            let rhs: Vec<f64> = rp.iter().zip(&a_mixed).map(|(r, a)| r - a).collect();
            let dy = factor.solve(&rhs);
            let a_dy = problem.adjoint(&dy);
            let ds: Vec<DMatrix<f64>> = (0..k).map(|i| &rd[i] - &a_dy[i]).collect();
            let dx: Vec<DMatrix<f64>> = (0..k)
                .map(|i| &rc[i] - &scalings[i].w * &ds[i] * &scalings[i].w)
                .collect();
            (dx, dy, ds)
        };
        let steps = |dx: &[DMatrix<f64>], ds: &[DMatrix<f64>]| {
            let ap = x.iter().zip(dx).map(|(a, d)| max_step(a, d)).fold(1.0, f64::min);
            let ad = s.iter().zip(ds).map(|(a, d)| max_step(a, d)).fold(1.0, f64::min);
            (ap, ad)
        };

        // Predictor: affine-scaling direction.
        let rc_aff: Vec<DMatrix<f64>> = x.iter().map(|xk| -xk).collect();
        let (dx_a, _, ds_a) = direction(&rc_aff);
        let (ap, ad) = steps(&dx_a, &ds_a);
        let gap_aff: f64 = (0..k)
            .map(|i| inner(&(&x[i] + &dx_a[i] * ap), &(&s[i] + &ds_a[i] * ad)))
            .sum();
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);

        // Corrector with second-order term.
        let rc: Vec<DMatrix<f64>> = (0..k)
            .map(|i| {
                let sc = &scalings[i];
                let dxt = &sc.g_inv * &dx_a[i] * sc.g_inv.transpose();
                let dst = sc.g.transpose() * &ds_a[i] * &sc.g;
                let prod = &dxt * &dst;
                let mut t = DMatrix::zeros(n, n);
                for q in 0..n {
                    for p in 0..n {
                        let mut rhs = -0.5 * (prod[(p, q)] + prod[(q, p)]);
                        if p == q {
                            rhs += sigma * mu - sc.d[p] * sc.d[p];
                        }
                        t[(p, q)] = 2.0 * rhs / (sc.d[p] + sc.d[q]);
                    }
                }
                &sc.g * t * sc.g.transpose()
            })
            .collect();
        let (dx, dy, ds) = direction(&rc);
        let (ap, ad) = steps(&dx, &ds);
        let ap = (options.step_fraction * ap).min(1.0);
        let ad = (options.step_fraction * ad).min(1.0);
        if ap.max(ad) < 1e-8 {
            tiny_steps += 1;
        } else {
            tiny_steps = 0;
        }
        for i in 0..k {
            x[i] += &dx[i] * ap;
            s[i] += &ds[i] * ad;
            x[i] = crate::linalg::sym(&x[i]);
            s[i] = crate::linalg::sym(&s[i]);
        }
        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi += ad * di;
        }
    }

    let len = svec_len(n);
    let variables: Vec<DMatrix<f64>> = (0..problem.n_vars)
        .map(|v| smat(&y[v * len..(v + 1) * len], n))
        .collect();
    let aty = problem.adjoint(&y);
    let min_slack_eigenvalue = problem
        .cones
        .iter()
        .zip(&aty)
        .map(|(c, a)| crate::linalg::lambda_min(&(&c.constant - a)))
        .fold(f64::INFINITY, f64::min);
    Ok(SdpSolution {
        status,
        variables,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations,
        primal_residual: rel_p,
        dual_residual: rel_d,
        min_slack_eigenvalue,
    })
}

/// A normalised primal iterate with `⟨C, X⟩ < 0` and `𝒜(X) ≈ 0` proves that no `P` satisfies the cones.
fn infeasibility_certificate(
    problem: &SdpProblem,
    x: &[DMatrix<f64>],
    cx: f64,
    ax: &[f64],
    c_norm: f64,
) -> bool {
    let trace: f64 = x.iter().map(|m| m.trace()).sum();
    if !(trace > 0.0) || cx >= 0.0 {
        return false;
    }
    let cx_hat = cx / trace;
    let ax_hat = norm(ax) / trace;
    let op_scale: f64 = problem
        .cones
        .iter()
        .flat_map(|c| c.terms.iter().map(move |t| t.coef.abs() * c.bases[t.base].norm()))
        .fold(0.0, f64::max);
    -cx_hat > 1e-12 * (1.0 + c_norm) && ax_hat * (1.0 + op_scale) < 1e-7 * (-cx_hat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cone(constant: f64, coef: f64) -> SdpCone {
        SdpCone {
            constant: DMatrix::from_element(1, 1, constant),
            bases: vec![DMatrix::from_element(1, 1, 0.5)],
            terms: vec![SdpTerm {
                var: 0,
                base: 0,
                coef,
            }],
        }
    }

    #[test]
    fn svec_pairing_matches_trace_inner_product() {
        let y = [1.0, 2.0, 3.0];
        let p = smat(&y, 2);
        let m = DMatrix::from_row_slice(2, 2, &[0.3, -0.7, 0.4, 1.1]);
        let mut v = vec![0.0; 3];
        svec_dual(&m, &mut v, 1.0);
        let lhs: f64 = y.iter().zip(&v).map(|(a, b)| a * b).sum();
        assert!((lhs - inner(&p, &m)).abs() < 1e-14);
    }

    #[test]
    fn schur_matches_explicit_constraints() {
        let n = 2;
        let f = DMatrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -0.5]);
        let h = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, -0.4, 0.7]);
        let cone = SdpCone {
            constant: DMatrix::identity(2, 2),
            bases: vec![f.clone(), h.clone()],
            terms: vec![
                SdpTerm { var: 0, base: 0, coef: 1.5 },
                SdpTerm { var: 1, base: 1, coef: -0.5 },
                SdpTerm { var: 1, base: 0, coef: 2.0 },
            ],
        };
        let problem = SdpProblem {
            order: n,
            n_vars: 2,
            objective: vec![DMatrix::zeros(2, 2); 2],
            cones: vec![cone],
        };
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.8]);
        let sc = Scaling {
            w: w.clone(),
            g: DMatrix::identity(2, 2),
            g_inv: DMatrix::identity(2, 2),
            d: DVector::from_element(2, 1.0),
        };
        let m = problem.schur(&[sc]);
        let dim = problem.n_y();
        let basis = |i: usize| {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            problem.adjoint(&e).remove(0)
        };
        for j in 0..dim {
            let aj = basis(j);
            let waw = &w * &aj * &w;
            let col = problem.forward(&[waw]);
            for i in j..dim {
                assert!(
                    (m[j * dim + i] - col[i]).abs() < 1e-12,
                    "entry ({i}, {j}): {} vs {}",
                    m[j * dim + i],
                    col[i]
                );
            }
        }
    }

    #[test]
    fn scalar_trace_minimisation() {
        // maximise −p subject to p ≥ 2 and 5 − p ≥ 0.
        let problem = SdpProblem {
            order: 1,
            n_vars: 1,
            objective: vec![DMatrix::from_element(1, 1, -1.0)],
            cones: vec![scalar_cone(-2.0, -1.0), scalar_cone(5.0, 1.0)],
        };
        let sol = solve(&problem, &SdpOptions::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.variables[0][(0, 0)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn scalar_infeasible() {
        // p ≥ 3 and p ≤ 1.
        let problem = SdpProblem {
            order: 1,
            n_vars: 1,
            objective: vec![DMatrix::zeros(1, 1)],
            cones: vec![scalar_cone(-3.0, -1.0), scalar_cone(1.0, 1.0)],
        };
        let options = SdpOptions {
            mode: SdpMode::Feasibility,
            ..Default::default()
        };
        let sol = solve(&problem, &options).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }
}
