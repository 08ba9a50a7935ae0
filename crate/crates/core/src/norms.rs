//! Hankel and H∞ norms of frozen systems and their suprema over parameter sets.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gramians::exact_gramians;
use crate::linalg::{self, CMatrix};
use crate::model::{AffineLpvModel, LtiRealization, ParameterBox, TimeKind};

pub const DEFAULT_HINF_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_SAMPLES: usize = 200;
/// Largest parameter count for which dense grids are allowed.
pub const MAX_GRID_PARAMS: usize = 3;

/// `√λ_max(PQ)`; the feedthrough does not enter.
pub fn hankel_norm(sys: &LtiRealization) -> Result<f64> {
    if sys.n_states() == 0 {
        return Ok(0.0);
    }
    let g = exact_gramians(sys)?;
    Ok(linalg::lambda_max_product(&g.p, &g.q).sqrt())
}

fn sigma_at(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>, w: f64) -> Option<(f64, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Some((linalg::spectral_norm(d), linalg::spectral_norm(d)));
    }
    let mut shifted = -linalg::to_complex(a);
    for i in 0..n {
        shifted[(i, i)] += Complex64::new(0.0, w);
    }
    let x = linalg::solve_complex(&shifted, &linalg::to_complex(b))?;
    let h = linalg::to_complex(d) + linalg::to_complex(c) * &x;
    let scale = linalg::spectral_norm(c) * linalg::spectral_norm_complex(&x) + linalg::spectral_norm(d);
    Some((linalg::spectral_norm_complex(&h), scale))
}

/// Continuous-time system with the same H∞ norm as a discrete one (bilinear map).
fn bilinear(sys: &LtiRealization) -> Result<LtiRealization> {
    let n = sys.n_states();
    let eye = DMatrix::<f64>::identity(n, n);
    let inv = (&sys.a + &eye)
        .try_inverse()
        .ok_or_else(|| Error::Singular("A + I is singular in the bilinear map".into()))?;
    let s2 = std::f64::consts::SQRT_2;
    LtiRealization::continuous(
        &inv * (&sys.a - &eye),
        &inv * &sys.b * s2,
        &sys.c * &inv * s2,
        &sys.d - &sys.c * &inv * &sys.b,
    )
}

/// Candidate frequencies: zero, a log sweep around the spectrum, and pole magnitudes.
fn probe_frequencies(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eigs = linalg::eigenvalues(a)?;
    let mags: Vec<f64> = eigs.iter().map(|l| l.norm()).filter(|m| *m > 0.0).collect();
    let lo = mags.iter().copied().fold(f64::INFINITY, f64::min).min(1.0) * 0.1;
    let hi = mags.iter().copied().fold(0.0, f64::max).max(1.0) * 10.0;
    let mut w = vec![0.0];
    w.extend(log_grid(lo, hi, 80));
    w.extend(mags);
    w.extend(eigs.iter().map(|l| l.im.abs()).filter(|v| *v > 0.0));
    Ok(w)
}

/// `count` logarithmically spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Hamiltonian whose imaginary eigenvalues are the frequencies where `γ` is a singular value.
fn hamiltonian(sys: &LtiRealization, gamma: f64) -> Option<DMatrix<f64>> {
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let n = a.nrows();
    let m = b.ncols();
    let q = c.nrows();
    let r = DMatrix::<f64>::identity(m, m) * (gamma * gamma) - d.transpose() * d;
    let r_inv = r.try_inverse()?;
    let ae = a + b * &r_inv * d.transpose() * c;
    let top_right = b * &r_inv * b.transpose();
    let bottom_left = -(c.transpose() * (DMatrix::identity(q, q) + d * &r_inv * d.transpose()) * c);
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&ae);
    h.view_mut((0, n), (n, n)).copy_from(&top_right);
    h.view_mut((n, 0), (n, n)).copy_from(&bottom_left);
    h.view_mut((n, n), (n, n)).copy_from(&(-ae.transpose()));
    Some(h)
}

/// H∞ norm to relative accuracy `rel_tol`: a frequency-sweep lower bound refined
/// by imaginary-axis eigenvalue tests of the Hamiltonian at `γ(1 + 2 rel_tol)`.
pub fn hinf_norm(sys: &LtiRealization, rel_tol: f64) -> Result<f64> {
    sys.ensure_stable()?;
    let sys = match sys.time {
        TimeKind::Continuous => sys.clone(),
        TimeKind::Discrete { .. } => bilinear(sys)?,
    };
    let d_norm = linalg::spectral_norm(&sys.d);
    if sys.n_states() == 0 {
        return Ok(d_norm);
    }
    let (a, b, c, d) = (&sys.a, &sys.b, &sys.c, &sys.d);
    let mut lower = d_norm;
    let mut best_w = f64::INFINITY;
    let mut scale = d_norm;
    for w in probe_frequencies(a)? {
        let (s, sc) = sigma_at(a, b, c, d, w)
            .ok_or_else(|| Error::Singular(format!("frequency response singular at ω = {w}")))?;
        scale = scale.max(sc);
        if s > lower {
            lower = s;
            best_w = w;
        }
    }
    if lower <= 1e-10 * scale || scale == 0.0 {
        return Ok(lower);
    }
    log::trace!("H∞ sweep bound {lower:.6e} at ω = {best_w:.3e}");
    for _ in 0..40 {
        let gamma = lower * (1.0 + 2.0 * rel_tol);
        let Some(h) = hamiltonian(&sys, gamma) else {
            break;
        };
        let eigs = linalg::eigenvalues(&h)?;
        let h_scale = h.norm().max(1.0);
        let mut freqs: Vec<f64> = eigs
            .iter()
            .filter(|l| l.re.abs() <= 1e-7 * h_scale.max(l.norm()) && l.im >= 0.0)
            .map(|l| l.im)
            .collect();
        if freqs.is_empty() {
            break;
        }
        freqs.sort_by(f64::total_cmp);
        let mut candidates = freqs.clone();
        candidates.extend(freqs.windows(2).map(|p| 0.5 * (p[0] + p[1])));
        candidates.extend(freqs.windows(2).map(|p| (p[0] * p[1]).max(0.0).sqrt()));
        let previous = lower;
        for w in candidates {
            if let Some((s, _)) = sigma_at(a, b, c, d, w) {
                lower = lower.max(s);
            }
        }
        if lower <= previous * (1.0 + 1e-3 * rel_tol) {
            break;
        }
    }
    Ok(lower)
}

/// Maximum of `σ_max(H(jω))` over the supplied frequencies.
pub fn hinf_on_grid<F>(response: F, freqs: &[f64]) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Option<CMatrix>,
{
    let mut best = (0.0, 0.0);
    for &w in freqs {
        let h = response(w)
            .ok_or_else(|| Error::Singular(format!("frequency response singular at ω = {w}")))?;
        let s = linalg::spectral_norm_complex(&h);
        if s > best.0 {
            best = (s, w);
        }
    }
    Ok(best)
}

/// Default frequency set for products of sensitivity systems: zero plus 400
/// log-spaced points in `[1e-3, 1e3]` rad/s.
pub fn product_grid() -> Vec<f64> {
    let mut w = vec![0.0];
    w.extend(log_grid(1e-3, 1e3, 400));
    w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EvalSet {
    Vertices,
    VerticesAndSamples { count: usize, seed: u64 },
    /// Tensor grid with `per_axis` points per coordinate; only for small ℓ.
    Grid { per_axis: usize },
    Points { points: Vec<Vec<f64>> },
}

impl Default for EvalSet {
    fn default() -> Self {
        EvalSet::VerticesAndSamples {
            count: DEFAULT_SAMPLES,
            seed: 0,
        }
    }
}

impl EvalSet {
    pub fn points(&self, theta_box: &ParameterBox) -> Result<Vec<Vec<f64>>> {
        let pts = match self {
            EvalSet::Vertices => theta_box.vertices()?,
            EvalSet::VerticesAndSamples { count, seed } => {
                let mut v = theta_box.vertices()?;
                v.extend(theta_box.sample(*count, *seed));
                v
            }
            EvalSet::Grid { per_axis } => {
                let l = theta_box.n_params();
                if l > MAX_GRID_PARAMS {
                    return Err(Error::Config(format!(
                        "dense grids are limited to {MAX_GRID_PARAMS} parameters"
                    )));
                }
                if *per_axis < 2 && l > 0 {
                    return Err(Error::Config("grid needs at least two points per axis".into()));
                }
                let axis = |i: usize, k: usize| {
                    let (lo, hi) = (theta_box.lower()[i], theta_box.upper()[i]);
                    lo + (hi - lo) * k as f64 / (*per_axis - 1) as f64
                };
                let total = per_axis.pow(l as u32);
                (0..total)
                    .map(|mut idx| {
                        let mut p = vec![0.0; l];
                        for i in (0..l).rev() {
                            p[i] = axis(i, idx % per_axis);
                            idx /= per_axis;
                        }
                        p
                    })
                    .collect()
            }
            EvalSet::Points { points } => {
                for p in points {
                    theta_box.check(p)?;
                }
                points.clone()
            }
        };
        if pts.is_empty() {
            return Err(Error::Config("evaluation set is empty".into()));
        }
        Ok(pts)
    }

    pub fn describe(&self) -> String {
        match self {
            EvalSet::Vertices => "vertices".into(),
            EvalSet::VerticesAndSamples { count, seed } => {
                format!("vertices + {count} Latin-hypercube samples (seed {seed})")
            }
            EvalSet::Grid { per_axis } => format!("tensor grid, {per_axis} points per axis"),
            EvalSet::Points { points } => format!("{} explicit points", points.len()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Hankel,
    Hinf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametricNormResult {
    pub value: f64,
    pub argmax_theta: Vec<f64>,
    pub evaluation_set: String,
    pub points: usize,
}

pub fn pointwise_norm(sys: &LtiRealization, which: NormKind) -> Result<f64> {
    match which {
        NormKind::Hankel => hankel_norm(sys),
        NormKind::Hinf => hinf_norm(sys, DEFAULT_HINF_TOLERANCE),
    }
}

/// Supremum of a pointwise norm over explicit parameter points.
pub fn p_norm_at(model: &AffineLpvModel, which: NormKind, points: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    if points.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let values = points
        .par_iter()
        .map(|theta| pointwise_norm(&model.evaluate_at(theta)?, which))
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    Ok((values[best], points[best].clone()))
}

/// `max_{θ ∈ eval_set}` of the Hankel or H∞ norm, with its argmax.
pub fn p_norm(model: &AffineLpvModel, which: NormKind, eval_set: &EvalSet) -> Result<ParametricNormResult> {
    let points = eval_set.points(model.theta_box())?;
    let (value, argmax_theta) = p_norm_at(model, which, &points)?;
    Ok(ParametricNormResult {
        value,
        argmax_theta,
        evaluation_set: eval_set.describe(),
        points: points.len(),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelativeError {
    pub value: f64,
    pub error_norm: ParametricNormResult,
    pub reference_norm: ParametricNormResult,
}

/// `p∞,∞(Σ − Σ_r) / p∞,∞(Σ)` over the evaluation set.
pub fn relative_pinf_error(
    model: &AffineLpvModel,
    reduced: &AffineLpvModel,
    eval_set: &EvalSet,
) -> Result<RelativeError> {
    let error = model.difference(reduced)?;
    let error_norm = p_norm(&error, NormKind::Hinf, eval_set)?;
    let reference_norm = p_norm(model, NormKind::Hinf, eval_set)?;
    if reference_norm.value == 0.0 {
        return Err(Error::Degenerate("reference model has zero p∞,∞ norm".into()));
    }
    Ok(RelativeError {
        value: error_norm.value / reference_norm.value,
        error_norm,
        reference_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lti(a: &[f64], b: &[f64], c: &[f64], d: &[f64], n: usize, m: usize, q: usize) -> LtiRealization {
        LtiRealization::continuous(
            DMatrix::from_row_slice(n, n, a),
            DMatrix::from_row_slice(n, m, b),
            DMatrix::from_row_slice(q, n, c),
            DMatrix::from_row_slice(q, m, d),
        )
        .unwrap()
    }

    #[test]
    fn scalar_norms() {
        let sys = lti(&[-1.0], &[1.0], &[1.0], &[0.0], 1, 1, 1);
        assert!((hankel_norm(&sys).unwrap() - 0.5).abs() < 1e-14);
        assert!((hinf_norm(&sys, 1e-4).unwrap() - 1.0).abs() < 1e-12);
        let with_d = lti(&[-1.0], &[1.0], &[1.0], &[7.0], 1, 1, 1);
        assert!((hankel_norm(&with_d).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn static_gain() {
        let sys = LtiRealization::continuous(
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 1),
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        assert_eq!(hinf_norm(&sys, 1e-4).unwrap(), 3.0);
    }

    #[test]
    fn resonant_peak_matches_dense_grid() {
        // ω_n = 1, ζ = 0.05, plus feedthrough to exercise the D terms.
        let sys = lti(&[0.0, 1.0, -1.0, -0.1], &[0.0, 1.0], &[1.0, 0.0], &[0.2], 2, 1, 1);
        let h = hinf_norm(&sys, 1e-4).unwrap();
        let grid = log_grid(1e-2, 1e2, 1_000_000);
        let (oracle, _) = hinf_on_grid(
            |w| linalg::frequency_response(&sys.a, &sys.b, &sys.c, &sys.d, Complex64::new(0.0, w)),
            &grid,
        )
        .unwrap();
        assert!((h - oracle).abs() <= 1e-4 * oracle, "{h} vs {oracle}");
    }

    #[test]
    fn balanced_system_hankel_values() {
        // Symmetric balanced realization: C = Bᵀ and a_ij = −b_i b_j / (σ_i + σ_j) give P = Q = diag(σ).
        let sigma = [2.0, 1.0];
        let b = [1.0, 0.5];
        let a = DMatrix::from_fn(2, 2, |i, j| -b[i] * b[j] / (sigma[i] + sigma[j]));
        let sys = LtiRealization::continuous(
            a,
            DMatrix::from_row_slice(2, 1, &b),
            DMatrix::from_row_slice(1, 2, &b),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let g = exact_gramians(&sys).unwrap();
        assert!((g.p - DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&sigma))).norm() < 1e-12);
        assert!((hankel_norm(&sys).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_norm_via_bilinear_map() {
        let sys = LtiRealization::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            TimeKind::Discrete { step: 1.0 },
        )
        .unwrap();
        // Peak at z = 1: 1 / (1 − 0.5).
        assert!((hinf_norm(&sys, 1e-6).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn grid_eval_set_layout() {
        let pts = EvalSet::Grid { per_axis: 3 }
            .points(&ParameterBox::unit(2))
            .unwrap();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[1], vec![0.0, 0.5]);
        assert!(EvalSet::Grid { per_axis: 3 }.points(&ParameterBox::unit(4)).is_err());
    }
}
